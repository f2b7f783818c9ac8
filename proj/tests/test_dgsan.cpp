#include <doctest.h>

#include <cmath>
#include <limits>

#include "dgsan/dgsan.hpp"
#include "helpers.hpp"

using namespace dgsan;

namespace {

const double kLn2 = std::log(2.0);

ad::Var column(const Eigen::VectorXd& v) { return ad::constant(ad::Matrix(v)); }

Eigen::VectorXd random_logprobs(int n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = -8.0 * uniform01(rng);
  return v;
}

TrainConfig tiny_sequence_config() {
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.iterations = 5;
  cfg.temperature = 2.0;
  cfg.inner_steps = 2;
  cfg.learning_rate = 1e-2;
  cfg.seed = 3;
  return cfg;
}

RecurrentLM tiny_lm(int vocab, std::uint64_t seed) {
  Rng rng(seed);
  return RecurrentLM({.vocab_size = vocab, .d_emb = 4, .d_h = 4}, rng);
}

}  // namespace

TEST_SUITE("dgsan") {

TEST_CASE("loss is 2 ln 2 when the models coincide") {
  Rng rng(1);
  for (int n : {1, 3, 50}) {
    const Eigen::VectorXd r = random_logprobs(n, rng), f = random_logprobs(n + 2, rng);
    const ad::Var loss = dgsan_loss(column(r), column(r), column(f), column(f));
    CHECK(loss.item() == doctest::Approx(2.0 * kLn2).epsilon(1e-15));
    CHECK(dgsan_loss_value(r, r, f, f) == doctest::Approx(2.0 * kLn2).epsilon(1e-15));
  }
  CHECK(2.0 * kLn2 == doctest::Approx(1.386294).epsilon(1e-6));
}

TEST_CASE("loss saturates when the new model separates the batches") {
  Rng rng(2);
  const Eigen::VectorXd r = random_logprobs(4, rng), f = random_logprobs(4, rng);
  const double v = dgsan_loss(column(r.array() + 10.0), column(r), column(f.array() - 10.0), column(f)).item();
  CHECK(v == doctest::Approx(2.0 * std::log1p(std::exp(-10.0))).epsilon(1e-12));
  CHECK(v == doctest::Approx(9.08e-5).epsilon(1e-3));
}

TEST_CASE("loss equals the negated discriminator objective") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::VectorXd nr = random_logprobs(3, rng), orl = random_logprobs(3, rng);
    const Eigen::VectorXd nf = random_logprobs(3, rng), of = random_logprobs(3, rng);
    double want = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double d_real = std::exp(nr(i)) / (std::exp(nr(i)) + std::exp(orl(i)));
      const double d_fake = std::exp(nf(i)) / (std::exp(nf(i)) + std::exp(of(i)));
      want -= (std::log(d_real) + std::log(1.0 - d_fake)) / 3.0;
    }
    CHECK(std::abs(dgsan_loss(column(nr), column(orl), column(nf), column(of)).item() - want) < 1e-12);
    CHECK(std::abs(dgsan_loss_value(nr, orl, nf, of) - want) < 1e-12);
    double via_d = 0.0;
    for (int i = 0; i < 3; ++i)
      via_d -= (std::log(implied_discriminator(nr(i), orl(i))) + std::log(1.0 - implied_discriminator(nf(i), of(i)))) / 3.0;
    CHECK(std::abs(via_d - want) < 1e-12);
  }
}

TEST_CASE("implied discriminator") {
  CHECK(implied_discriminator(-3.0, -3.0) == 0.5);
  CHECK(implied_discriminator(std::log(2.0), 0.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  // Underflows to 0 but stays a probability.
  CHECK(implied_discriminator(-800.0, 0.0) >= 0.0);
  CHECK(implied_discriminator(-800.0, 0.0) < 0.5);
  CHECK(implied_discriminator(0.0, -800.0) <= 1.0);
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const double a = -10.0 * uniform01(rng), b = -10.0 * uniform01(rng);
    const double d = implied_discriminator(a, b);
    CHECK(std::abs(d - std::exp(a) / (std::exp(a) + std::exp(b))) < 1e-12);
    CHECK(d > 0.0);
    CHECK(d < 1.0);
  }
}

TEST_CASE("loss errors") {
  const Eigen::VectorXd one = Eigen::VectorXd::Constant(1, -1.0), two = Eigen::VectorXd::Constant(2, -1.0);
  CHECK_THROWS_AS(dgsan_loss(column(one), column(two), column(one), column(one)), std::invalid_argument);
  CHECK_THROWS_AS(dgsan_loss(ad::constant(ad::Matrix(0, 1)), ad::constant(ad::Matrix(0, 1)), column(one), column(one)),
                  std::invalid_argument);
  ad::Var inf = ad::parameter(ad::Matrix::Constant(1, 1, 0.0));
  inf.mutable_value()(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(dgsan_loss(inf, column(one), column(one), column(one)), NumericDivergence);
}

TEST_CASE("old-model parameters receive no gradient") {
  Rng rng(5);
  TabularDistribution live = TabularDistribution::random(3, rng);
  TabularDistribution old_live = TabularDistribution::random(3, rng);
  const std::vector<int> xr = {0, 1, 2, 2}, xf = {1, 1, 0};
  const ad::Var loss = dgsan_loss(live.log_prob(xr), old_live.log_prob(xr), live.log_prob(xf), old_live.log_prob(xf));
  ad::backward(loss);
  const ad::Matrix& g = old_live.logits().grad();
  CHECK((g.size() == 0 || g.isZero(0.0)));
  CHECK(live.logits().grad().cwiseAbs().maxCoeff() > 0.0);

  const Snapshot<TabularDistribution> snap(live);
  const ad::Var loss2 = dgsan_loss(live.log_prob(xr), snap.model().log_prob(xr), live.log_prob(xf),
                                   snap.model().log_prob(xf));
  ad::backward(loss2);
  CHECK(snap.model().logits().grad().size() == 0);
}

TEST_CASE("at q = q_old the gradient is half the likelihood gradient difference") {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    TabularDistribution q = TabularDistribution::random(3, rng);
    const Snapshot<TabularDistribution> old(q);
    std::vector<int> xr(7), xf(5);
    for (auto& x : xr) x = static_cast<int>(rng() % 3);
    for (auto& x : xf) x = static_cast<int>(rng() % 3);
    ad::backward(dgsan_loss(q.log_prob(xr), old.model().log_prob(xr), q.log_prob(xf), old.model().log_prob(xf)));
    const ad::Matrix analytic = q.logits().grad();

    // Finite differences of (1/2)(mean -ln q(xr) + mean ln q(xf)) around the snapshot point.
    const Eigen::VectorXd theta = q.logits().value().row(0).transpose();
    const auto surrogate = [&](const Eigen::VectorXd& th) {
      const TabularDistribution t(th);
      double v = 0.0;
      for (int x : xr) v -= tabular_logprob(t, x) / static_cast<double>(xr.size());
      for (int x : xf) v += tabular_logprob(t, x) / static_cast<double>(xf.size());
      return 0.5 * v;
    };
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      Eigen::VectorXd up = theta, down = theta;
      up(k) += h;
      down(k) -= h;
      const double fd = (surrogate(up) - surrogate(down)) / (2 * h);
      CHECK(std::abs(fd - analytic(0, k)) < 1e-8);
    }
  }
}

TEST_CASE("config validation") {
  const auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    return c;
  };
  CHECK_NOTHROW(TrainConfig{}.validate());
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.batch_size = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.iterations = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.max_len = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.temperature = 0.0; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.temperature = NAN; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.old_logprob_temperature = -1.0; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.inner_steps = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.learning_rate = 0.0; }).validate(), ConfigError);
  TrainConfig d;
  CHECK(d.iterations == 5);
  CHECK(d.temperature == 2.0);
  CHECK(d.scoring_temperature() == 2.0);
  d.old_logprob_temperature = 1.0;
  CHECK(d.scoring_temperature() == 1.0);
}

TEST_CASE("report lines carry the documented keys") {
  IterationReport r{.phase = "dgsan-tabular", .l = 0, .outer_iter = 2, .step = 150, .loss = 1.25};
  CHECK(to_json_line(r) == R"({"phase":"dgsan-tabular","l":0,"outer_iter":2,"step":150,"loss":1.25})");
  r.js = 0.5;
  r.betweenness_fraction = 1.0;
  CHECK(to_json_line(r) ==
        R"({"phase":"dgsan-tabular","l":0,"outer_iter":2,"step":150,"loss":1.25,"js":0.5,"betweenness_fraction":1.0})");
}

TEST_CASE("a model equal to the data distribution is a fixed point") {
  Rng rng(7);
  TabularDistribution q = TabularDistribution::random(8, rng);
  const Eigen::VectorXd p = q.probs();
  TrainConfig cfg = tabular_defaults();
  cfg.iterations = 10;
  const auto reports = dgsan_tabular(p, q, cfg);
  REQUIRE(reports.size() == 10);
  for (const auto& r : reports) {
    CHECK(std::abs(r.loss - 2.0 * kLn2) < 0.01);
    CHECK(*r.js < 1e-3);
  }
}

TEST_CASE("tabular training approaches a 16-symbol target") {
  Rng rng(8);
  const Eigen::VectorXd p = random_distribution(16, rng);
  TabularDistribution q = TabularDistribution::random(16, rng);
  const double initial = js_divergence(p, q.probs());
  std::vector<IterationReport> seen;
  TrainConfig cfg = tabular_defaults();
  cfg.seed = 9;
  const auto reports = dgsan_tabular(p, q, cfg, [&](const IterationReport& r) { seen.push_back(r); });
  REQUIRE(reports.size() == 40);
  CHECK(seen.size() == 40);
  CHECK(*reports.back().js < 1e-3);
  double prev = initial;
  for (const auto& r : reports) {
    CHECK(r.phase == "dgsan-tabular");
    CHECK(*r.js >= 0.0);
    CHECK(*r.betweenness_fraction >= 0.0);
    CHECK(*r.betweenness_fraction <= 1.0);
    if (*r.betweenness_fraction == 1.0) CHECK(*r.js < prev);
    prev = *r.js;
  }
  CHECK(reports.back().step == 40L * cfg.inner_steps);
  CHECK_THROWS_AS(dgsan_tabular(Eigen::VectorXd::Constant(3, 1.0 / 3), q, cfg), std::invalid_argument);
}

TEST_CASE("same seed gives bitwise-identical reports") {
  const auto run = [](std::uint64_t seed) {
    Rng rng(10);
    const Eigen::VectorXd p = random_distribution(6, rng);
    TabularDistribution q = TabularDistribution::random(6, rng);
    TrainConfig cfg = tabular_defaults();
    cfg.iterations = 5;
    cfg.seed = seed;
    std::string out;
    for (const auto& r : dgsan_tabular(p, q, cfg)) out += to_json_line(r) + "\n";
    return out;
  };
  CHECK(run(1) == run(1));
  CHECK(run(1) != run(2));

  Rng crng(11);
  const TokenizedCorpus corpus = oracle_corpus(testing::three_state_oracle(), 40, crng);
  const auto seq = [&] {
    RecurrentLM m = tiny_lm(corpus.vocab().size(), 12);
    std::string out;
    for (const auto& r : dgsan_sequence(corpus, m, tiny_sequence_config())) out += to_json_line(r) + "\n";
    return out;
  };
  CHECK(seq() == seq());
}

TEST_CASE("sequence loop emits one report per length and outer iteration") {
  Rng crng(13);
  const TokenizedCorpus corpus = oracle_corpus(testing::three_state_oracle(), 40, crng);
  RecurrentLM m = tiny_lm(corpus.vocab().size(), 14);
  std::vector<int> lengths_done;
  SequenceHooks hooks;
  int reported = 0;
  hooks.report = [&](const IterationReport&) { ++reported; };
  hooks.length_done = [&](int l, const RecurrentLM&) { lengths_done.push_back(l); };
  const auto reports = dgsan_sequence(corpus, m, tiny_sequence_config(), hooks);
  REQUIRE(reports.size() == 16);
  CHECK(reported == 16);
  for (int l = 1; l <= 3; ++l)
    for (int o = 0; o < 5; ++o) {
      const auto& r = reports[static_cast<std::size_t>((l - 1) * 5 + o)];
      CHECK(r.phase == "dgsan-seq");
      CHECK(r.l == l);
      CHECK(r.outer_iter == o);
      CHECK(std::isfinite(r.loss));
    }
  CHECK(reports.back().phase == "halt");
  CHECK(reports.back().l == 4);
  CHECK(reports.back().step == 30);
  CHECK(lengths_done == std::vector<int>{1, 2, 3});
}

TEST_CASE("sequence loop stops at the maximum length") {
  Rng crng(15);
  const TokenizedCorpus corpus = oracle_corpus(testing::three_state_oracle(), 40, crng);
  RecurrentLM m = tiny_lm(corpus.vocab().size(), 16);
  TrainConfig cfg = tiny_sequence_config();
  cfg.max_len = 2;
  const auto reports = dgsan_sequence(corpus, m, cfg);
  REQUIRE(reports.size() == 11);
  CHECK(reports.back().phase == "halt");
  CHECK(reports.back().l == 3);
}

TEST_CASE("sequence loop respects the epoch budget") {
  Rng crng(17);
  const TokenizedCorpus corpus = oracle_corpus(testing::three_state_oracle(), 64, crng);
  RecurrentLM m = tiny_lm(corpus.vocab().size(), 18);
  TrainConfig cfg = tiny_sequence_config();
  cfg.batch_size = 16;
  cfg.inner_steps = 3;
  cfg.max_epochs = 1;
  const auto reports = dgsan_sequence(corpus, m, cfg);
  REQUIRE(reports.size() == 2);
  CHECK(reports.back().step == 6);
  for (const auto& r : reports) CHECK(r.phase == "dgsan-seq");
}

TEST_CASE("sequence loop input errors") {
  Rng crng(19);
  const TokenizedCorpus corpus = oracle_corpus(testing::three_state_oracle(), 8, crng);
  RecurrentLM small = tiny_lm(3, 1);
  CHECK_THROWS_AS(dgsan_sequence(corpus, small, tiny_sequence_config()), ConfigError);
  RecurrentLM m = tiny_lm(corpus.vocab().size(), 1);
  TrainConfig cfg = tiny_sequence_config();
  cfg.batch_size = 0;
  CHECK_THROWS_AS(dgsan_sequence(corpus, m, cfg), ConfigError);
  CHECK_THROWS_AS(train_mle(corpus, m, tiny_sequence_config(), 0), ConfigError);
}

TEST_CASE("sequence training lowers the exact divergence to a length-2 oracle") {
  Eigen::VectorXd initial(3), lengths(2);
  initial << 0.6, 0.3, 0.1;
  Eigen::MatrixXd transition(3, 3);
  transition << 0.1, 0.8, 0.1,
                0.3, 0.3, 0.4,
                0.7, 0.2, 0.1;
  lengths << 0.0, 1.0;
  const MarkovOracle oracle(initial, transition, lengths);
  Rng crng(20);
  const TokenizedCorpus corpus = oracle_corpus(oracle, 1000, crng);
  const int V = corpus.vocab().size();
  Rng init(21);
  RecurrentLM m({.vocab_size = V, .d_emb = 16, .d_h = 16}, init);
  const Eigen::VectorXd p = testing::oracle_sequence_distribution(oracle, V, 2);
  CHECK(std::abs(p.sum() - 1.0) < 1e-12);
  const double before = js_divergence(p, sequence_distribution(m, 2));

  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.iterations = 5;
  cfg.max_len = 2;
  cfg.temperature = 2.0;
  cfg.inner_steps = 60;
  cfg.learning_rate = 1e-2;
  cfg.seed = 22;
  const auto reports = dgsan_sequence(corpus, m, cfg);
  const double after = js_divergence(p, sequence_distribution(m, 2));
  MESSAGE("JS before " << before << ", after " << after);
  CHECK(after < before);
  CHECK(after < 0.5 * before);
  CHECK(reports.back().phase == "halt");
}

TEST_CASE("mle baseline reports once per epoch") {
  Rng crng(23);
  const TokenizedCorpus corpus = oracle_corpus(testing::three_state_oracle(), 64, crng);
  RecurrentLM m = tiny_lm(corpus.vocab().size(), 24);
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.learning_rate = 1e-2;
  const auto reports = train_mle(corpus, m, cfg, 6);
  REQUIRE(reports.size() == 6);
  CHECK(reports.back().step == 24);
  CHECK(reports.front().phase == "mle");
  CHECK(reports.back().loss < reports.front().loss);
}

}  // TEST_SUITE
