#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dgsan/cli.hpp"
#include "dgsan/dgsan.hpp"
#include "dgsan/divergences.hpp"
#include "dgsan/models.hpp"
#include "dgsan/rng.hpp"
#include "dgsan/tensor.hpp"

namespace dgsan::cli {

namespace {

constexpr double kIdentityTol = 1e-10;
constexpr double kStrictMargin = 1e-9;
constexpr double kNormalizeTol = 1e-12;
constexpr double kDerivativeTol = 1e-8;
constexpr double kGradTol = 1e-4;

class Suite {
 public:
  Suite(std::string name, std::uint64_t seed, int dim, const std::function<void(const CheckRecord&)>& sink)
      : seed_(seed), dim_(dim), sink_(sink) {
    summary_.suite = std::move(name);
  }

  int dim() const { return dim_; }

  /// Seed for check `index` of stream `stream`; an Rng built from it
  /// regenerates that check's instance.
  std::uint64_t check_seed(std::string_view stream, std::uint64_t index) const {
    return mix64(split_rng(seed_, stream)() ^ mix64(index + 1));
  }

  /// `severity` orders records for "worst": larger is worse.
  void record(std::string theorem, std::string f_name, std::uint64_t seed, double value, bool pass,
              double severity) {
    CheckRecord r{std::move(theorem), std::move(f_name), dim_, seed, value, pass};
    ++summary_.checks;
    if (!pass) {
      ++summary_.failures;
      if (!summary_.first_failure) summary_.first_failure = r;
    }
    if (!summary_.worst || severity > worst_severity_) {
      summary_.worst = r;
      worst_severity_ = severity;
    }
    if (sink_) sink_(r);
  }

  void residual(std::string theorem, std::string f_name, std::uint64_t seed, double value, double tol) {
    record(std::move(theorem), std::move(f_name), seed, value, std::isfinite(value) && value < tol, value);
  }

  void decrease(std::string theorem, std::string f_name, std::uint64_t seed, double delta) {
    record(std::move(theorem), std::move(f_name), seed, delta, delta > kStrictMargin, -delta);
  }

  SuiteSummary finish() && { return std::move(summary_); }

 private:
  std::uint64_t seed_;
  int dim_;
  const std::function<void(const CheckRecord&)>& sink_;
  SuiteSummary summary_;
  double worst_severity_ = 0.0;
};

double log_uniform(Rng& rng, double lo, double hi) {
  return std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * uniform01(rng));
}

void theorem1(Suite& s, int trials) {
  for (int i = 0; i < trials; ++i) {
    const auto seed = s.check_seed("theorem1", i);
    Rng rng(seed);
    s.residual("theorem1", "js", seed, verify_theorem1(random_triple(s.dim(), rng)).residual(), kIdentityTol);
  }
}

void theorem2(Suite& s, int trials) {
  for (int i = 0; i < trials; ++i) {
    const auto seed = s.check_seed("theorem2", i);
    Rng rng(seed);
    const FiniteTripled t = random_sandwich_triple(s.dim(), rng);
    const double delta = js_divergence(t.p, t.q_old) - js_divergence(t.p, t.q_theta);
    s.decrease("theorem2", "js", seed, check_betweenness(t).holds ? delta : -1.0);
  }
}

void theorem3(Suite& s, int trials) {
  for (const auto& f : builtin_generators<double>())
    for (int i = 0; i < trials; ++i) {
      const auto seed = s.check_seed("theorem3/" + f.name, i);
      Rng rng(seed);
      s.residual("theorem3", f.name, seed, verify_theorem3(f, random_triple(s.dim(), rng)), kIdentityTol);
    }
}

void theorem4(Suite& s, int trials) {
  for (const auto& f : builtin_generators<double>()) {
    for (int i = 0; i < trials; ++i) {
      const auto seed = s.check_seed("theorem4/" + f.name, i);
      Rng rng(seed);
      const auto r = verify_monotone_decrease(f, random_sandwich_triple(s.dim(), rng));
      s.decrease("theorem4", f.name, seed, r.hypothesis_held ? r.delta : -1.0);
    }
    // Dropping the sandwich hypothesis must allow an increase.
    const auto seed = s.check_seed("theorem4-necessity/" + f.name, 0);
    Rng rng(seed);
    const auto found = find_increase_counterexample(f, s.dim(), rng, std::max(trials, 1000));
    const double delta = found ? verify_monotone_decrease(f, *found).delta : 0.0;
    s.record("theorem4-necessity", f.name, seed, delta, found.has_value(), found ? -HUGE_VAL : HUGE_VAL);
  }
}

void lemmas(Suite& s, int trials) {
  const auto js = f_js<double>();
  for (int i = 0; i < trials; ++i) {
    const auto seed = s.check_seed("lemmas", i);
    Rng rng(seed);
    for (const auto& f : {js, f_kl<double>()})
      s.residual("fenchel", f.name, seed, fenchel_identity_residual(f, log_uniform(rng, 0.01, 100.0)), kIdentityTol);

    const double x = 0.05 + 19.95 * uniform01(rng), y = 0.05 + 19.95 * uniform01(rng);
    s.residual("inverse-symmetry", js.name, seed, bregman_inverse_symmetry_residual(js, x, y), kIdentityTol);

    const FiniteTripled t = random_triple(s.dim(), rng);
    s.residual("inverse-symmetry-expectation", js.name, seed,
               bregman_expectation_symmetry_residual(js, t.p, t.q_old, t.q_theta), kIdentityTol);

    for (const auto& f : builtin_generators<double>()) {
      const auto g = normalize_f(f);
      s.residual("normalize-f", f.name, seed, std::abs(f_divergence(g, t.p, t.q_old) - f_divergence(f, t.p, t.q_old)),
                 kNormalizeTol);
    }
  }
  for (const auto& f : builtin_generators<double>()) {
    const auto g = normalize_f(f);
    constexpr double h = 1e-5;
    s.residual("normalize-f-derivative", f.name, 0, std::abs((g.f(1.0 + h) - g.f(1.0 - h)) / (2.0 * h)),
               kDerivativeTol);
  }
}

// Reduces an op's output to a scalar through fixed random weights so every
// output coordinate contributes a distinct gradient.
ad::Var weighted_sum(const ad::Var& y, const ad::Matrix& w) { return ad::sum(ad::mul(y, ad::constant(w))); }

ad::Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  ad::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * (2.0 * uniform01(rng) - 1.0);
  return m;
}

void gradcheck(Suite& s, int trials) {
  using ad::Var;
  const int n = std::min(trials, 20);
  for (int i = 0; i < n; ++i) {
    const auto seed = s.check_seed("gradcheck", i);
    Rng rng(seed);
    const Var a = ad::parameter(random_matrix(3, 4, rng));
    const Var b = ad::parameter(random_matrix(3, 4, rng));
    const Var c = ad::parameter(random_matrix(4, 2, rng));
    const Var row = ad::parameter(random_matrix(1, 4, rng));
    const ad::Matrix w34 = random_matrix(3, 4, rng), w32 = random_matrix(3, 2, rng), w38 = random_matrix(3, 8, rng),
                     w24 = random_matrix(2, 4, rng), w44 = random_matrix(4, 4, rng);
    const std::vector<int> ids = {2, 0, 3};
    const std::vector<int> rows = {1, 2, 0, 1};
    const std::vector<Var> ab = {a, b};

    const std::vector<std::pair<std::string, std::function<Var()>>> cases = {
        {"matmul", [&] { return weighted_sum(ad::matmul(a, c), w32); }},
        {"add", [&] { return weighted_sum(a + b, w34); }},
        {"add-broadcast", [&] { return weighted_sum(a + row, w34); }},
        {"sub", [&] { return weighted_sum(a - b, w34); }},
        {"mul", [&] { return weighted_sum(a * b, w34); }},
        {"concat", [&] { return weighted_sum(ad::concat(ab, 1), w38); }},
        {"slice", [&] { return weighted_sum(ad::slice(a, 0, 1, 2), w24); }},
        {"embedding_lookup", [&] { return weighted_sum(ad::embedding_lookup(b, rows), w44); }},
        {"take_rows", [&] { return weighted_sum(ad::take_rows(a, rows), w44); }},
        {"tanh", [&] { return weighted_sum(ad::tanh(a), w34); }},
        {"sigmoid", [&] { return weighted_sum(ad::sigmoid(a), w34); }},
        {"softplus", [&] { return weighted_sum(ad::softplus(a), w34); }},
        {"log_softmax", [&] { return weighted_sum(ad::log_softmax(a, 1), w34); }},
        {"log_softmax-axis0", [&] { return weighted_sum(ad::log_softmax(a, 0), w34); }},
        {"sum", [&] { return ad::sum(a * a); }},
        {"mean", [&] { return ad::mean(ad::tanh(a)); }},
        {"gather", [&] { return ad::sum(ad::gather(ad::log_softmax(a, 1), ids)); }},
        {"chain", [&] { return weighted_sum(ad::sigmoid(ad::matmul(ad::tanh(a * b), c)) + ad::constant(w32), w32); }},
    };
    for (const auto& [name, build] : cases) {
      const std::vector<Var> params = {a, b, c, row};
      s.residual("gradcheck", name, seed, ad::grad_check(build, params), kGradTol);
    }

    // Recurrent model scored under the full self-adversarial loss.
    RecurrentLMConfig cfg{.vocab_size = 5, .d_emb = 3, .d_h = 2, .init_range = 1.0};
    Rng init = split_rng(seed, "gradcheck.model");
    const RecurrentLM live(cfg, init);
    RecurrentLM old_live(cfg, init);
    const RecurrentLM old = old_live.frozen_copy();
    const std::vector<Sentence> prefixes = {{}, {4}, {1, 3}}, real = {{2, 3}, {4, 0}, {1, 1}};
    const std::vector<Sentence> fake = seq_sample_batch(old, prefixes, 2, 2.0, rng);
    const auto loss = [&] {
      return dgsan_loss(seq_logprob_batch(live, prefixes, real), seq_logprob_batch(old, prefixes, real),
                        seq_logprob_batch(live, prefixes, fake), seq_logprob_batch(old, prefixes, fake));
    };
    s.residual("gradcheck", "dgsan_loss", seed, ad::grad_check(loss, live.parameters()), kGradTol);
  }
}

}  // namespace

std::string to_json_line(const CheckRecord& r) {
  nlohmann::ordered_json j;
  j["theorem"] = r.theorem;
  j["f_name"] = r.f_name;
  j["dim"] = r.dim;
  j["seed"] = r.seed;
  j["residual_or_delta"] = r.residual_or_delta;
  j["pass"] = r.pass;
  return j.dump();
}

const std::vector<std::string>& verify_suites() {
  static const std::vector<std::string> names = {"theorem1", "theorem2", "theorem3",
                                                 "theorem4", "lemmas",   "gradcheck"};
  return names;
}

SuiteSummary run_verify_suite(const std::string& suite, int trials, std::uint64_t seed, int dim,
                              const std::function<void(const CheckRecord&)>& sink) {
  if (trials < 1) throw std::invalid_argument("verify: trials must be >= 1");
  if (dim < 2) throw std::invalid_argument("verify: dim must be >= 2");
  Suite s(suite, seed, dim, sink);
  if (suite == "theorem1") theorem1(s, trials);
  else if (suite == "theorem2") theorem2(s, trials);
  else if (suite == "theorem3") theorem3(s, trials);
  else if (suite == "theorem4") theorem4(s, trials);
  else if (suite == "lemmas") lemmas(s, trials);
  else if (suite == "gradcheck") gradcheck(s, trials);
  else throw std::invalid_argument("unknown verify suite '" + suite + "'");
  return std::move(s).finish();
}

}  // namespace dgsan::cli
