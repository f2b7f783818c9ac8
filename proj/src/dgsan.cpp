#include "dgsan/dgsan.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace dgsan {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be > 0");
  if (old_logprob_temperature && (!(*old_logprob_temperature > 0.0) || !std::isfinite(*old_logprob_temperature)))
    throw ConfigError("old_logprob_temperature must be > 0");
  if (inner_steps < 1) throw ConfigError("inner_steps must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
}

TrainConfig tabular_defaults() {
  TrainConfig cfg;
  cfg.batch_size = 512;
  cfg.iterations = 40;
  cfg.temperature = 1.0;
  cfg.inner_steps = 50;
  cfg.learning_rate = 5e-3;
  return cfg;
}

std::string to_json_line(const IterationReport& r) {
  nlohmann::ordered_json j;
  j["phase"] = r.phase;
  j["l"] = r.l;
  j["outer_iter"] = r.outer_iter;
  j["step"] = r.step;
  j["loss"] = r.loss;
  if (r.js) j["js"] = *r.js;
  if (r.betweenness_fraction) j["betweenness_fraction"] = *r.betweenness_fraction;
  return j.dump();
}

double implied_discriminator(double logq_new, double logq_old) {
  const double z = logq_new - logq_old;
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

ad::Var dgsan_loss(const ad::Var& logq_new_real, const ad::Var& logq_old_real,
                   const ad::Var& logq_new_fake, const ad::Var& logq_old_fake) {
  if (logq_new_real.size() == 0 || logq_new_fake.size() == 0)
    throw std::invalid_argument("dgsan_loss: empty batch");
  if (logq_new_real.rows() != logq_old_real.rows() || logq_new_real.cols() != logq_old_real.cols() ||
      logq_new_fake.rows() != logq_old_fake.rows() || logq_new_fake.cols() != logq_old_fake.cols())
    throw std::invalid_argument("dgsan_loss: new/old shape mismatch");
  for (const ad::Var* v : {&logq_new_real, &logq_old_real, &logq_new_fake, &logq_old_fake})
    if (!v->value().allFinite()) throw NumericDivergence("dgsan_loss: non-finite log-probability");

  const ad::Var old_real = ad::constant(logq_old_real.value());
  const ad::Var old_fake = ad::constant(logq_old_fake.value());
  return ad::mean(ad::softplus(old_real - logq_new_real)) + ad::mean(ad::softplus(logq_new_fake - old_fake));
}

std::vector<IterationReport> dgsan_tabular(const Eigen::VectorXd& target, TabularDistribution& q,
                                           const TrainConfig& cfg, const ReportSink& sink) {
  if (target.size() != q.size()) throw std::invalid_argument("dgsan_tabular: target/model size mismatch");
  const std::vector<double> weights(target.data(), target.data() + target.size());
  RealSampler<int> real = [weights](std::size_t n, Rng& rng) {
    std::vector<int> xs(n);
    for (auto& x : xs) x = sample_categorical(weights, rng);
    return xs;
  };
  return dgsan_general(real, q, cfg, std::optional<Eigen::VectorXd>(target), sink);
}

namespace {

std::size_t steps_per_epoch(const TokenizedCorpus& corpus, int batch_size) {
  return std::max<std::size_t>(1, corpus.size() / static_cast<std::size_t>(batch_size));
}

}  // namespace

std::vector<IterationReport> dgsan_sequence(const TokenizedCorpus& corpus, RecurrentLM& model,
                                            const TrainConfig& cfg, const SequenceHooks& hooks) {
  cfg.validate();
  if (corpus.size() == 0) throw ConfigError("dgsan_sequence: empty corpus");
  if (model.vocab_size() < corpus.vocab().size())
    throw ConfigError("dgsan_sequence: model vocabulary smaller than corpus vocabulary");

  Rng data_rng = split_rng(cfg.seed, "seq.data");
  Rng fake_rng = split_rng(cfg.seed, "seq.fake");
  const double score_t = cfg.scoring_temperature();
  const auto B = static_cast<std::size_t>(cfg.batch_size);
  const long budget =
      cfg.max_epochs > 0 ? static_cast<long>(cfg.max_epochs * steps_per_epoch(corpus, cfg.batch_size)) : -1;

  Snapshot<RecurrentLM> old(model);
  Adam adam(model.parameters(), {.learning_rate = cfg.learning_rate});
  std::vector<IterationReport> reports;
  const auto emit = [&](const IterationReport& r) {
    if (hooks.report) hooks.report(r);
    reports.push_back(r);
  };

  std::vector<Sentence> prefixes(B), targets(B);
  double last_loss = 2.0 * std::log(2.0);
  for (int l = 1;; ++l) {
    if (l > cfg.max_len || corpus.count_at_least(l) == 0) {
      IterationReport halt;
      halt.phase = "halt";
      halt.l = l;
      halt.step = adam.steps_taken();
      halt.loss = last_loss;
      emit(halt);
      break;
    }
    bool out_of_budget = false;
    for (int outer = 0; outer < cfg.iterations; ++outer) {
      if (budget >= 0 && adam.steps_taken() >= budget) {
        out_of_budget = true;
        break;
      }
      double loss_sum = 0.0;
      for (int s = 0; s < cfg.inner_steps; ++s) {
        for (std::size_t b = 0; b < B; ++b) {
          PrefixSplit split = sample_prefix_split(corpus, l, data_rng);
          prefixes[b] = std::move(split.prefix);
          targets[b] = std::move(split.target);
        }
        const std::vector<Sentence> fakes = seq_sample_batch(old.model(), prefixes, l, cfg.temperature, fake_rng);
        try {
          const ad::Var loss = dgsan_loss(seq_logprob_batch(model, prefixes, targets),
                                          seq_logprob_batch(old.model(), prefixes, targets, score_t),
                                          seq_logprob_batch(model, prefixes, fakes),
                                          seq_logprob_batch(old.model(), prefixes, fakes, score_t));
          ad::backward(loss);
          adam.step();
          loss_sum += loss.item();
        } catch (const NumericDivergence& e) {
          throw NumericDivergence(std::string(e.what()) + " (l " + std::to_string(l) + ", outer iteration " +
                                  std::to_string(outer) + ", step " + std::to_string(s) + ")");
        }
      }
      IterationReport r;
      r.phase = "dgsan-seq";
      r.l = l;
      r.outer_iter = outer;
      r.step = adam.steps_taken();
      r.loss = last_loss = loss_sum / cfg.inner_steps;
      emit(r);
      old = Snapshot<RecurrentLM>(model);
    }
    if (out_of_budget) break;
    if (hooks.length_done) hooks.length_done(l, model);
  }
  return reports;
}

std::vector<IterationReport> train_mle(const TokenizedCorpus& corpus, RecurrentLM& model,
                                       const TrainConfig& cfg, int epochs, const ReportSink& sink) {
  cfg.validate();
  if (corpus.size() == 0) throw ConfigError("train_mle: empty corpus");
  if (epochs < 1) throw ConfigError("train_mle: epochs must be >= 1");

  Rng rng = split_rng(cfg.seed, "mle.batch");
  const auto pick = [&](Rng& r) {
    return std::min(corpus.size() - 1, static_cast<std::size_t>(uniform01(r) * static_cast<double>(corpus.size())));
  };
  Adam adam(model.parameters(), {.learning_rate = cfg.learning_rate});
  const std::size_t steps = steps_per_epoch(corpus, cfg.batch_size);
  std::vector<Sentence> batch(static_cast<std::size_t>(cfg.batch_size));
  std::vector<IterationReport> reports;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      for (auto& x : batch) x = corpus.sentences()[pick(rng)];
      loss_sum += mle_step(model, adam, batch);
    }
    IterationReport r;
    r.phase = "mle";
    r.outer_iter = epoch;
    r.step = adam.steps_taken();
    r.loss = loss_sum / static_cast<double>(steps);
    if (sink) sink(r);
    reports.push_back(r);
  }
  return reports;
}

}  // namespace dgsan
