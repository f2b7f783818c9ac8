#pragma once

// Self-adversarial training of explicit generators.
//
// Each outer iteration freezes the current generator as Q_old and trains
// Q_theta against the implied discriminator D = q_theta / (q_theta + q_old),
// using real samples for the first term of the objective and samples from
// Q_old for the second. No gradient flows through sampling.

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "dgsan/corpus.hpp"
#include "dgsan/divergences.hpp"
#include "dgsan/errors.hpp"
#include "dgsan/models.hpp"
#include "dgsan/optim.hpp"
#include "dgsan/rng.hpp"
#include "dgsan/tensor.hpp"

namespace dgsan {

struct TrainConfig {
  int batch_size = 64;           // B, for both real and fake batches
  int iterations = 5;            // D, outer iterations (per length for sequences)
  int max_len = 20;              // M
  double temperature = 2.0;      // T, proposal temperature for Q_old samples
  /// Temperature at which Q_old scores samples in the objective. Unset means
  /// "same as `temperature`", i.e. the tempered proposal is Q_old.
  std::optional<double> old_logprob_temperature;
  int inner_steps = 200;         // optimization steps per outer iteration
  double learning_rate = 1e-3;
  /// Epoch budget for the sequence loop (one epoch = corpus/B steps); <= 0 disables.
  int max_epochs = 0;
  std::uint64_t seed = 1;

  double scoring_temperature() const { return old_logprob_temperature.value_or(temperature); }
  /// Throws ConfigError on B < 1, D < 1, T <= 0, M < 1, inner_steps < 1 or lr <= 0.
  void validate() const;
};

/// Defaults for the general (tabular) loop: 50 inner steps, T = 1.
TrainConfig tabular_defaults();

struct IterationReport {
  std::string phase;       // "dgsan-tabular", "dgsan-seq", "mle", "halt"
  int l = 0;               // target length (sequence loop), 0 otherwise
  int outer_iter = 0;
  long step = 0;           // optimizer steps taken so far
  double loss = 0.0;       // mean loss over the iteration's steps
  std::optional<double> js;
  std::optional<double> betweenness_fraction;
};

/// One JSON object per line: {phase, l, outer_iter, step, loss, js?, betweenness_fraction?}.
std::string to_json_line(const IterationReport& r);

using ReportSink = std::function<void(const IterationReport&)>;

// ---------------------------------------------------------------------------

/// D(x) = q_new / (q_new + q_old) = sigmoid(ln q_new - ln q_old).
double implied_discriminator(double logq_new, double logq_old);

/// mean softplus(old_real - new_real) + mean softplus(new_fake - old_fake).
/// The old log-probabilities are detached; only the new terms carry gradients.
ad::Var dgsan_loss(const ad::Var& logq_new_real, const ad::Var& logq_old_real,
                   const ad::Var& logq_new_fake, const ad::Var& logq_old_fake);

/// Value-only form of dgsan_loss on plain vectors.
template <typename A, typename B, typename C, typename D>
typename A::Scalar dgsan_loss_value(const Eigen::MatrixBase<A>& logq_new_real,
                                    const Eigen::MatrixBase<B>& logq_old_real,
                                    const Eigen::MatrixBase<C>& logq_new_fake,
                                    const Eigen::MatrixBase<D>& logq_old_fake) {
  using Scalar = typename A::Scalar;
  using std::abs, std::exp, std::log1p, std::max;
  const auto softplus = [](Scalar x) { return log1p(exp(-abs(x))) + max(x, Scalar(0)); };
  if (logq_new_real.size() == 0 || logq_new_fake.size() == 0)
    throw std::invalid_argument("dgsan_loss: empty batch");
  Scalar real(0), fake(0);
  for (Eigen::Index i = 0; i < logq_new_real.size(); ++i)
    real += softplus(logq_old_real(i) - logq_new_real(i));
  for (Eigen::Index i = 0; i < logq_new_fake.size(); ++i)
    fake += softplus(logq_new_fake(i) - logq_old_fake(i));
  return real / Scalar(logq_new_real.size()) + fake / Scalar(logq_new_fake.size());
}

// ---------------------------------------------------------------------------
// General loop (any explicit generator)

template <typename G>
concept ExplicitGenerator = requires(const G& g, std::span<const typename G::Sample> xs, Rng& rng) {
  typename G::Sample;
  { g.log_prob(xs, 1.0) } -> std::same_as<ad::Var>;
  { g.sample(std::size_t{1}, 1.0, rng) } -> std::same_as<std::vector<typename G::Sample>>;
  { g.parameters() } -> std::same_as<std::vector<ad::Var>>;
  { g.frozen_copy() } -> std::same_as<G>;
  { g.domain_probabilities(1.0) } -> std::same_as<Eigen::VectorXd>;
};

template <typename Sample>
using RealSampler = std::function<std::vector<Sample>(std::size_t, Rng&)>;

/// Runs `cfg.iterations` outer iterations of `cfg.inner_steps` Adam steps on
/// the self-adversarial loss, snapshotting Q_old after each. When `target`
/// (the exact real distribution over the domain) is given, each report carries
/// JS(P || Q_theta) and the betweenness fraction of (P, Q_old, Q_theta).
/// Q_old starts as a frozen copy of the initial `model`. Trains `model` in place.
template <ExplicitGenerator G>
std::vector<IterationReport> dgsan_general(const RealSampler<typename G::Sample>& real, G& model,
                                           const TrainConfig& cfg,
                                           const std::optional<Eigen::VectorXd>& target = std::nullopt,
                                           const ReportSink& sink = {}) {
  cfg.validate();
  Rng real_rng = split_rng(cfg.seed, "dgsan.real");
  Rng fake_rng = split_rng(cfg.seed, "dgsan.fake");
  const double score_t = cfg.scoring_temperature();
  const auto B = static_cast<std::size_t>(cfg.batch_size);

  Snapshot<G> old(model);
  Adam adam(model.parameters(), {.learning_rate = cfg.learning_rate});
  std::vector<IterationReport> reports;

  for (int outer = 0; outer < cfg.iterations; ++outer) {
    double loss_sum = 0.0;
    for (int s = 0; s < cfg.inner_steps; ++s) {
      const auto xr = real(B, real_rng);
      const auto xf = old.model().sample(B, cfg.temperature, fake_rng);
      try {
        const ad::Var loss = dgsan_loss(model.log_prob(xr), old.model().log_prob(xr, score_t),
                                        model.log_prob(xf), old.model().log_prob(xf, score_t));
        ad::backward(loss);
        adam.step();
        loss_sum += loss.item();
      } catch (const NumericDivergence& e) {
        throw NumericDivergence(std::string(e.what()) + " (outer iteration " + std::to_string(outer) +
                                ", step " + std::to_string(s) + ")");
      }
    }
    IterationReport r;
    r.phase = std::is_same_v<G, TabularDistribution> ? "dgsan-tabular" : "dgsan-general";
    r.outer_iter = outer;
    r.step = adam.steps_taken();
    r.loss = loss_sum / cfg.inner_steps;
    if (target) {
      const Eigen::VectorXd q_theta = model.domain_probabilities(1.0);
      const Eigen::VectorXd q_old = old.model().domain_probabilities(score_t);
      r.js = js_divergence(*target, q_theta);
      r.betweenness_fraction =
          check_betweenness(FiniteTripled::clamped(*target, q_old, q_theta)).fraction;
    }
    if (sink) sink(r);
    reports.push_back(r);
    old = Snapshot<G>(model);
  }
  return reports;
}

/// The general loop on a tabular model with samples drawn from `target`.
std::vector<IterationReport> dgsan_tabular(const Eigen::VectorXd& target, TabularDistribution& q,
                                           const TrainConfig& cfg, const ReportSink& sink = {});

// ---------------------------------------------------------------------------
// Sequence loop with a curriculum over the target length l

struct SequenceHooks {
  ReportSink report;
  /// Called after the D outer iterations of each length l complete.
  std::function<void(int l, const RecurrentLM&)> length_done;
};

/// For l = 1, 2, ...: D outer iterations, each of `inner_steps` steps that
/// draw B prefix splits at length l, roll out B fake continuations of length l
/// from the Q_old snapshot at temperature T, and minimize the loss on the
/// conditional log-probabilities. Q_old carries across the l boundary. Stops
/// when the epoch budget is spent or when no sentence is at least l long
/// (a "halt" report is emitted in that case).
std::vector<IterationReport> dgsan_sequence(const TokenizedCorpus& corpus, RecurrentLM& model,
                                            const TrainConfig& cfg, const SequenceHooks& hooks = {});

/// Teacher-forcing baseline: `epochs` passes of corpus/B mle_step calls with
/// uniformly drawn batches. One report per epoch.
std::vector<IterationReport> train_mle(const TokenizedCorpus& corpus, RecurrentLM& model,
                                       const TrainConfig& cfg, int epochs, const ReportSink& sink = {});

}  // namespace dgsan
