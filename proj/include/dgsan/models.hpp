#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dgsan/corpus.hpp"
#include "dgsan/optim.hpp"
#include "dgsan/rng.hpp"
#include "dgsan/tensor.hpp"

namespace dgsan {

using NamedParameters = std::vector<std::pair<std::string, ad::Var>>;

// ---------------------------------------------------------------------------
// Tabular distribution: softmax over a logit vector on {0, ..., n-1}.

class TabularDistribution {
 public:
  using Sample = int;

  /// Trainable distribution with the given logits (stored as a 1 x n row).
  explicit TabularDistribution(const Eigen::VectorXd& logits);
  static TabularDistribution uniform(int n);
  /// Logits drawn uniformly from [-scale, scale].
  static TabularDistribution random(int n, Rng& rng, double scale = 1.0);

  int size() const { return static_cast<int>(logits_.cols()); }
  const ad::Var& logits() const { return logits_; }
  bool frozen() const { return !logits_.requires_grad(); }

  /// log softmax(logits / temperature) as a plain vector.
  Eigen::VectorXd log_probs(double temperature = 1.0) const;
  Eigen::VectorXd probs(double temperature = 1.0) const;

  /// Differentiable log-probabilities of `xs` (|xs| x 1).
  ad::Var log_prob(std::span<const int> xs, double temperature = 1.0) const;
  std::vector<int> sample(std::size_t count, double temperature, Rng& rng) const;

  /// Exact distribution over the domain (for divergence reporting).
  Eigen::VectorXd domain_probabilities(double temperature = 1.0) const { return probs(temperature); }

  NamedParameters named_parameters() const { return {{"logits", logits_}}; }
  std::vector<ad::Var> parameters() const { return {logits_}; }
  /// Deep copy whose parameters are constants.
  TabularDistribution frozen_copy() const;

 private:
  TabularDistribution(ad::Var logits) : logits_(std::move(logits)) {}
  ad::Var logits_;
};

double tabular_logprob(const TabularDistribution& t, int x);
int tabular_sample(const TabularDistribution& t, double temperature, Rng& rng);

// ---------------------------------------------------------------------------
// Recurrent language model:
//   h_i = LSTM(h_{i-1}, E[x_{i-1}]),  q(x_i | x_{<i}) = softmax(h_i V),
// with x_0 the start token.

struct RecurrentLMConfig {
  int vocab_size = 0;
  int d_emb = 128;
  int d_h = 64;
  TokenId start_id = Vocabulary::kStart;
  double init_range = 0.08;
  double forget_bias = 1.0;
};

class RecurrentLM {
 public:
  /// Uniform(-init_range, init_range) weights; gate bias zero except the
  /// forget gate, which starts at `forget_bias`.
  RecurrentLM(const RecurrentLMConfig& config, Rng& rng);
  /// Rebuilds a trainable model from named parameter values (checkpoint load).
  static RecurrentLM from_parameters(const std::vector<std::pair<std::string, ad::Matrix>>& values,
                                     TokenId start_id = Vocabulary::kStart);

  const RecurrentLMConfig& config() const { return config_; }
  int vocab_size() const { return config_.vocab_size; }
  bool frozen() const { return !embedding_.requires_grad(); }

  NamedParameters named_parameters() const;
  std::vector<ad::Var> parameters() const;
  RecurrentLM frozen_copy() const;

  ad::Var& projection() { return projection_; }

  struct State {
    ad::Var h;
    ad::Var c;
  };
  State initial_state(Eigen::Index batch) const;
  /// Consumes one input token per row and returns the next state.
  State step(const State& state, std::span<const int> inputs) const;
  /// Next-token logits h V (batch x vocab).
  ad::Var logits(const State& state) const;

 private:
  RecurrentLM() = default;
  void validate() const;

  RecurrentLMConfig config_;
  ad::Var embedding_;  // vocab x d_emb
  ad::Var w_input_;    // d_emb x 4 d_h, gate order: input, forget, cell, output
  ad::Var w_hidden_;   // d_h x 4 d_h
  ad::Var bias_;       // 1 x 4 d_h
  ad::Var projection_; // d_h x vocab
};

/// Batched conditional log-probabilities: entry i is
/// sum over positions of targets[i] of log softmax(h V / temperature)[token],
/// running the model over start, prefixes[i], targets[i]. Result is B x 1.
ad::Var seq_logprob_batch(const RecurrentLM& m, std::span<const Sentence> prefixes,
                          std::span<const Sentence> targets, double temperature = 1.0);

/// log q(x | c) as a differentiable 1x1 Var. Throws on empty x.
ad::Var seq_logprob(const RecurrentLM& m, const Sentence& x, const Sentence& c = {});

/// Autoregressive rollout of exactly `l` tokens per prefix from softmax(logits / T).
/// The returned sequences exclude the prefixes.
std::vector<Sentence> seq_sample_batch(const RecurrentLM& m, std::span<const Sentence> prefixes,
                                       int l, double temperature, Rng& rng);
Sentence seq_sample(const RecurrentLM& m, const Sentence& c, int l, double temperature, Rng& rng);

/// Teacher-forcing step: mean per-token negative log-likelihood of `batch`
/// (empty prefixes), followed by one optimizer step. Returns the loss.
double mle_step(RecurrentLM& m, Adam& optimizer, std::span<const Sentence> batch);

/// All vocab^length sequences in lexicographic order.
std::vector<Sentence> enumerate_sequences(int vocab_size, int length);
/// Exact model distribution over `enumerate_sequences(vocab, length)`.
Eigen::VectorXd sequence_distribution(const RecurrentLM& m, int length, double temperature = 1.0);

// ---------------------------------------------------------------------------

/// Frozen deep copy of a model, taken at construction. Used as Q_old.
template <typename Model>
class Snapshot {
 public:
  explicit Snapshot(const Model& live) : frozen_(live.frozen_copy()) {}
  const Model& model() const { return frozen_; }

 private:
  Model frozen_;
};

/// Fixed-length view of a RecurrentLM as a distribution over the finite
/// domain vocab^length, so the general algorithm can train it.
class FixedLengthSequenceModel {
 public:
  using Sample = Sentence;

  FixedLengthSequenceModel(RecurrentLM model, int length);

  const RecurrentLM& model() const { return model_; }
  RecurrentLM& model() { return model_; }
  int length() const { return length_; }

  ad::Var log_prob(std::span<const Sentence> xs, double temperature = 1.0) const;
  std::vector<Sentence> sample(std::size_t count, double temperature, Rng& rng) const;
  Eigen::VectorXd domain_probabilities(double temperature = 1.0) const {
    return sequence_distribution(model_, length_, temperature);
  }
  std::vector<ad::Var> parameters() const { return model_.parameters(); }
  FixedLengthSequenceModel frozen_copy() const { return {model_.frozen_copy(), length_}; }

 private:
  RecurrentLM model_;
  int length_;
};

}  // namespace dgsan
