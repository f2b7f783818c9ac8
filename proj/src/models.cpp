#include "dgsan/models.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace dgsan {

namespace {

void check_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) throw std::invalid_argument("temperature must be > 0");
}

Eigen::VectorXd log_softmax_plain(const Eigen::Ref<const Eigen::VectorXd>& x) {
  const double m = x.maxCoeff();
  const double lse = m + std::log((x.array() - m).exp().sum());
  return x.array() - lse;
}

ad::Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double range, Rng& rng) {
  ad::Matrix m(rows, cols);
  // Column-major fill order is part of the seed contract.
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (2.0 * uniform01(rng) - 1.0) * range;
  return m;
}

int sample_from_logits(const Eigen::Ref<const Eigen::VectorXd>& logits, double temperature, Rng& rng) {
  const Eigen::VectorXd p = log_softmax_plain(logits / temperature).array().exp();
  return sample_categorical(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())), rng);
}

}  // namespace

// ---------------------------------------------------------------------------
// TabularDistribution

TabularDistribution::TabularDistribution(const Eigen::VectorXd& logits)
    : logits_(ad::parameter(logits.transpose())) {
  if (logits.size() < 1) throw std::invalid_argument("TabularDistribution: empty domain");
}

TabularDistribution TabularDistribution::uniform(int n) {
  return TabularDistribution(Eigen::VectorXd::Zero(n));
}

TabularDistribution TabularDistribution::random(int n, Rng& rng, double scale) {
  Eigen::VectorXd logits(n);
  for (int i = 0; i < n; ++i) logits(i) = (2.0 * uniform01(rng) - 1.0) * scale;
  return TabularDistribution(logits);
}

Eigen::VectorXd TabularDistribution::log_probs(double temperature) const {
  check_temperature(temperature);
  return log_softmax_plain(logits_.value().row(0).transpose() / temperature);
}

Eigen::VectorXd TabularDistribution::probs(double temperature) const {
  return log_probs(temperature).array().exp();
}

ad::Var TabularDistribution::log_prob(std::span<const int> xs, double temperature) const {
  check_temperature(temperature);
  ad::Var z = temperature == 1.0 ? logits_ : ad::scale(logits_, 1.0 / temperature);
  return ad::gather(ad::log_softmax(z, 1), xs);
}

std::vector<int> TabularDistribution::sample(std::size_t count, double temperature, Rng& rng) const {
  const Eigen::VectorXd p = probs(temperature);
  const std::span<const double> w(p.data(), static_cast<std::size_t>(p.size()));
  std::vector<int> out(count);
  for (auto& x : out) x = sample_categorical(w, rng);
  return out;
}

TabularDistribution TabularDistribution::frozen_copy() const {
  return TabularDistribution(ad::constant(logits_.value()));
}

double tabular_logprob(const TabularDistribution& t, int x) {
  if (x < 0 || x >= t.size()) throw std::out_of_range("tabular_logprob: symbol out of range");
  return t.log_probs()(x);
}

int tabular_sample(const TabularDistribution& t, double temperature, Rng& rng) {
  return t.sample(1, temperature, rng).front();
}

// ---------------------------------------------------------------------------
// RecurrentLM

RecurrentLM::RecurrentLM(const RecurrentLMConfig& config, Rng& rng) : config_(config) {
  if (config_.vocab_size < 1 || config_.d_emb < 1 || config_.d_h < 1)
    throw std::invalid_argument("RecurrentLM: dimensions must be positive");
  if (config_.start_id < 0 || config_.start_id >= config_.vocab_size)
    throw std::invalid_argument("RecurrentLM: start id outside vocabulary");
  const int V = config_.vocab_size, E = config_.d_emb, H = config_.d_h;
  const double r = config_.init_range;
  embedding_ = ad::parameter(uniform_matrix(V, E, r, rng));
  w_input_ = ad::parameter(uniform_matrix(E, 4 * H, r, rng));
  w_hidden_ = ad::parameter(uniform_matrix(H, 4 * H, r, rng));
  ad::Matrix bias = ad::Matrix::Zero(1, 4 * H);
  bias.middleCols(H, H).setConstant(config_.forget_bias);
  bias_ = ad::parameter(bias);
  projection_ = ad::parameter(uniform_matrix(H, V, r, rng));
}

RecurrentLM RecurrentLM::from_parameters(
    const std::vector<std::pair<std::string, ad::Matrix>>& values, TokenId start_id) {
  RecurrentLM m;
  for (const auto& [name, value] : values) {
    if (name == "embedding") m.embedding_ = ad::parameter(value);
    else if (name == "lstm.w_input") m.w_input_ = ad::parameter(value);
    else if (name == "lstm.w_hidden") m.w_hidden_ = ad::parameter(value);
    else if (name == "lstm.bias") m.bias_ = ad::parameter(value);
    else if (name == "projection") m.projection_ = ad::parameter(value);
    else throw std::invalid_argument("RecurrentLM: unknown parameter '" + name + "'");
  }
  if (!m.embedding_ || !m.w_input_ || !m.w_hidden_ || !m.bias_ || !m.projection_)
    throw std::invalid_argument("RecurrentLM: missing parameters");
  m.config_.vocab_size = static_cast<int>(m.embedding_.rows());
  m.config_.d_emb = static_cast<int>(m.embedding_.cols());
  m.config_.d_h = static_cast<int>(m.w_hidden_.rows());
  m.config_.start_id = start_id;
  m.validate();
  return m;
}

void RecurrentLM::validate() const {
  const auto V = config_.vocab_size, E = config_.d_emb, H = config_.d_h;
  const auto expect = [](const ad::Var& v, Eigen::Index r, Eigen::Index c, const char* name) {
    if (v.rows() != r || v.cols() != c)
      throw std::invalid_argument(std::string("RecurrentLM: parameter '") + name + "' has shape " +
                                  std::to_string(v.rows()) + "x" + std::to_string(v.cols()) +
                                  ", expected " + std::to_string(r) + "x" + std::to_string(c));
  };
  expect(w_input_, E, 4 * H, "lstm.w_input");
  expect(w_hidden_, H, 4 * H, "lstm.w_hidden");
  expect(bias_, 1, 4 * H, "lstm.bias");
  expect(projection_, H, V, "projection");
  if (config_.start_id < 0 || config_.start_id >= V)
    throw std::invalid_argument("RecurrentLM: start id outside vocabulary");
}

NamedParameters RecurrentLM::named_parameters() const {
  return {{"embedding", embedding_},
          {"lstm.w_input", w_input_},
          {"lstm.w_hidden", w_hidden_},
          {"lstm.bias", bias_},
          {"projection", projection_}};
}

std::vector<ad::Var> RecurrentLM::parameters() const {
  return {embedding_, w_input_, w_hidden_, bias_, projection_};
}

RecurrentLM RecurrentLM::frozen_copy() const {
  RecurrentLM m;
  m.config_ = config_;
  m.embedding_ = ad::constant(embedding_.value());
  m.w_input_ = ad::constant(w_input_.value());
  m.w_hidden_ = ad::constant(w_hidden_.value());
  m.bias_ = ad::constant(bias_.value());
  m.projection_ = ad::constant(projection_.value());
  return m;
}

RecurrentLM::State RecurrentLM::initial_state(Eigen::Index batch) const {
  const ad::Var zero = ad::constant(ad::Matrix::Zero(batch, config_.d_h));
  return {zero, zero};
}

RecurrentLM::State RecurrentLM::step(const State& state, std::span<const int> inputs) const {
  const Eigen::Index H = config_.d_h;
  const ad::Var e = ad::embedding_lookup(embedding_, inputs);
  const ad::Var gates = ad::matmul(e, w_input_) + ad::matmul(state.h, w_hidden_) + bias_;
  const ad::Var i = ad::sigmoid(ad::slice(gates, 1, 0, H));
  const ad::Var f = ad::sigmoid(ad::slice(gates, 1, H, H));
  const ad::Var g = ad::tanh(ad::slice(gates, 1, 2 * H, H));
  const ad::Var o = ad::sigmoid(ad::slice(gates, 1, 3 * H, H));
  const ad::Var c = f * state.c + i * g;
  return {o * ad::tanh(c), c};
}

ad::Var RecurrentLM::logits(const State& state) const { return ad::matmul(state.h, projection_); }

// ---------------------------------------------------------------------------
// Sequence scoring and sampling

namespace {

// Rows with equal (prefix length, target length) share one batched rollout.
std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> group_by_shape(
    std::span<const Sentence> prefixes, std::span<const Sentence> targets) {
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < prefixes.size(); ++i)
    groups[{prefixes[i].size(), targets.empty() ? 0 : targets[i].size()}].push_back(i);
  return groups;
}

// Token at position t of prefix . target for row `r`.
inline int token_at(const Sentence& prefix, const Sentence& target, std::size_t t) {
  return t < prefix.size() ? prefix[t] : target[t - prefix.size()];
}

}  // namespace

ad::Var seq_logprob_batch(const RecurrentLM& m, std::span<const Sentence> prefixes,
                          std::span<const Sentence> targets, double temperature) {
  check_temperature(temperature);
  if (prefixes.size() != targets.size())
    throw std::invalid_argument("seq_logprob_batch: prefixes and targets differ in count");
  if (targets.empty()) throw std::invalid_argument("seq_logprob_batch: empty batch");
  for (const auto& t : targets)
    if (t.empty()) throw std::invalid_argument("seq_logprob: empty target sequence");

  std::vector<ad::Var> parts;
  std::vector<int> position(targets.size());
  int offset = 0;
  for (const auto& [shape, rows] : group_by_shape(prefixes, targets)) {
    const auto [k, l] = shape;
    const auto n = static_cast<Eigen::Index>(rows.size());
    auto state = m.initial_state(n);
    std::vector<int> ids(rows.size(), m.config().start_id);
    ad::Var total;
    for (std::size_t t = 0; t < k + l; ++t) {
      state = m.step(state, ids);
      for (std::size_t j = 0; j < rows.size(); ++j)
        ids[j] = token_at(prefixes[rows[j]], targets[rows[j]], t);
      if (t < k) continue;
      ad::Var z = m.logits(state);
      if (temperature != 1.0) z = ad::scale(z, 1.0 / temperature);
      ad::Var lp = ad::gather(ad::log_softmax(z, 1), ids);
      total = total ? total + lp : lp;
    }
    parts.push_back(total);
    for (std::size_t j = 0; j < rows.size(); ++j) position[rows[j]] = offset + static_cast<int>(j);
    offset += static_cast<int>(n);
  }
  return ad::take_rows(ad::concat(parts, 0), position);
}

ad::Var seq_logprob(const RecurrentLM& m, const Sentence& x, const Sentence& c) {
  return seq_logprob_batch(m, std::span<const Sentence>(&c, 1), std::span<const Sentence>(&x, 1));
}

std::vector<Sentence> seq_sample_batch(const RecurrentLM& m, std::span<const Sentence> prefixes,
                                       int l, double temperature, Rng& rng) {
  check_temperature(temperature);
  if (l < 1) throw std::invalid_argument("seq_sample: l must be >= 1");
  const RecurrentLM frozen = m.frozen() ? m : m.frozen_copy();
  std::vector<Sentence> out(prefixes.size());
  for (const auto& [shape, rows] : group_by_shape(prefixes, {})) {
    const std::size_t k = shape.first;
    auto state = frozen.initial_state(static_cast<Eigen::Index>(rows.size()));
    std::vector<int> ids(rows.size(), frozen.config().start_id);
    for (std::size_t t = 0; t < k + static_cast<std::size_t>(l); ++t) {
      state = frozen.step(state, ids);
      if (t < k) {
        for (std::size_t j = 0; j < rows.size(); ++j) ids[j] = prefixes[rows[j]][t];
        continue;
      }
      const ad::Matrix z = frozen.logits(state).value();
      for (std::size_t j = 0; j < rows.size(); ++j) {
        ids[j] = sample_from_logits(z.row(static_cast<Eigen::Index>(j)).transpose(), temperature, rng);
        out[rows[j]].push_back(ids[j]);
      }
    }
  }
  return out;
}

Sentence seq_sample(const RecurrentLM& m, const Sentence& c, int l, double temperature, Rng& rng) {
  return seq_sample_batch(m, std::span<const Sentence>(&c, 1), l, temperature, rng).front();
}

double mle_step(RecurrentLM& m, Adam& optimizer, std::span<const Sentence> batch) {
  if (batch.empty()) throw std::invalid_argument("mle_step: empty batch");
  std::vector<Sentence> prefixes(batch.size());
  std::size_t tokens = 0;
  for (const auto& s : batch) tokens += s.size();
  const ad::Var lp = seq_logprob_batch(m, prefixes, batch);
  const ad::Var loss = ad::scale(ad::sum(lp), -1.0 / static_cast<double>(tokens));
  ad::backward(loss);
  optimizer.step();
  return loss.item();
}

std::vector<Sentence> enumerate_sequences(int vocab_size, int length) {
  if (vocab_size < 1 || length < 1) throw std::invalid_argument("enumerate_sequences: bad size");
  const double count = std::pow(static_cast<double>(vocab_size), length);
  if (count > 1e7) throw std::invalid_argument("enumerate_sequences: domain too large");
  std::vector<Sentence> out;
  out.reserve(static_cast<std::size_t>(count));
  Sentence cur(static_cast<std::size_t>(length), 0);
  while (true) {
    out.push_back(cur);
    int pos = length - 1;
    while (pos >= 0 && ++cur[static_cast<std::size_t>(pos)] == vocab_size) cur[static_cast<std::size_t>(pos--)] = 0;
    if (pos < 0) break;
  }
  return out;
}

Eigen::VectorXd sequence_distribution(const RecurrentLM& m, int length, double temperature) {
  const auto seqs = enumerate_sequences(m.vocab_size(), length);
  const std::vector<Sentence> prefixes(seqs.size());
  const RecurrentLM frozen = m.frozen() ? m : m.frozen_copy();
  return seq_logprob_batch(frozen, prefixes, seqs, temperature).value().col(0).array().exp();
}

// ---------------------------------------------------------------------------

FixedLengthSequenceModel::FixedLengthSequenceModel(RecurrentLM model, int length)
    : model_(std::move(model)), length_(length) {
  if (length_ < 1) throw std::invalid_argument("FixedLengthSequenceModel: length must be >= 1");
}

ad::Var FixedLengthSequenceModel::log_prob(std::span<const Sentence> xs, double temperature) const {
  const std::vector<Sentence> prefixes(xs.size());
  return seq_logprob_batch(model_, prefixes, xs, temperature);
}

std::vector<Sentence> FixedLengthSequenceModel::sample(std::size_t count, double temperature,
                                                       Rng& rng) const {
  const std::vector<Sentence> prefixes(count);
  return seq_sample_batch(model_, prefixes, length_, temperature, rng);
}

}  // namespace dgsan
