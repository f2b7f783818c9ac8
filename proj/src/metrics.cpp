#include "dgsan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "dgsan/rng.hpp"

namespace dgsan {

double nll(const RecurrentLM& m, std::span<const Sentence> sentences) {
  if (sentences.empty()) throw std::invalid_argument("nll: empty corpus");
  constexpr std::size_t kChunk = 512;
  const RecurrentLM frozen = m.frozen_copy();
  double total = 0.0;
  for (std::size_t begin = 0; begin < sentences.size(); begin += kChunk) {
    const auto chunk = sentences.subspan(begin, std::min(kChunk, sentences.size() - begin));
    const std::vector<Sentence> empty(chunk.size());
    total -= seq_logprob_batch(frozen, empty, chunk).value().sum();
  }
  return total / static_cast<double>(sentences.size());
}

double nll(const RecurrentLM& m, const TokenizedCorpus& corpus) { return nll(m, corpus.sentences()); }

// ---------------------------------------------------------------------------

NGramMultiset::NGramMultiset(std::span<const Sentence> sentences, int n) : n_(n) {
  if (n < 1) throw std::invalid_argument("NGramMultiset: n must be >= 1");
  for (const auto& s : sentences) {
    ++sentences_;
    for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts_[Gram(s.begin() + i, s.begin() + i + n)];
  }
}

NGramMultiset NGramMultiset::of(const Sentence& sentence, int n) {
  return NGramMultiset(std::span<const Sentence>(&sentence, 1), n);
}

long NGramMultiset::count(const Gram& g) const {
  const auto it = counts_.find(g);
  return it == counts_.end() ? 0 : it->second;
}

long NGramMultiset::total() const {
  long t = 0;
  for (const auto& [g, c] : counts_) t += c;
  return t;
}

// ---------------------------------------------------------------------------

namespace {

void check_sentences(std::span<const Sentence> xs, const char* what) {
  if (xs.empty()) throw std::invalid_argument(std::string(what) + ": empty sentence set");
}

class ReferenceIndex {
 public:
  ReferenceIndex(std::span<const Sentence> refs, int n) : max_counts_(static_cast<std::size_t>(n)) {
    for (const auto& r : refs) {
      lengths_.push_back(static_cast<int>(r.size()));
      for (int k = 1; k <= n; ++k) {
        const NGramMultiset grams = NGramMultiset::of(r, k);
        for (const auto& [g, c] : grams.counts()) {
          long& m = max_counts_[k - 1][g];
          m = std::max(m, c);
        }
      }
    }
    std::sort(lengths_.begin(), lengths_.end());
  }

  long max_count(int k, const NGramMultiset::Gram& g) const {
    const auto& table = max_counts_[k - 1];
    const auto it = table.find(g);
    return it == table.end() ? 0 : it->second;
  }

  /// Closest reference length; ties go to the shorter one.
  int closest_length(int c) const {
    const auto it = std::lower_bound(lengths_.begin(), lengths_.end(), c);
    if (it == lengths_.end()) return lengths_.back();
    if (it == lengths_.begin() || *it == c) return *it;
    const int above = *it, below = *std::prev(it);
    return (c - below <= above - c) ? below : above;
  }

 private:
  std::vector<std::map<NGramMultiset::Gram, long>> max_counts_;
  std::vector<int> lengths_;
};

double sentence_bleu(const Sentence& cand, const ReferenceIndex& refs, int n) {
  double log_sum = 0.0;
  for (int k = 1; k <= n; ++k) {
    const NGramMultiset grams = NGramMultiset::of(cand, k);
    long matched = 0;
    for (const auto& [g, c] : grams.counts()) matched += std::min(c, refs.max_count(k, g));
    const long total = grams.total();
    const double p = total > 0 ? static_cast<double>(matched) / static_cast<double>(total) : 0.0;
    log_sum += std::log(std::max(p, kBleuFloor));
  }
  const int c = static_cast<int>(cand.size());
  const int r = refs.closest_length(c);
  const double bp = c >= r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / c);
  return bp * std::exp(log_sum / n);
}

}  // namespace

double bleu_n(std::span<const Sentence> candidates, std::span<const Sentence> references, int n) {
  if (n < 1) throw std::invalid_argument("bleu_n: n must be >= 1");
  check_sentences(candidates, "bleu_n");
  check_sentences(references, "bleu_n");
  for (const auto& c : candidates)
    if (c.empty()) throw std::invalid_argument("bleu_n: empty candidate");
  const ReferenceIndex index(references, n);
  double sum = 0.0;
  for (const auto& c : candidates) sum += sentence_bleu(c, index, n);
  return sum / static_cast<double>(candidates.size());
}

double backward_bleu_n(std::span<const Sentence> test, std::span<const Sentence> generated, int n) {
  return bleu_n(test, generated, n);
}

double ms_jaccard_n(std::span<const Sentence> a, std::span<const Sentence> b, int n) {
  check_sentences(a, "ms_jaccard_n");
  check_sentences(b, "ms_jaccard_n");
  const NGramMultiset ga(a, n), gb(b, n);
  if (ga.counts().empty() && gb.counts().empty())
    throw std::invalid_argument("ms_jaccard_n: n = " + std::to_string(n) + " exceeds every sentence length");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());

  double lo = 0.0, hi = 0.0;
  auto ia = ga.counts().begin(), ib = gb.counts().begin();
  const auto ea = ga.counts().end(), eb = gb.counts().end();
  while (ia != ea || ib != eb) {
    double x = 0.0, y = 0.0;
    if (ib == eb || (ia != ea && ia->first < ib->first)) {
      x = ia++->second / na;
    } else if (ia == ea || ib->first < ia->first) {
      y = ib++->second / nb;
    } else {
      x = ia++->second / na;
      y = ib++->second / nb;
    }
    lo += std::min(x, y);
    hi += std::max(x, y);
  }
  return lo / hi;
}

double msj_k(std::span<const Sentence> a, std::span<const Sentence> b, int k) {
  if (k < 1) throw std::invalid_argument("msj_k: k must be >= 1");
  double log_sum = 0.0;
  for (int n = 1; n <= k; ++n) {
    const double s = ms_jaccard_n(a, b, n);
    if (s <= 0.0) return 0.0;
    log_sum += std::log(s);
  }
  return std::exp(log_sum / k);
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t gram_hash(const Sentence& s, std::size_t begin, std::size_t len, std::uint64_t seed) {
  std::uint64_t h = mix64(seed ^ (0x9e3779b97f4a7c15ULL * len));
  for (std::size_t i = begin; i < begin + len; ++i) h = mix64(h ^ static_cast<std::uint64_t>(s[i] + 1));
  return h;
}

}  // namespace

Eigen::MatrixXd sentence_features(std::span<const Sentence> sentences, int dim, std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("sentence_features: dim must be >= 1");
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(sentences.size()), dim);
  for (std::size_t r = 0; r < sentences.size(); ++r) {
    const Sentence& s = sentences[r];
    const std::size_t grams = s.size() + (s.size() > 0 ? s.size() - 1 : 0);
    if (grams == 0) continue;
    const double weight = scale / static_cast<double>(grams);
    for (std::size_t len = 1; len <= 2; ++len)
      for (std::size_t i = 0; i + len <= s.size(); ++i) {
        std::uint64_t h = gram_hash(s, i, len, seed);
        for (int d = 0; d < dim; ++d) {
          if (d % 64 == 0 && d > 0) h = mix64(h);
          out(static_cast<Eigen::Index>(r), d) += ((h >> (d % 64)) & 1u) ? weight : -weight;
        }
      }
  }
  return out;
}

FeatureGaussian fit_feature_gaussian(const Eigen::MatrixXd& features) {
  if (features.rows() < 2) throw std::invalid_argument("fit_feature_gaussian: need at least two rows");
  FeatureGaussian g;
  g.mean = features.colwise().mean().transpose();
  g.variance = (features.rowwise() - g.mean.transpose()).array().square().colwise().mean().transpose();
  return g;
}

double frechet_distance(const FeatureGaussian& a, const FeatureGaussian& b) {
  if (a.mean.size() != b.mean.size()) throw std::invalid_argument("frechet_distance: dimension mismatch");
  const Eigen::ArrayXd sa = a.variance.array().sqrt(), sb = b.variance.array().sqrt();
  return (a.mean - b.mean).squaredNorm() + (sa - sb).square().sum();
}

double frechet_feature_distance(std::span<const Sentence> real, std::span<const Sentence> generated, int dim,
                                std::uint64_t seed) {
  if (real.size() < 2 || generated.size() < 2)
    throw std::invalid_argument("frechet_feature_distance: each set needs at least two sentences");
  return frechet_distance(fit_feature_gaussian(sentence_features(real, dim, seed)),
                          fit_feature_gaussian(sentence_features(generated, dim, seed)));
}

}  // namespace dgsan
