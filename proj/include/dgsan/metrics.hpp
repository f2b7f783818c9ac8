#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "dgsan/corpus.hpp"
#include "dgsan/models.hpp"

namespace dgsan {

/// Mean over sentences of -log q(sentence), in nats.
double nll(const RecurrentLM& m, const TokenizedCorpus& corpus);
double nll(const RecurrentLM& m, std::span<const Sentence> sentences);

/// n-gram counts of a sentence set.
class NGramMultiset {
 public:
  using Gram = std::vector<TokenId>;

  NGramMultiset(std::span<const Sentence> sentences, int n);
  static NGramMultiset of(const Sentence& sentence, int n);

  int n() const { return n_; }
  std::size_t sentence_count() const { return sentences_; }
  const std::map<Gram, long>& counts() const { return counts_; }
  long count(const Gram& g) const;
  long total() const;

 private:
  int n_;
  std::size_t sentences_ = 0;
  std::map<Gram, long> counts_;
};

inline constexpr double kBleuFloor = 1e-12;

/// Sentence-averaged BLEU-n: clipped n-gram precisions against the whole
/// reference set for orders 1..n, geometric mean with zero precisions floored
/// at kBleuFloor, brevity penalty against the closest reference length.
double bleu_n(std::span<const Sentence> candidates, std::span<const Sentence> references, int n);
/// bleu_n with the test set as candidates and the generated set as references.
double backward_bleu_n(std::span<const Sentence> test, std::span<const Sentence> generated, int n);

/// Multiset Jaccard over order-n grams with counts divided by sentence count.
double ms_jaccard_n(std::span<const Sentence> a, std::span<const Sentence> b, int n);
/// Geometric mean of ms_jaccard_n over n = 1..k.
double msj_k(std::span<const Sentence> a, std::span<const Sentence> b, int k);

struct FeatureGaussian {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;  // diagonal
};

/// L1-normalized bag of unigrams and bigrams, projected to `dim` coordinates
/// by a seeded hashed +-1/sqrt(dim) matrix. One row per sentence.
Eigen::MatrixXd sentence_features(std::span<const Sentence> sentences, int dim, std::uint64_t seed);
FeatureGaussian fit_feature_gaussian(const Eigen::MatrixXd& features);
double frechet_distance(const FeatureGaussian& a, const FeatureGaussian& b);

/// Fréchet distance between diagonal Gaussians fitted to sentence features.
/// Both sets need at least two sentences.
double frechet_feature_distance(std::span<const Sentence> real, std::span<const Sentence> generated,
                                int dim = 32, std::uint64_t seed = 0);

}  // namespace dgsan
