#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dgsan/metrics.hpp"
#include "helpers.hpp"

using namespace dgsan;

namespace {

// a b c d e f
constexpr TokenId a = 4, b = 5, c = 6, d = 7, e = 8, f = 9;

std::vector<Sentence> shifted(const std::vector<Sentence>& xs, int offset) {
  std::vector<Sentence> out = xs;
  for (auto& s : out)
    for (auto& t : s) t += offset;
  return out;
}

template <typename T>
std::vector<T> shuffled(std::vector<T> xs, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::shuffle(xs.begin(), xs.end(), g);
  return xs;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("n-gram multisets") {
  const std::vector<Sentence> xs = {{a, b, a, b}, {a, b}};
  const NGramMultiset m(xs, 2);
  CHECK(m.n() == 2);
  CHECK(m.sentence_count() == 2);
  CHECK(m.count({a, b}) == 3);
  CHECK(m.count({b, a}) == 1);
  CHECK(m.count({a, a}) == 0);
  CHECK(m.total() == 4);
  for (const auto& [g, n] : m.counts()) {
    CHECK(g.size() == 2);
    CHECK(n >= 1);
  }
  CHECK(NGramMultiset::of({a, b, c}, 3).total() == 1);
  CHECK(NGramMultiset::of({a, b}, 3).total() == 0);
  CHECK_THROWS_AS(NGramMultiset(xs, 0), std::invalid_argument);
}

TEST_CASE("bleu hand example") {
  const std::vector<Sentence> cand = {{a, b, c, d}}, ref = {{a, b, c, e}};
  CHECK(bleu_n(cand, ref, 2) == doctest::Approx(std::sqrt(0.75 * 2.0 / 3.0)).epsilon(1e-14));
  CHECK(bleu_n(cand, ref, 2) == doctest::Approx(0.7071).epsilon(1e-4));
  CHECK(bleu_n(cand, ref, 1) == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("bleu clipping and brevity") {
  // Clipped unigram precision 2/4 for "a a a a" against "a a b".
  const std::vector<Sentence> cand = {{a, a, a, a}}, ref = {{a, a, b}};
  CHECK(bleu_n(cand, ref, 1) == doctest::Approx(0.5).epsilon(1e-14));
  // Short candidate: c = 2, closest r = 4, BP = exp(1 - 2).
  const std::vector<Sentence> short_cand = {{a, b}}, long_ref = {{a, b, c, d}, {e, e, e, e, e, e, e}};
  CHECK(bleu_n(short_cand, long_ref, 2) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
  // Ties in reference length resolve to the shorter reference.
  const std::vector<Sentence> mid = {{a, b, c}}, tie = {{a, b}, {a, b, c, d}};
  CHECK(bleu_n(mid, tie, 1) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("bleu identical and disjoint sets") {
  const std::vector<Sentence> xs = {{a, b, c, d, e}, {b, c, d, e, f, a}, {c, a, b, f, e}};
  for (int n : {1, 3, 5}) CHECK(bleu_n(xs, xs, n) == doctest::Approx(1.0).epsilon(1e-14));
  const std::vector<Sentence> other = {{20, 21, 22, 23, 24}};
  CHECK(bleu_n(other, xs, 3) < 1e-3);
  CHECK(bleu_n(other, xs, 3) > 0.0);
  const std::vector<Sentence> empty_cand = {{}};
  CHECK_THROWS_AS(bleu_n(empty_cand, xs, 2), std::invalid_argument);
  const std::vector<Sentence> none;
  CHECK_THROWS_AS(bleu_n(xs, none, 2), std::invalid_argument);
  CHECK_THROWS_AS(bleu_n(xs, xs, 0), std::invalid_argument);
}

TEST_CASE("bleu never drops when the candidate joins the references") {
  Rng rng(1);
  const TokenizedCorpus corpus = oracle_corpus(testing::three_state_oracle(), 60, rng);
  const auto& s = corpus.sentences();
  const std::vector<Sentence> refs(s.begin() + 10, s.end());
  for (int i = 0; i < 10; ++i) {
    const std::vector<Sentence> cand = {s[static_cast<std::size_t>(i)]};
    std::vector<Sentence> more = refs;
    more.push_back(cand[0]);
    for (int n : {2, 3}) {
      CHECK(bleu_n(cand, more, n) >= bleu_n(cand, refs, n));
      CHECK(bleu_n(cand, more, n) == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("backward bleu penalizes collapse") {
  const std::vector<Sentence> test = {{a, b, c, d}, {e, f, a, b}, {c, d, e, f}, {b, a, f, e}};
  CHECK(backward_bleu_n(test, test, 3) == doctest::Approx(1.0).epsilon(1e-14));
  const std::vector<Sentence> collapsed(5, test[0]);
  const double bl = bleu_n(collapsed, test, 3), bbl = backward_bleu_n(test, collapsed, 3);
  CHECK(bl == doctest::Approx(1.0));
  CHECK(bbl < bl);
  CHECK(backward_bleu_n(test, collapsed, 3) == bleu_n(test, collapsed, 3));
}

TEST_CASE("ms-jaccard hand example") {
  const std::vector<Sentence> A = {{a, b}, {a, b}}, B = {{a, b}, {a, c}};
  CHECK(ms_jaccard_n(A, B, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(ms_jaccard_n(B, A, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  // Unigrams: A {a:1, b:1}, B {a:1, b:.5, c:.5} -> 1.5 / 2.5.
  CHECK(ms_jaccard_n(A, B, 1) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(msj_k(A, B, 2) == doctest::Approx(std::sqrt(0.6 / 3.0)).epsilon(1e-14));
}

TEST_CASE("ms-jaccard properties") {
  Rng rng(2);
  const TokenizedCorpus c1 = oracle_corpus(testing::three_state_oracle(), 50, rng);
  const TokenizedCorpus c2 = oracle_corpus(testing::three_state_oracle(), 70, rng);
  const auto& x = c1.sentences();
  const auto& y = c2.sentences();
  for (int n : {1, 2, 3}) {
    CHECK(ms_jaccard_n(x, x, n) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(ms_jaccard_n(x, y, n) == doctest::Approx(ms_jaccard_n(y, x, n)).epsilon(1e-14));
    CHECK(ms_jaccard_n(x, y, n) > 0.0);
    CHECK(ms_jaccard_n(x, y, n) < 1.0);
    CHECK(ms_jaccard_n(x, shifted(y, 3), n) == 0.0);
  }
  CHECK(msj_k(x, shifted(y, 3), 3) == 0.0);
  CHECK(msj_k(x, x, 3) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(ms_jaccard_n(x, y, 4), std::invalid_argument);
  const std::vector<Sentence> none;
  CHECK_THROWS_AS(ms_jaccard_n(none, y, 1), std::invalid_argument);
}

TEST_CASE("frechet feature distance") {
  Rng rng(3);
  const TokenizedCorpus corpus = oracle_corpus(testing::three_state_oracle(), 2000, rng);
  const auto& s = corpus.sentences();
  const std::vector<Sentence> first(s.begin(), s.begin() + 1000), second(s.begin() + 1000, s.end());
  const std::vector<Sentence> disjoint = shifted(second, 3);

  CHECK(frechet_feature_distance(first, first) == 0.0);
  const double split = frechet_feature_distance(first, second);
  const double apart = frechet_feature_distance(first, disjoint);
  MESSAGE("split-half " << split << ", disjoint " << apart);
  CHECK(split >= 0.0);
  CHECK(apart > 0.0);
  CHECK(apart >= 10.0 * split);
  CHECK(frechet_feature_distance(second, first) == doctest::Approx(split).epsilon(1e-12));
  CHECK(frechet_feature_distance(disjoint, first) == doctest::Approx(apart).epsilon(1e-12));

  const std::vector<Sentence> one = {s[0]};
  CHECK_THROWS_AS(frechet_feature_distance(one, first), std::invalid_argument);
  CHECK(frechet_feature_distance(first, second, 32, 0) == frechet_feature_distance(first, second, 32, 0));
}

TEST_CASE("feature gaussians") {
  const std::vector<Sentence> xs = {{a, b, c}, {d}, {a, a}};
  const Eigen::MatrixXd feats = sentence_features(xs, 16, 7);
  CHECK(feats.rows() == 3);
  CHECK(feats.cols() == 16);
  CHECK(feats.isApprox(sentence_features(xs, 16, 7)));
  CHECK_FALSE(feats.isApprox(sentence_features(xs, 16, 8)));
  const FeatureGaussian g = fit_feature_gaussian(feats);
  CHECK(g.variance.minCoeff() >= 0.0);
  CHECK(g.mean.isApprox(feats.colwise().mean().transpose()));
  CHECK(frechet_distance(g, g) == 0.0);

  FeatureGaussian h{Eigen::VectorXd::Zero(2), Eigen::VectorXd::Constant(2, 4.0)};
  FeatureGaussian k{Eigen::VectorXd::Constant(2, 1.0), Eigen::VectorXd::Constant(2, 1.0)};
  // |mu|^2 = 2, per coordinate 4 + 1 - 2*2*1 = 1.
  CHECK(frechet_distance(h, k) == doctest::Approx(4.0).epsilon(1e-14));
  CHECK_THROWS_AS(fit_feature_gaussian(feats.topRows(1)), std::invalid_argument);
}

TEST_CASE("uniform-model nll closed form") {
  Rng rng(4);
  RecurrentLM m({.vocab_size = 9, .d_emb = 4, .d_h = 4}, rng);
  m.projection().mutable_value().setZero();
  const std::vector<Sentence> xs = {{4, 5}, {6, 7, 8, 4}, {5}};
  CHECK(nll(m, xs) == doctest::Approx((2 + 4 + 1) / 3.0 * std::log(9.0)).epsilon(1e-13));
  const std::vector<Sentence> none;
  CHECK_THROWS_AS(nll(m, none), std::invalid_argument);
}

TEST_CASE("nll of a trained model is bounded by the oracle entropy") {
  const MarkovOracle oracle = testing::three_state_oracle();
  Rng rng(5);
  const TokenizedCorpus corpus = oracle_corpus(oracle, 400, rng);
  Rng init(6);
  RecurrentLM m({.vocab_size = corpus.vocab().size(), .d_emb = 8, .d_h = 8}, init);
  Adam adam(m.parameters(), {.learning_rate = 1e-2});
  for (int i = 0; i < 60; ++i) mle_step(m, adam, corpus.sentences());

  const int V = corpus.vocab().size();
  const Eigen::VectorXd p = testing::oracle_sequence_distribution(oracle, V, 3);
  const auto seqs = enumerate_sequences(V, 3);
  double entropy = 0.0, cross = 0.0;
  std::vector<Sentence> support;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const double pi = p(static_cast<Eigen::Index>(i));
    if (pi == 0.0) continue;
    entropy -= pi * std::log(pi);
    cross -= pi * seq_logprob(m, seqs[i]).item();
  }
  MESSAGE("entropy " << entropy << ", cross-entropy " << cross << ", corpus nll " << nll(m, corpus));
  CHECK(cross >= entropy);
  CHECK(cross < entropy + 0.5);
  CHECK(nll(m, corpus) > 0.0);
}

TEST_CASE("metrics are invariant to sentence order") {
  Rng rng(7);
  const TokenizedCorpus c1 = oracle_corpus(testing::three_state_oracle(), 40, rng);
  const TokenizedCorpus c2 = oracle_corpus(testing::three_state_oracle(), 30, rng);
  const auto& x = c1.sentences();
  const auto& y = c2.sentences();
  const auto xs = shuffled(x, 1), ys = shuffled(y, 2);
  CHECK(bleu_n(xs, ys, 3) == doctest::Approx(bleu_n(x, y, 3)).epsilon(1e-13));
  CHECK(backward_bleu_n(xs, ys, 3) == doctest::Approx(backward_bleu_n(x, y, 3)).epsilon(1e-13));
  CHECK(msj_k(xs, ys, 3) == doctest::Approx(msj_k(x, y, 3)).epsilon(1e-13));
  CHECK(frechet_feature_distance(xs, ys) == doctest::Approx(frechet_feature_distance(x, y)).epsilon(1e-10));
  Rng init(8);
  const RecurrentLM m({.vocab_size = 7, .d_emb = 4, .d_h = 4}, init);
  CHECK(nll(m, xs) == doctest::Approx(nll(m, x)).epsilon(1e-13));
}

}  // TEST_SUITE
