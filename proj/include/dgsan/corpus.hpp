#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dgsan/rng.hpp"

namespace dgsan {

using TokenId = int;
using Sentence = std::vector<TokenId>;

/// Dense token <-> id map. Ids 0..3 are reserved for pad, start, end, unknown.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kStart = 1;
  static constexpr TokenId kEnd = 2;
  static constexpr TokenId kUnknown = 3;
  static constexpr int kNumSpecial = 4;

  /// Specials only.
  Vocabulary();
  /// Specials followed by `tokens` in order; duplicates and special names are rejected.
  explicit Vocabulary(const std::vector<std::string>& tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  bool contains(std::string_view token) const;
  /// Id of `token`, or kUnknown when absent.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  Sentence encode(const std::vector<std::string>& tokens) const;
  /// Space-joined tokens; pad/start/end ids are skipped.
  std::string decode(const Sentence& ids) const;

  /// One token per line, line number = id.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Integer-encoded sentences; immutable after construction.
class TokenizedCorpus {
 public:
  TokenizedCorpus(std::vector<Sentence> sentences, int max_len,
                  std::shared_ptr<const Vocabulary> vocab);

  const std::vector<Sentence>& sentences() const { return sentences_; }
  std::size_t size() const { return sentences_.size(); }
  int max_len() const { return max_len_; }
  const Vocabulary& vocab() const { return *vocab_; }
  std::shared_ptr<const Vocabulary> vocab_ptr() const { return vocab_; }
  int longest() const;

  /// Number of sentences with length >= l.
  std::size_t count_at_least(int l) const;
  /// The i-th sentence (0 <= i < count_at_least(l)) among those with length >= l.
  const Sentence& nth_at_least(int l, std::size_t i) const;

 private:
  std::vector<Sentence> sentences_;
  int max_len_;
  std::shared_ptr<const Vocabulary> vocab_;
  std::vector<std::size_t> by_length_desc_;
};

/// Lowercased whitespace tokens of one line.
std::vector<std::string> tokenize(std::string_view line);

/// Reads one sentence per line, builds the vocabulary from this file, maps tokens
/// seen fewer than `min_freq` times to <unk> and truncates to `max_len` tokens.
std::pair<TokenizedCorpus, std::shared_ptr<const Vocabulary>> load_corpus(
    const std::filesystem::path& path, int max_len, int min_freq);

/// Encodes a file against an existing vocabulary (validation/test splits).
TokenizedCorpus load_corpus_with_vocab(const std::filesystem::path& path, int max_len,
                                       std::shared_ptr<const Vocabulary> vocab);

struct PrefixSplit {
  Sentence prefix;  // first k tokens
  Sentence target;  // tokens k+1 .. k+l
  int k = 0;
  int l = 1;
  std::size_t source = 0;  // index into corpus.sentences()
};

/// Draws a sentence of length >= l uniformly, then k uniformly from {0..M-l};
/// if the sentence is shorter than k+l, k is redrawn from {0..len-l}.
PrefixSplit sample_prefix_split(const TokenizedCorpus& corpus, int l, Rng& rng);

/// First-order Markov source with an explicit length distribution.
/// `lengths(i)` is the probability of length i+1.
struct MarkovOracle {
  Eigen::VectorXd initial;
  Eigen::MatrixXd transition;
  Eigen::VectorXd lengths;

  MarkovOracle(Eigen::VectorXd initial, Eigen::MatrixXd transition, Eigen::VectorXd lengths);
  int num_states() const { return static_cast<int>(initial.size()); }
  int max_len() const { return static_cast<int>(lengths.size()); }
};

Sentence oracle_sample(const MarkovOracle& oracle, Rng& rng);
/// Throws std::domain_error for ids or lengths with zero probability.
double oracle_logprob(const MarkovOracle& oracle, const Sentence& seq);

/// Vocabulary with the specials plus one token "s<i>" per oracle state.
std::shared_ptr<const Vocabulary> oracle_vocabulary(const MarkovOracle& oracle);
/// Oracle state id <-> vocabulary id (states are shifted past the specials).
inline TokenId oracle_state_to_id(int state) { return state + Vocabulary::kNumSpecial; }
inline int oracle_id_to_state(TokenId id) { return id - Vocabulary::kNumSpecial; }

/// `count` oracle draws encoded against `oracle_vocabulary(oracle)`.
TokenizedCorpus oracle_corpus(const MarkovOracle& oracle, std::size_t count, Rng& rng);

/// Writes a corpus as plain text, one sentence per line.
void save_corpus_text(const TokenizedCorpus& corpus, const std::filesystem::path& path);

}  // namespace dgsan
