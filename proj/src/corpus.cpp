#include "dgsan/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "dgsan/errors.hpp"

namespace dgsan {

namespace {

const std::vector<std::string>& special_names() {
  static const std::vector<std::string> names{"<pad>", "<s>", "</s>", "<unk>"};
  return names;
}

std::vector<std::vector<std::string>> read_tokenized_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read corpus file: " + path.string());
  std::vector<std::vector<std::string>> lines;
  std::string line;
  while (std::getline(in, line)) {
    auto toks = tokenize(line);
    if (!toks.empty()) lines.push_back(std::move(toks));
  }
  if (lines.empty()) throw ConfigError("empty corpus: " + path.string());
  return lines;
}

bool is_stochastic(const Eigen::Ref<const Eigen::VectorXd>& v) {
  return (v.array() >= 0.0).all() && std::abs(v.sum() - 1.0) <= 1e-12;
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  tokens_ = special_names();
  tokens_.insert(tokens_.end(), tokens.begin(), tokens.end());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw std::invalid_argument("Vocabulary: empty token");
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
    if (!inserted) throw std::invalid_argument("Vocabulary: duplicate token '" + tokens_[i] + "'");
  }
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.find(std::string(token)) != index_.end();
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnknown : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("Vocabulary: id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

Sentence Vocabulary::encode(const std::vector<std::string>& tokens) const {
  Sentence out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::string Vocabulary::decode(const Sentence& ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id == kPad || id == kStart || id == kEnd) continue;
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write vocabulary: " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read vocabulary: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  const auto& specials = special_names();
  if (lines.size() < specials.size() ||
      !std::equal(specials.begin(), specials.end(), lines.begin()))
    throw ConfigError("vocabulary file does not start with the reserved tokens: " + path.string());
  return Vocabulary(std::vector<std::string>(lines.begin() + kNumSpecial, lines.end()));
}

// ---------------------------------------------------------------------------
// TokenizedCorpus

TokenizedCorpus::TokenizedCorpus(std::vector<Sentence> sentences, int max_len,
                                 std::shared_ptr<const Vocabulary> vocab)
    : sentences_(std::move(sentences)), max_len_(max_len), vocab_(std::move(vocab)) {
  if (!vocab_) throw std::invalid_argument("TokenizedCorpus: null vocabulary");
  if (max_len_ < 1) throw std::invalid_argument("TokenizedCorpus: max_len < 1");
  for (const auto& s : sentences_) {
    if (s.empty()) throw std::invalid_argument("TokenizedCorpus: empty sentence");
    if (static_cast<int>(s.size()) > max_len_)
      throw std::invalid_argument("TokenizedCorpus: sentence longer than max_len");
    for (TokenId id : s)
      if (id < 0 || id >= vocab_->size())
        throw std::invalid_argument("TokenizedCorpus: id outside vocabulary");
  }
  by_length_desc_.resize(sentences_.size());
  for (std::size_t i = 0; i < by_length_desc_.size(); ++i) by_length_desc_[i] = i;
  std::stable_sort(by_length_desc_.begin(), by_length_desc_.end(),
                   [&](std::size_t a, std::size_t b) {
                     return sentences_[a].size() > sentences_[b].size();
                   });
}

int TokenizedCorpus::longest() const {
  return by_length_desc_.empty() ? 0
                                 : static_cast<int>(sentences_[by_length_desc_.front()].size());
}

std::size_t TokenizedCorpus::count_at_least(int l) const {
  auto it = std::partition_point(by_length_desc_.begin(), by_length_desc_.end(),
                                 [&](std::size_t i) {
                                   return static_cast<int>(sentences_[i].size()) >= l;
                                 });
  return static_cast<std::size_t>(it - by_length_desc_.begin());
}

const Sentence& TokenizedCorpus::nth_at_least(int l, std::size_t i) const {
  if (i >= count_at_least(l)) throw std::out_of_range("nth_at_least: index out of range");
  return sentences_[by_length_desc_[i]];
}

// ---------------------------------------------------------------------------
// Loading

std::vector<std::string> tokenize(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::pair<TokenizedCorpus, std::shared_ptr<const Vocabulary>> load_corpus(
    const std::filesystem::path& path, int max_len, int min_freq) {
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  auto lines = read_tokenized_lines(path);

  std::map<std::string, long> freq;
  for (const auto& toks : lines)
    for (const auto& t : toks) ++freq[t];

  Vocabulary specials_only;
  std::vector<std::pair<std::string, long>> kept;
  for (const auto& [tok, n] : freq)
    if (n >= min_freq && !specials_only.contains(tok)) kept.emplace_back(tok, n);
  // Most frequent first; ties broken lexicographically (std::map order, stable sort).
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [tok, n] : kept) tokens.push_back(tok);
  auto vocab = std::make_shared<const Vocabulary>(tokens);

  std::vector<Sentence> sentences;
  sentences.reserve(lines.size());
  for (auto& toks : lines) {
    if (static_cast<int>(toks.size()) > max_len) toks.resize(static_cast<std::size_t>(max_len));
    sentences.push_back(vocab->encode(toks));
  }
  return {TokenizedCorpus(std::move(sentences), max_len, vocab), vocab};
}

TokenizedCorpus load_corpus_with_vocab(const std::filesystem::path& path, int max_len,
                                       std::shared_ptr<const Vocabulary> vocab) {
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  auto lines = read_tokenized_lines(path);
  std::vector<Sentence> sentences;
  sentences.reserve(lines.size());
  for (auto& toks : lines) {
    if (static_cast<int>(toks.size()) > max_len) toks.resize(static_cast<std::size_t>(max_len));
    sentences.push_back(vocab->encode(toks));
  }
  return TokenizedCorpus(std::move(sentences), max_len, std::move(vocab));
}

// ---------------------------------------------------------------------------
// Prefix sampling

PrefixSplit sample_prefix_split(const TokenizedCorpus& corpus, int l, Rng& rng) {
  const int M = corpus.max_len();
  if (l < 1 || l > M) throw std::invalid_argument("sample_prefix_split: l must be in [1, M]");
  const std::size_t eligible = corpus.count_at_least(l);
  if (eligible == 0)
    throw std::invalid_argument("sample_prefix_split: no sentence of length >= l");

  std::uniform_int_distribution<std::size_t> pick(0, eligible - 1);
  const std::size_t nth = pick(rng);
  const Sentence& s = corpus.nth_at_least(l, nth);
  const int len = static_cast<int>(s.size());

  int k = std::uniform_int_distribution<int>(0, M - l)(rng);
  if (len < k + l) k = std::uniform_int_distribution<int>(0, len - l)(rng);

  PrefixSplit split;
  split.k = k;
  split.l = l;
  split.prefix.assign(s.begin(), s.begin() + k);
  split.target.assign(s.begin() + k, s.begin() + k + l);
  split.source = static_cast<std::size_t>(&s - corpus.sentences().data());
  return split;
}

// ---------------------------------------------------------------------------
// Markov oracle

MarkovOracle::MarkovOracle(Eigen::VectorXd init, Eigen::MatrixXd trans, Eigen::VectorXd lens)
    : initial(std::move(init)), transition(std::move(trans)), lengths(std::move(lens)) {
  const auto n = initial.size();
  if (n < 1) throw std::invalid_argument("MarkovOracle: empty state space");
  if (transition.rows() != n || transition.cols() != n)
    throw std::invalid_argument("MarkovOracle: transition must be n x n");
  if (lengths.size() < 1) throw std::invalid_argument("MarkovOracle: empty length distribution");
  if (!is_stochastic(initial)) throw std::invalid_argument("MarkovOracle: invalid initial vector");
  if (!is_stochastic(lengths)) throw std::invalid_argument("MarkovOracle: invalid length vector");
  for (Eigen::Index r = 0; r < n; ++r)
    if (!is_stochastic(transition.row(r).transpose()))
      throw std::invalid_argument("MarkovOracle: transition row " + std::to_string(r) +
                                  " is not stochastic");
}

Sentence oracle_sample(const MarkovOracle& o, Rng& rng) {
  const auto as_span = [](const Eigen::VectorXd& v) {
    return std::span<const double>(v.data(), static_cast<std::size_t>(v.size()));
  };
  const int len = sample_categorical(as_span(o.lengths), rng) + 1;
  Sentence seq;
  seq.reserve(static_cast<std::size_t>(len));
  seq.push_back(sample_categorical(as_span(o.initial), rng));
  Eigen::VectorXd row(o.num_states());
  for (int i = 1; i < len; ++i) {
    row = o.transition.row(seq.back()).transpose();
    seq.push_back(sample_categorical(as_span(row), rng));
  }
  return seq;
}

double oracle_logprob(const MarkovOracle& o, const Sentence& seq) {
  const int len = static_cast<int>(seq.size());
  if (len < 1 || len > o.max_len())
    throw std::domain_error("oracle_logprob: length outside the oracle's support");
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (seq[i] < 0 || seq[i] >= o.num_states())
      throw std::domain_error("oracle_logprob: id " + std::to_string(seq[i]) +
                              " outside the oracle's support at position " + std::to_string(i));
  const auto checked_log = [](double p, const char* what) {
    if (!(p > 0.0)) throw std::domain_error(std::string("oracle_logprob: zero-probability ") + what);
    return std::log(p);
  };
  double lp = checked_log(o.lengths(len - 1), "length");
  lp += checked_log(o.initial(seq[0]), "initial state");
  for (std::size_t i = 1; i < seq.size(); ++i)
    lp += checked_log(o.transition(seq[i - 1], seq[i]), "transition");
  return lp;
}

std::shared_ptr<const Vocabulary> oracle_vocabulary(const MarkovOracle& oracle) {
  std::vector<std::string> toks;
  for (int s = 0; s < oracle.num_states(); ++s) toks.push_back("s" + std::to_string(s));
  return std::make_shared<const Vocabulary>(toks);
}

TokenizedCorpus oracle_corpus(const MarkovOracle& oracle, std::size_t count, Rng& rng) {
  std::vector<Sentence> sentences;
  sentences.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Sentence s = oracle_sample(oracle, rng);
    for (auto& id : s) id = oracle_state_to_id(id);
    sentences.push_back(std::move(s));
  }
  return TokenizedCorpus(std::move(sentences), oracle.max_len(), oracle_vocabulary(oracle));
}

void save_corpus_text(const TokenizedCorpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write corpus: " + path.string());
  for (const auto& s : corpus.sentences()) out << corpus.vocab().decode(s) << '\n';
}

}  // namespace dgsan
