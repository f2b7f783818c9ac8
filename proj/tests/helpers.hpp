#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "dgsan/corpus.hpp"
#include "dgsan/models.hpp"

namespace dgsan::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("dgsan-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  std::filesystem::path write(const std::string& name, const std::vector<std::string>& lines) const {
    const auto p = path_ / name;
    std::ofstream out(p);
    for (const auto& l : lines) out << l << '\n';
    return p;
  }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Three-state chain with every sentence of length three.
inline MarkovOracle three_state_oracle() {
  Eigen::VectorXd initial(3);
  initial << 0.5, 0.3, 0.2;
  Eigen::MatrixXd transition(3, 3);
  transition << 0.6, 0.3, 0.1,
                0.2, 0.6, 0.2,
                0.3, 0.2, 0.5;
  Eigen::VectorXd lengths(3);
  lengths << 0.0, 0.0, 1.0;
  return MarkovOracle(initial, transition, lengths);
}

/// Oracle probabilities over `enumerate_sequences(vocab_size, length)`;
/// sequences containing a special id get zero mass.
inline Eigen::VectorXd oracle_sequence_distribution(const MarkovOracle& oracle, int vocab_size, int length) {
  const auto seqs = enumerate_sequences(vocab_size, length);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(seqs.size()));
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    Sentence states;
    for (TokenId id : seqs[i]) {
      const int s = oracle_id_to_state(id);
      if (s < 0 || s >= oracle.num_states()) break;
      states.push_back(s);
    }
    if (states.size() != seqs[i].size()) continue;
    try {
      p(static_cast<Eigen::Index>(i)) = std::exp(oracle_logprob(oracle, states));
    } catch (const std::domain_error&) {
    }
  }
  return p;
}

}  // namespace dgsan::testing
