#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dgsan/tensor.hpp"

namespace dgsan {

using ParameterValues = std::vector<std::pair<std::string, ad::Matrix>>;

// Binary layout, all integers little-endian:
//   "DGSN1"
//   repeated until EOF:
//     u32 name length, name bytes,
//     u32 rank, rank x u64 dims,
//     product(dims) x f64 payload, row-major.
// Parameters are written as rank-2 arrays; rank-1 arrays load as 1 x n.

void save_checkpoint(const std::filesystem::path& path, const ParameterValues& params);

template <typename Named>
void save_checkpoint_from(const std::filesystem::path& path, const Named& named) {
  ParameterValues values;
  for (const auto& [name, var] : named) values.emplace_back(name, var.value());
  save_checkpoint(path, values);
}

/// Throws ConfigError on unreadable files, bad magic or truncated records.
ParameterValues load_checkpoint(const std::filesystem::path& path);

}  // namespace dgsan
