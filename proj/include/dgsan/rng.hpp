#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace dgsan {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used for seed derivation and hashing.
std::uint64_t mix64(std::uint64_t x);

/// Derives an independent generator from a root seed and a fixed label.
/// The same (seed, label) pair always yields the same stream.
Rng split_rng(std::uint64_t seed, std::string_view label);

/// Uniform draw in [0, 1).
double uniform01(Rng& rng);

/// Draws an index from an unnormalized nonnegative weight vector by inverse CDF.
int sample_categorical(std::span<const double> weights, Rng& rng);

}  // namespace dgsan
