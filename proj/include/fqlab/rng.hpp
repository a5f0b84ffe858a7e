#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace fqlab {

using Rng = std::mt19937_64;

/// Seed for the stream owned by `label`, derived from the master seed.
/// Each consumer (env sampling, init, minibatch, exploration) gets its own
/// stream so adding a consumer never shifts another one.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label);

inline Rng make_stream(std::uint64_t master, std::string_view label) {
  return Rng(derive_seed(master, label));
}

double uniform01(Rng& rng);
std::size_t uniform_index(Rng& rng, std::size_t n);

/// Draws an index from a discrete distribution given by `probs` (need not
/// be normalized exactly; the last positive entry absorbs rounding).
std::size_t sample_discrete(Rng& rng, std::span<const double> probs);

}  // namespace fqlab
