#include "fqlab/rng.hpp"

#include <stdexcept>

namespace fqlab {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::string_view label) {
  // FNV-1a over the label, then mixed with the master seed.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(master) ^ h);
}

double uniform01(Rng& rng) {
  // 53 random bits -> [0, 1); avoids the libstdc++ generate_canonical edge
  // case that can return exactly 1.
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
}

std::size_t sample_discrete(Rng& rng, std::span<const double> probs) {
  if (probs.empty()) throw std::invalid_argument("sample_discrete: empty distribution");
  double total = 0.0;
  for (double p : probs) total += p;
  double u = uniform01(rng) * total;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_positive = i;
    if (u < probs[i]) return i;
    u -= probs[i];
  }
  return last_positive;
}

}  // namespace fqlab
