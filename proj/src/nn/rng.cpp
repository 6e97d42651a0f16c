#include "cellflow/nn/rng.hpp"

#include <cmath>
#include <numbers>

#include "cellflow/error.hpp"

namespace cellflow::nn {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return mix64(h);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key) {
  return mix64(mix64(seed ^ kGolden) + key * kGolden);
}

std::uint64_t Rng::next_u64() {
  ++state_.counter;
  return mix64(state_.seed + state_.counter * kGolden);
}

double Rng::uniform() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw InvalidInput("Rng::below(0)");
  // Rejection keeps the result unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

Rng Rng::split(std::uint64_t key) const { return Rng(derive_seed(state_.seed, key)); }

Tensor gaussian_sample(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  if (!(scale >= 0.0)) throw InvalidInput("gaussian_sample: scale must be >= 0");
  Tensor out(rows, cols);
  for (auto& v : out.values()) v = scale * rng.normal();
  return out;
}

}  // namespace cellflow::nn
