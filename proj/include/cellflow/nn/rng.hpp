#pragma once

#include <cstdint>
#include <string_view>

#include "cellflow/nn/tensor.hpp"

namespace cellflow::nn {

/// Snapshot of a generator: the stream key and how many 64-bit words have
/// been drawn from it.
struct RngState {
  static constexpr std::string_view algorithm = "splitmix64-counter";
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;
  friend bool operator==(const RngState&, const RngState&) = default;
};

/// Counter-based SplitMix64. Word i of a stream is
///   mix64(seed + (i + 1) * 0x9E3779B97F4A7C15)
/// with mix64 the SplitMix64 finaliser, so a stream is fully described by
/// (seed, counter). uniform() maps the top 53 bits to (0, 1); normal()
/// consumes exactly two words (Box-Muller, cosine branch).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_{seed, 0} {}
  explicit Rng(RngState state) : state_(state) {}

  std::uint64_t next_u64();
  double uniform();
  double normal();
  /// Integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Independent child stream keyed by (this seed, key). Does not advance this stream.
  Rng split(std::uint64_t key) const;

  const RngState& state() const noexcept { return state_; }

 private:
  RngState state_;
};

std::uint64_t mix64(std::uint64_t z);
/// FNV-1a over the bytes of s, finalised with mix64.
std::uint64_t hash_string(std::string_view s);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key);

/// rows x cols of i.i.d. N(0, scale^2).
Tensor gaussian_sample(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0);

}  // namespace cellflow::nn
