#pragma once

#include <cstdint>
#include <string_view>

namespace robustbias {

/// PCG XSL-RR 128/64 ("pcg64"). Chosen over std:: engines and distributions
/// because their outputs are not pinned across standard libraries.
///
/// Gaussians come from the Box-Muller transform on two uniforms
/// u1 in (0, 1], u2 in [0, 1): r = sqrt(-2 ln u1), (r cos 2 pi u2, r sin 2 pi u2);
/// the sine half is cached for the next call.
class Pcg64 {
 public:
  Pcg64(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next();
  /// 53-bit uniform in [0, 1).
  double uniform();
  /// Uniform in (0, 1].
  double uniform_open_low();
  double normal();
  /// Unbiased integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound);

 private:
  void step();

  unsigned __int128 state_ = 0;
  unsigned __int128 inc_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

/// SplitMix64 finaliser; used to key independent streams by cell coordinates.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t combine_seed(std::uint64_t a, std::uint64_t b);
/// FNV-1a over the bytes of a tag, finalised with mix64.
std::uint64_t hash_tag(std::string_view tag);

}  // namespace robustbias
