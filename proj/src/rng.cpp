#include "robustbias/rng.hpp"

#include <cmath>
#include <numbers>

namespace robustbias {

namespace {

constexpr unsigned __int128 kMultiplier =
    (static_cast<unsigned __int128>(0x2360ED051FC65DA4ULL) << 64) | 0x4385DF649FCCF645ULL;

}  // namespace

Pcg64::Pcg64(std::uint64_t seed, std::uint64_t stream) {
  // pcg_setseq_128_srandom_r with 64-bit seed/stream widened to 128 bits
  const unsigned __int128 initstate =
      (static_cast<unsigned __int128>(mix64(seed ^ 0x9E3779B97F4A7C15ULL)) << 64) | seed;
  const unsigned __int128 initseq = (static_cast<unsigned __int128>(mix64(stream)) << 64) | stream;
  state_ = 0;
  inc_ = (initseq << 1) | 1u;
  step();
  state_ += initstate;
  step();
}

void Pcg64::step() { state_ = state_ * kMultiplier + inc_; }

std::uint64_t Pcg64::next() {
  step();
  const auto hi = static_cast<std::uint64_t>(state_ >> 64);
  const auto lo = static_cast<std::uint64_t>(state_);
  const std::uint64_t xsl = hi ^ lo;
  const unsigned rot = static_cast<unsigned>(state_ >> 122);
  return (xsl >> rot) | (xsl << ((64u - rot) & 63u));
}

double Pcg64::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Pcg64::uniform_open_low() { return (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53; }

double Pcg64::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_normal_;
  }
  const double u1 = uniform_open_low();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  cached_normal_ = radius * std::sin(angle);
  has_cached_ = true;
  return radius * std::cos(angle);
}

std::uint64_t Pcg64::below(std::uint64_t bound) {
  if (bound <= 1) return 0;
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t r = next();
    if (r >= threshold) return r % bound;
  }
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t combine_seed(std::uint64_t a, std::uint64_t b) { return mix64(mix64(a) ^ (b + 0x632BE59BD9B4E019ULL)); }

std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return mix64(h);
}

}  // namespace robustbias
