#pragma once

#include <span>
#include <string>

#include "robustbias/linalg.hpp"

namespace robustbias {

/// An lp exponent in [1, inf]. Infinity is a tag, never a large float, and the
/// conjugate exponent is stored alongside so dual().dual() round-trips exactly.
class NormExponent {
 public:
  /// Throws std::invalid_argument unless 1 <= p < inf.
  static NormExponent finite(double p);
  static NormExponent infinity();
  static NormExponent one() { return finite(1.0); }
  static NormExponent two() { return finite(2.0); }
  /// Accepts "inf", "infinity" or a decimal number >= 1.
  static NormExponent parse(const std::string& text);

  bool is_infinite() const { return infinite_; }
  bool is_one() const { return !infinite_ && value_ == 1.0; }
  bool is_two() const { return !infinite_ && value_ == 2.0; }
  /// +inf for the tagged exponent; only for display and comparisons.
  double value() const;
  /// 1/p, with 1/inf = 0 exactly.
  double reciprocal() const;
  NormExponent dual() const;
  std::string to_string() const;

  bool operator==(const NormExponent& other) const;

 private:
  NormExponent(double value, bool infinite, double conj, bool conj_infinite)
      : value_(value), conj_value_(conj), infinite_(infinite), conj_infinite_(conj_infinite) {}

  double value_;
  double conj_value_;
  bool infinite_;
  bool conj_infinite_;
};

inline NormExponent dual_exponent(const NormExponent& p) { return p.dual(); }

double lp_norm(std::span<const double> v, const NormExponent& p);

/// A deterministic element g of the subdifferential of ||.||_q at w, with
/// ||g||_{q*} <= 1 and <g, w> = ||w||_q. Zero at w = 0.
Vector dual_norm_subgradient(std::span<const double> w, const NormExponent& q);

/// Closed-form minimiser of y<w, x'> over the lp ball of radius epsilon
/// around x: x' = x - y * epsilon * v with v attaining ||w||_{p*}.
Vector worst_case_perturbation(std::span<const double> w, std::span<const double> x, double y,
                               const NormExponent& p, double epsilon);

/// Steepest-descent direction for gradient g in the lr geometry. Normalised:
/// ||d||_r = 1 and <d, g> = -||g||_{r*}. Unnormalised: scaled by ||g||_{r*}.
Vector steepest_direction(std::span<const double> g, const NormExponent& r, bool normalized);

}  // namespace robustbias
