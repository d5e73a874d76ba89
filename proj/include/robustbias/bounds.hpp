#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "robustbias/geometry.hpp"

namespace robustbias {

struct BoundRangeError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct BoundSpec {
  int r = 2;  // 1 or 2
  NormExponent p = NormExponent::infinity();
  double epsilon = 0.0;
  long m = 1;
  long d = 1;
  double delta = 0.05;
  double rho = 1.0;
  double W = 1.0;  // norm cap of the hypothesis class in lr
  double max_linf = 1.0;
  double max_l2 = 1.0;
  std::optional<double> teacher_l1;
  std::optional<double> teacher_l2;

  void validate() const;
};

/// r = 1: max|x|_inf W sqrt(2 log 2d) / sqrt(m); r = 2: max|x|_2 W / sqrt(m).
double clean_rademacher(const BoundSpec& spec);

/// clean + eps W / (2 sqrt m) * max(d^(1/p* - 1/r), 1)
double robust_rademacher_upper(double clean, const BoundSpec& spec);

/// Robust 0-1 risk bound for a robust interpolator with teacher norms:
///   r = 1: (2/sqrt m)(max|x|_inf |w*|_1 sqrt(2 log 2d) + eps |w*|_1) + conf
///   r = 2: (2/sqrt m)(max|x|_2 |w*|_2 + eps |w*|_2 d^max(1/p* - 1/2, 0)) + conf
/// with conf = 3 sqrt(log(2/delta) / (2m)). Unclamped; see reported_bound.
double interpolator_bound(const BoundSpec& spec);
double confidence_term(double delta, long m);
/// A bound on a probability is reported as min(1, value).
inline double reported_bound(double raw) { return raw < 1.0 ? raw : 1.0; }

enum class RateCase { DD, SD, DS, SS };
RateCase parse_rate_case(const std::string& text);
std::string to_string(RateCase c);

/// Theta-rates with unit constants and natural log, as (r = 1, r = 2).
/// The first letter is the teacher (Dense / k-Sparse), the second the data.
std::pair<double, double> case_rates(RateCase c, double d, double k, double epsilon, double m);

}  // namespace robustbias
