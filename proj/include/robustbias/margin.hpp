#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>

#include "robustbias/robust_loss.hpp"

namespace robustbias {

struct UndefinedMarginError : std::domain_error {
  using std::domain_error::domain_error;
};
struct OracleRangeError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct MarginReport {
  Vector per_point;
  double value = 0.0;         // min of per_point
  std::size_t attained = 0;   // lowest index attaining the min
};

/// y <w, x> / ||w||_{p*}
double point_margin(std::span<const double> w, std::span<const double> x, double y, const NormExponent& p);

/// (y <w, x> - eps ||w||_{p*}) / ||w||_{r*}: the lr distance from the
/// hyperplane to the whole perturbation ball.
double robust_point_margin(std::span<const double> w, std::span<const double> x, double y, const ThreatModel& tm,
                           const NormExponent& r);

MarginReport robust_margin_report(std::span<const double> w, const Dataset& data, const ThreatModel& tm,
                                  const NormExponent& r);

struct MarginEstimate {
  double value = 0.0;
  bool separable = false;
  Vector w;
};

/// lp-margin of the data estimated with steepest descent in the l_{p*}
/// geometry at eps = 0: min_i y_i <w, x_i> / ||w||_{p*} after `iters` steps.
/// Reports value 0 and separable = false when a point is left misclassified.
MarginEstimate dataset_margin(const Dataset& data, const NormExponent& p, long iters = 100000);

/// l_inf margin through coordinate descent (the p = inf case above).
MarginEstimate dataset_eps_star(const Dataset& data, long iters = 100000);

/// (eps, p)-separability; eps = 0 means plain linear separability.
bool is_separable(const Dataset& data, const ThreatModel& tm, long iters = 100000);

struct OracleResult {
  double value = 0.0;
  Vector direction;  // unit lr norm
};

/// max over w != 0 of min_i (y_i <w, x_i> - eps ||w||_{p*}) / ||w||_r, by
/// angular grid search (1e-4 rad) plus a 1e-6 refinement. d <= 3 only;
/// d = 3 uses a coarse-to-fine search over the sphere.
OracleResult max_robust_margin_oracle(const Dataset& data, const ThreatModel& tm, const NormExponent& r);

}  // namespace robustbias
