#pragma once

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>

#include "robustbias/data.hpp"
#include "robustbias/geometry.hpp"

namespace robustbias {

/// lp ball of radius epsilon around each input.
struct ThreatModel {
  NormExponent p = NormExponent::infinity();
  double epsilon = 0.0;

  ThreatModel() = default;
  ThreatModel(NormExponent p_, double epsilon_);
};

struct LinearModel {
  Vector w;
};

/// f(x; u) = <u_plus^2 - u_minus^2, x>
struct DiagNet {
  Vector u_plus;
  Vector u_minus;

  Vector effective() const;
};

struct AttackError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Per-point exponents a_i = -margin_i + penalty reduced in index order:
/// log sum_i exp(a_i) = max_exponent + log(sum_scaled).
struct ExponentSummary {
  double max_exponent = 0.0;
  double sum_scaled = 0.0;  // sum_i exp(a_i - max_exponent)

  double log_sum() const;
};
ExponentSummary summarize_exponents(std::span<const double> margins, double penalty);

/// Exponents below this are clipped before exp() (double underflow).
inline constexpr double kExponentFloor = -745.0;

/// sum_i exp(-y_i <w, x_i> + epsilon ||w||_{p*}); unnormalised, no 1/m.
double worst_case_exp_loss(const LinearModel& model, const Dataset& data, const ThreatModel& tm);
/// log of the same sum, computed without underflow.
double worst_case_exp_log_loss(const LinearModel& model, const Dataset& data, const ThreatModel& tm);
/// sum_i exp(a_i) (-y_i x_i + epsilon s), s = dual_norm_subgradient(w, p*).
Vector worst_case_exp_grad(const LinearModel& model, const Dataset& data, const ThreatModel& tm);

/// Fraction of points with y <w, x> - epsilon ||w||_{p*} <= 0.
double robust_01_risk(const LinearModel& model, const Dataset& data, const ThreatModel& tm);

struct DiagLossGrads {
  double loss = 0.0;      // (1/m) * worst-case exponential loss of the effective predictor
  double log_loss = 0.0;  // log of `loss`
  Vector grad_plus;
  Vector grad_minus;
  Vector grad_effective;  // includes the 1/m factor
};
DiagLossGrads diag_worst_case_loss_and_grads(const DiagNet& model, const Dataset& data, const ThreatModel& tm);

/// Gradient of the per-sample loss with respect to the input, at (x, y).
/// Only its sign pattern is used by PGD, so a positive rescaling is fine.
using InputGradient = std::function<Vector(std::span<const double> x, double y)>;

/// Input gradient of exp(-y <w, x>) up to a positive factor.
InputGradient linear_input_gradient(const LinearModel& model);

/// l_inf PGD from the clean point: x <- clip(x + step * sign(grad)), `steps`
/// times; step defaults to epsilon / 5. Returned points satisfy
/// |x'_j - x_j| <= epsilon exactly in floating point.
Vector pgd_attack(const InputGradient& loss_grad, std::span<const double> x, double y, const ThreatModel& tm,
                  int steps = 10, std::optional<double> step_size = {});

}  // namespace robustbias
