#include "robustbias/robust_loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "robustbias/kernels.hpp"

namespace robustbias {

namespace {

void check_dims(const Vector& w, const Dataset& data) {
  if (w.size() != data.d()) throw std::invalid_argument("model and dataset dimensions differ");
}

Vector margins_of(const Vector& w, const Dataset& data) {
  Vector z(data.m());
  kernels::signed_margins(data.samples, data.labels, w, z);
  return z;
}

double penalty_of(const Vector& w, const ThreatModel& tm) {
  return tm.epsilon == 0.0 ? 0.0 : tm.epsilon * lp_norm(w, tm.p.dual());
}

// sum_i exp(a_i)(-y_i x_i + epsilon s) with exp() clipped at the floor.
Vector exp_grad(const Vector& w, const Dataset& data, const ThreatModel& tm, const Vector& margins, double penalty,
                double scale) {
  Vector coeff(data.m());
  double total = 0.0;
  for (std::size_t i = 0; i < data.m(); ++i) {
    const double e = std::exp(std::max(-margins[i] + penalty, kExponentFloor)) * scale;
    total += e;
    coeff[i] = -data.labels[i] * e;
  }
  Vector g(data.d());
  kernels::weighted_row_sum(data.samples, coeff, g);
  if (tm.epsilon != 0.0) {
    const Vector s = dual_norm_subgradient(w, tm.p.dual());
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += tm.epsilon * total * s[j];
  }
  return g;
}

}  // namespace

ThreatModel::ThreatModel(NormExponent p_, double epsilon_) : p(p_), epsilon(epsilon_) {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("threat radius must be finite and >= 0");
}

Vector DiagNet::effective() const {
  Vector w(u_plus.size());
  for (std::size_t j = 0; j < w.size(); ++j) w[j] = u_plus[j] * u_plus[j] - u_minus[j] * u_minus[j];
  return w;
}

double ExponentSummary::log_sum() const { return max_exponent + std::log(sum_scaled); }

ExponentSummary summarize_exponents(std::span<const double> margins, double penalty) {
  ExponentSummary s;
  s.max_exponent = -std::numeric_limits<double>::infinity();
  for (double z : margins) s.max_exponent = std::max(s.max_exponent, -z + penalty);
  for (double z : margins) s.sum_scaled += std::exp(-z + penalty - s.max_exponent);
  return s;
}

double worst_case_exp_loss(const LinearModel& model, const Dataset& data, const ThreatModel& tm) {
  check_dims(model.w, data);
  const Vector z = margins_of(model.w, data);
  const double pen = penalty_of(model.w, tm);
  double sum = 0.0;
  for (double zi : z) sum += std::exp(std::max(-zi + pen, kExponentFloor));
  return sum;
}

double worst_case_exp_log_loss(const LinearModel& model, const Dataset& data, const ThreatModel& tm) {
  check_dims(model.w, data);
  return summarize_exponents(margins_of(model.w, data), penalty_of(model.w, tm)).log_sum();
}

Vector worst_case_exp_grad(const LinearModel& model, const Dataset& data, const ThreatModel& tm) {
  check_dims(model.w, data);
  return exp_grad(model.w, data, tm, margins_of(model.w, data), penalty_of(model.w, tm), 1.0);
}

double robust_01_risk(const LinearModel& model, const Dataset& data, const ThreatModel& tm) {
  check_dims(model.w, data);
  const std::size_t correct = kernels::count_margin_above(data.samples, data.labels, model.w, penalty_of(model.w, tm));
  return static_cast<double>(data.m() - correct) / static_cast<double>(data.m());
}

DiagLossGrads diag_worst_case_loss_and_grads(const DiagNet& model, const Dataset& data, const ThreatModel& tm) {
  if (model.u_plus.size() != model.u_minus.size()) throw std::invalid_argument("diag net halves differ in length");
  const Vector w = model.effective();
  check_dims(w, data);
  const Vector z = margins_of(w, data);
  const double pen = penalty_of(w, tm);
  const double inv_m = 1.0 / static_cast<double>(data.m());

  DiagLossGrads out;
  double sum = 0.0;
  for (double zi : z) sum += std::exp(std::max(-zi + pen, kExponentFloor));
  out.loss = sum * inv_m;
  out.log_loss = summarize_exponents(z, pen).log_sum() + std::log(inv_m);
  out.grad_effective = exp_grad(w, data, tm, z, pen, inv_m);
  out.grad_plus.resize(w.size());
  out.grad_minus.resize(w.size());
  for (std::size_t j = 0; j < w.size(); ++j) {
    out.grad_plus[j] = 2.0 * model.u_plus[j] * out.grad_effective[j];
    out.grad_minus[j] = -2.0 * model.u_minus[j] * out.grad_effective[j];
  }
  return out;
}

InputGradient linear_input_gradient(const LinearModel& model) {
  return [w = model.w](std::span<const double> x, double y) {
    // d/dx exp(-y<w,x>) = -y exp(-y<w,x>) w; the clamp keeps the factor positive and finite
    const double factor = std::exp(std::clamp(-y * dot(w, x), -700.0, 700.0));
    Vector g(w.size());
    for (std::size_t j = 0; j < w.size(); ++j) g[j] = -y * factor * w[j];
    return g;
  };
}

Vector pgd_attack(const InputGradient& loss_grad, std::span<const double> x, double y, const ThreatModel& tm,
                  int steps, std::optional<double> step_size) {
  if (!tm.p.is_infinite()) throw std::invalid_argument("pgd_attack supports l_inf threat models only");
  if (!(tm.epsilon > 0.0)) throw std::invalid_argument("pgd_attack needs epsilon > 0");
  if (steps < 0) throw std::invalid_argument("pgd_attack: negative step count");
  const double alpha = step_size.value_or(tm.epsilon / 5.0);
  const double eps = tm.epsilon;

  Vector cur(x.begin(), x.end());
  for (int t = 0; t < steps; ++t) {
    const Vector g = loss_grad(cur, y);
    if (g.size() != cur.size()) throw AttackError("input gradient has wrong dimension");
    for (std::size_t j = 0; j < cur.size(); ++j) {
      if (!std::isfinite(g[j])) throw AttackError("non-finite input gradient during PGD");
      double v = std::clamp(cur[j] + alpha * sign(g[j]), x[j] - eps, x[j] + eps);
      // x_j +- eps may round past the ball; walk back until the difference fits
      while (std::abs(v - x[j]) > eps) v = std::nextafter(v, x[j]);
      cur[j] = v;
    }
  }
  return cur;
}

}  // namespace robustbias
