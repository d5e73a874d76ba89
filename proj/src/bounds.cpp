#include "robustbias/bounds.hpp"

#include <algorithm>
#include <cmath>

namespace robustbias {

namespace {

double inv_sqrt_m(long m) { return 1.0 / std::sqrt(static_cast<double>(m)); }

double log_dim_factor(long d) { return std::sqrt(2.0 * std::log(2.0 * static_cast<double>(d))); }

double require_teacher(const std::optional<double>& v, const char* name) {
  if (!v) throw std::invalid_argument(std::string("interpolator_bound needs ") + name);
  return *v;
}

}  // namespace

void BoundSpec::validate() const {
  if (r != 1 && r != 2) throw BoundRangeError("bounds are available for r = 1 and r = 2 only");
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("epsilon must be >= 0");
  if (m < 1 || d < 1) throw std::invalid_argument("m and d must be >= 1");
  if (!(delta > 0.0 && delta <= 1.0)) throw std::invalid_argument("delta must lie in (0, 1]");
  if (!(rho > 0.0) || !(W > 0.0)) throw std::invalid_argument("rho and W must be > 0");
  if (!(max_linf >= 0.0) || !(max_l2 >= 0.0)) throw std::invalid_argument("data norms must be >= 0");
  if ((teacher_l1 && !(*teacher_l1 >= 0.0)) || (teacher_l2 && !(*teacher_l2 >= 0.0))) {
    throw std::invalid_argument("teacher norms must be >= 0");
  }
}

double clean_rademacher(const BoundSpec& spec) {
  spec.validate();
  if (spec.r == 1) return spec.max_linf * spec.W * log_dim_factor(spec.d) * inv_sqrt_m(spec.m);
  return spec.max_l2 * spec.W * inv_sqrt_m(spec.m);
}

double robust_rademacher_upper(double clean, const BoundSpec& spec) {
  spec.validate();
  if (spec.epsilon == 0.0) return clean;
  const double expo = spec.p.dual().reciprocal() - 1.0 / static_cast<double>(spec.r);
  const double dim = std::max(std::pow(static_cast<double>(spec.d), expo), 1.0);
  return clean + spec.epsilon * spec.W * 0.5 * inv_sqrt_m(spec.m) * dim;
}

double confidence_term(double delta, long m) {
  return 3.0 * std::sqrt(std::log(2.0 / delta) / (2.0 * static_cast<double>(m)));
}

double interpolator_bound(const BoundSpec& spec) {
  spec.validate();
  const double pre = 2.0 * inv_sqrt_m(spec.m);
  double core = 0.0;
  if (spec.r == 1) {
    const double w1 = require_teacher(spec.teacher_l1, "the teacher l1 norm");
    core = spec.max_linf * w1 * log_dim_factor(spec.d) + spec.epsilon * w1;
  } else {
    const double w2 = require_teacher(spec.teacher_l2, "the teacher l2 norm");
    const double expo = std::max(spec.p.dual().reciprocal() - 0.5, 0.0);
    core = spec.max_l2 * w2 + spec.epsilon * w2 * std::pow(static_cast<double>(spec.d), expo);
  }
  return pre * core + confidence_term(spec.delta, spec.m);
}

RateCase parse_rate_case(const std::string& text) {
  if (text == "DD") return RateCase::DD;
  if (text == "SD") return RateCase::SD;
  if (text == "DS") return RateCase::DS;
  if (text == "SS") return RateCase::SS;
  throw std::invalid_argument("unknown rate case '" + text + "' (expected DD, SD, DS or SS)");
}

std::string to_string(RateCase c) {
  switch (c) {
    case RateCase::DD: return "DD";
    case RateCase::SD: return "SD";
    case RateCase::DS: return "DS";
    case RateCase::SS: return "SS";
  }
  return "?";
}

std::pair<double, double> case_rates(RateCase c, double d, double k, double epsilon, double m) {
  if (!(k >= 0.0 && k <= d) || !(d >= 1.0) || !(m > 0.0)) throw std::invalid_argument("case_rates needs 0 <= k <= d and m > 0");
  const double sl = std::sqrt(std::log(d));
  const double sm = std::sqrt(m);
  const double skd = std::sqrt(k * d);
  switch (c) {
    case RateCase::DD: return {(d * sl + epsilon * d) / sm, (d + epsilon * d) / sm};
    case RateCase::SD: return {(k * sl + epsilon * k) / sm, (skd + epsilon * skd) / sm};
    case RateCase::DS: return {(d * sl + epsilon * d) / sm, (skd + epsilon * d) / sm};
    case RateCase::SS: return {(k * sl + epsilon * k) / sm, (k + epsilon * skd) / sm};
  }
  return {0.0, 0.0};
}

}  // namespace robustbias
