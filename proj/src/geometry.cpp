#include "robustbias/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace robustbias {

namespace {

constexpr double kLogSpaceRange = 1e8;

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

std::size_t argmax_abs(std::span<const double> v) {
  std::size_t best = 0;
  double best_val = -1.0;
  for (std::size_t j = 0; j < v.size(); ++j) {
    const double a = std::abs(v[j]);
    if (a > best_val) {  // strict: lowest index wins ties
      best_val = a;
      best = j;
    }
  }
  return best;
}

}  // namespace

NormExponent NormExponent::finite(double p) {
  if (!std::isfinite(p) || p < 1.0) {
    throw std::invalid_argument("norm exponent must be a finite value >= 1, got " + std::to_string(p));
  }
  if (p == 1.0) return {1.0, false, 0.0, true};
  return {p, false, p / (p - 1.0), false};
}

NormExponent NormExponent::infinity() { return {0.0, true, 1.0, false}; }

NormExponent NormExponent::parse(const std::string& text) {
  if (text == "inf" || text == "infinity" || text == "Inf" || text == "INF") return infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("cannot parse norm exponent '" + text + "'");
  }
  if (used != text.size()) throw std::invalid_argument("cannot parse norm exponent '" + text + "'");
  if (std::isinf(v)) return infinity();
  return finite(v);
}

double NormExponent::value() const {
  return infinite_ ? std::numeric_limits<double>::infinity() : value_;
}

double NormExponent::reciprocal() const { return infinite_ ? 0.0 : 1.0 / value_; }

NormExponent NormExponent::dual() const {
  return NormExponent(conj_value_, conj_infinite_, value_, infinite_);
}

std::string NormExponent::to_string() const {
  if (infinite_) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", value_);
  return buf;
}

bool NormExponent::operator==(const NormExponent& other) const {
  if (infinite_ != other.infinite_) return false;
  return infinite_ || value_ == other.value_;
}

double lp_norm(std::span<const double> v, const NormExponent& p) {
  if (p.is_infinite()) return max_abs(v);
  if (p.is_one()) {
    double s = 0.0;
    for (double x : v) s += std::abs(x);
    return s;
  }
  const double scale = max_abs(v);
  if (scale == 0.0) return 0.0;
  if (p.is_two()) {
    if (scale > 1e-150 && scale < 1e150) {
      double s = 0.0;
      for (double x : v) s += x * x;
      return std::sqrt(s);
    }
    double s = 0.0;
    for (double x : v) s += (x / scale) * (x / scale);
    return scale * std::sqrt(s);
  }
  const double e = p.value();
  double s = 0.0;
  for (double x : v) s += std::pow(std::abs(x) / scale, e);
  return scale * std::pow(s, 1.0 / e);
}

Vector dual_norm_subgradient(std::span<const double> w, const NormExponent& q) {
  Vector g(w.size(), 0.0);
  const double top = max_abs(w);
  if (top == 0.0) return g;

  if (q.is_one()) {
    for (std::size_t j = 0; j < w.size(); ++j) g[j] = sign(w[j]);
    return g;
  }
  if (q.is_infinite()) {
    const std::size_t j = argmax_abs(w);
    g[j] = sign(w[j]);
    return g;
  }
  const double norm = lp_norm(w, q);
  if (q.is_two()) {
    for (std::size_t j = 0; j < w.size(); ++j) g[j] = w[j] / norm;
    return g;
  }

  const double power = q.value() - 1.0;
  double smallest = top;
  for (double x : w) {
    if (x != 0.0) smallest = std::min(smallest, std::abs(x));
  }
  if (top / smallest > kLogSpaceRange) {
    const double log_norm = std::log(norm);
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (w[j] == 0.0) continue;
      g[j] = sign(w[j]) * std::exp(power * (std::log(std::abs(w[j])) - log_norm));
    }
  } else {
    for (std::size_t j = 0; j < w.size(); ++j) {
      g[j] = sign(w[j]) * std::pow(std::abs(w[j]) / norm, power);
    }
  }
  return g;
}

Vector worst_case_perturbation(std::span<const double> w, std::span<const double> x, double y,
                               const NormExponent& p, double epsilon) {
  if (w.size() != x.size()) throw std::invalid_argument("worst_case_perturbation: dimension mismatch");
  if (epsilon < 0.0) throw std::invalid_argument("worst_case_perturbation: epsilon must be >= 0");
  const Vector v = dual_norm_subgradient(w, p.dual());
  Vector out(x.begin(), x.end());
  if (epsilon == 0.0) return out;
  for (std::size_t j = 0; j < out.size(); ++j) out[j] -= y * epsilon * v[j];
  return out;
}

Vector steepest_direction(std::span<const double> g, const NormExponent& r, bool normalized) {
  Vector d(g.size(), 0.0);
  if (max_abs(g) == 0.0) return d;

  if (r.is_two()) {
    const double scale = normalized ? 1.0 / lp_norm(g, r) : 1.0;
    for (std::size_t j = 0; j < g.size(); ++j) d[j] = -g[j] * scale;
    return d;
  }
  if (r.is_one()) {
    // coordinate descent: only the largest-magnitude coordinate moves
    const std::size_t j = argmax_abs(g);
    d[j] = normalized ? -sign(g[j]) : -g[j];
    return d;
  }

  const NormExponent r_dual = r.dual();
  const Vector s = dual_norm_subgradient(g, r_dual);
  const double scale = normalized ? 1.0 : lp_norm(g, r_dual);
  for (std::size_t j = 0; j < g.size(); ++j) d[j] = -s[j] * scale;
  return d;
}

}  // namespace robustbias
