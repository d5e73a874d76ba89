#include "robustbias/margin.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "robustbias/kernels.hpp"
#include "robustbias/optimize.hpp"

namespace robustbias {

namespace {

void require_nonzero(double norm) {
  if (!(norm > 0.0)) throw UndefinedMarginError("margin of the zero predictor is undefined");
}

// Objective of the oracle for a direction v (any nonzero scale).
struct OracleObjective {
  const Dataset& data;
  const ThreatModel& tm;
  NormExponent r;
  NormExponent p_dual;

  double operator()(std::span<const double> v) const {
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < data.m(); ++i) worst = std::min(worst, data.labels[i] * dot(data.samples.row(i), v));
    const double pen = tm.epsilon == 0.0 ? 0.0 : tm.epsilon * lp_norm(v, p_dual);
    return (worst - pen) / lp_norm(v, r);
  }
};

struct Best {
  double value = -std::numeric_limits<double>::infinity();
  std::int64_t index = -1;

  void offer(double v, std::int64_t i) {
    if (v > value || (v == value && i < index) || index < 0) {
      value = v;
      index = i;
    }
  }
};

// Parallel argmax over indices [0, n); ties go to the lowest index whatever
// the thread layout.
template <class F>
Best grid_argmax(std::int64_t n, F&& eval) {
  Best best;
#pragma omp parallel
  {
    Best local;
#pragma omp for schedule(static) nowait
    for (std::int64_t k = 0; k < n; ++k) local.offer(eval(k), k);
#pragma omp critical(robustbias_oracle_reduce)
    if (local.index >= 0) best.offer(local.value, local.index);
  }
  return best;
}

Vector unit_in(Vector v, const NormExponent& r) {
  const double n = lp_norm(v, r);
  for (double& x : v) x /= n;
  return v;
}

OracleResult oracle_1d(const OracleObjective& f) {
  const double up = f(Vector{1.0});
  const double down = f(Vector{-1.0});
  return down > up ? OracleResult{down, {-1.0}} : OracleResult{up, {1.0}};
}

Vector circle(double theta) { return {std::cos(theta), std::sin(theta)}; }

OracleResult oracle_2d(const OracleObjective& f) {
  constexpr double coarse = 1e-4;
  constexpr double fine = 1e-6;
  const auto n = static_cast<std::int64_t>(std::ceil(2.0 * std::numbers::pi / coarse));
  const Best b = grid_argmax(n, [&](std::int64_t k) { return f(circle(static_cast<double>(k) * coarse)); });
  const double center = static_cast<double>(b.index) * coarse;
  const auto half = static_cast<std::int64_t>(std::llround(coarse / fine));
  const Best r = grid_argmax(2 * half + 1, [&](std::int64_t k) {
    return f(circle(center + static_cast<double>(k - half) * fine));
  });
  // the coarse winner sits at k = half, so refinement never loses ground
  return {r.value, unit_in(circle(center + static_cast<double>(r.index - half) * fine), f.r)};
}

Vector sphere(double polar, double azimuth) {
  return {std::sin(polar) * std::cos(azimuth), std::sin(polar) * std::sin(azimuth), std::cos(polar)};
}

// Two unit vectors spanning the tangent plane at unit v.
std::array<Vector, 2> tangent_basis(const Vector& v) {
  Vector a = std::abs(v[0]) < 0.9 ? Vector{1.0, 0.0, 0.0} : Vector{0.0, 1.0, 0.0};
  const double proj = dot(a, v);
  for (int j = 0; j < 3; ++j) a[j] -= proj * v[j];
  const double na = std::sqrt(dot(a, a));
  for (double& x : a) x /= na;
  Vector b = {v[1] * a[2] - v[2] * a[1], v[2] * a[0] - v[0] * a[2], v[0] * a[1] - v[1] * a[0]};
  return {a, b};
}

OracleResult oracle_3d(const OracleObjective& f) {
  // The objective is quasi-concave on the sphere when its maximum is
  // positive, so zooming in on the best few cells of a coarse grid finds it.
  constexpr double coarse = 1e-2;
  constexpr double finest = 1e-6;
  constexpr std::size_t keep = 8;
  constexpr int span = 20;  // each zoom covers +-2 old steps at 1/10 spacing

  const auto n_polar = static_cast<std::int64_t>(std::ceil(std::numbers::pi / coarse)) + 1;
  const auto n_azimuth = static_cast<std::int64_t>(std::ceil(2.0 * std::numbers::pi / coarse));
  auto coarse_point = [&](std::int64_t k) {
    return sphere(static_cast<double>(k / n_azimuth) * coarse, static_cast<double>(k % n_azimuth) * coarse);
  };
  std::vector<std::pair<double, std::int64_t>> scored(static_cast<std::size_t>(n_polar * n_azimuth));
#pragma omp parallel for schedule(static)
  for (std::int64_t k = 0; k < n_polar * n_azimuth; ++k) scored[static_cast<std::size_t>(k)] = {f(coarse_point(k)), k};
  std::partial_sort(scored.begin(), scored.begin() + keep, scored.end(), [](const auto& a, const auto& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  });

  OracleResult best{-std::numeric_limits<double>::infinity(), {}};
  for (std::size_t c = 0; c < keep; ++c) {
    Vector v = coarse_point(scored[c].second);
    double value = scored[c].first;
    for (double h = coarse / 10.0; h >= finest * 0.999; h /= 10.0) {
      const auto [a, b] = tangent_basis(v);
      const std::int64_t side = 2 * span + 1;
      const Best local = grid_argmax(side * side, [&](std::int64_t k) {
        const double s = static_cast<double>(k / side - span) * h;
        const double t = static_cast<double>(k % side - span) * h;
        Vector u = {v[0] + s * a[0] + t * b[0], v[1] + s * a[1] + t * b[1], v[2] + s * a[2] + t * b[2]};
        return f(u);
      });
      if (local.value >= value) {
        const double s = static_cast<double>(local.index / side - span) * h;
        const double t = static_cast<double>(local.index % side - span) * h;
        Vector u = {v[0] + s * a[0] + t * b[0], v[1] + s * a[1] + t * b[1], v[2] + s * a[2] + t * b[2]};
        const double nu = std::sqrt(dot(u, u));
        for (double& x : u) x /= nu;
        v = u;
        value = local.value;
      }
    }
    if (value > best.value) best = {value, v};
  }
  best.direction = unit_in(best.direction, f.r);
  return best;
}

}  // namespace

double point_margin(std::span<const double> w, std::span<const double> x, double y, const NormExponent& p) {
  if (w.size() != x.size()) throw std::invalid_argument("point_margin: dimension mismatch");
  const double n = lp_norm(w, p.dual());
  require_nonzero(n);
  return y * dot(w, x) / n;
}

double robust_point_margin(std::span<const double> w, std::span<const double> x, double y, const ThreatModel& tm,
                           const NormExponent& r) {
  if (w.size() != x.size()) throw std::invalid_argument("robust_point_margin: dimension mismatch");
  const double n = lp_norm(w, r.dual());
  require_nonzero(n);
  const double pen = tm.epsilon == 0.0 ? 0.0 : tm.epsilon * lp_norm(w, tm.p.dual());
  return (y * dot(w, x) - pen) / n;
}

MarginReport robust_margin_report(std::span<const double> w, const Dataset& data, const ThreatModel& tm,
                                  const NormExponent& r) {
  if (data.m() == 0) throw std::invalid_argument("margin of an empty dataset");
  MarginReport rep;
  rep.per_point.resize(data.m());
  for (std::size_t i = 0; i < data.m(); ++i) {
    rep.per_point[i] = robust_point_margin(w, data.samples.row(i), data.labels[i], tm, r);
  }
  const auto it = std::min_element(rep.per_point.begin(), rep.per_point.end());
  rep.value = *it;
  rep.attained = static_cast<std::size_t>(it - rep.per_point.begin());
  return rep;
}

MarginEstimate dataset_margin(const Dataset& data, const NormExponent& p, long iters) {
  OptimizerSpec spec;
  spec.algorithm = Steepest{p.dual()};
  spec.stop = StoppingRule::fixed_iterations(iters);
  const TrainTrace trace = train_linear(data, ThreatModel{p, 0.0}, spec);

  MarginEstimate est;
  est.w = trace.w;
  const double n = lp_norm(trace.w, p.dual());
  if (n == 0.0) return est;
  Vector z(data.m());
  kernels::signed_margins(data.samples, data.labels, trace.w, z);
  const double worst = *std::min_element(z.begin(), z.end());
  if (!(worst > 0.0)) return est;
  est.separable = true;
  est.value = worst / n;
  return est;
}

MarginEstimate dataset_eps_star(const Dataset& data, long iters) {
  return dataset_margin(data, NormExponent::infinity(), iters);
}

bool is_separable(const Dataset& data, const ThreatModel& tm, long iters) {
  const MarginEstimate est = dataset_margin(data, tm.p, iters);
  if (!est.separable) return false;
  return est.value >= tm.epsilon;
}

OracleResult max_robust_margin_oracle(const Dataset& data, const ThreatModel& tm, const NormExponent& r) {
  if (data.d() > 3) throw OracleRangeError("brute-force margin oracle supports d <= 3, got d = " + std::to_string(data.d()));
  if (data.d() == 0 || data.m() == 0) throw std::invalid_argument("margin oracle needs a non-empty dataset");
  const OracleObjective f{data, tm, r, tm.p.dual()};
  switch (data.d()) {
    case 1: return oracle_1d(f);
    case 2: return oracle_2d(f);
    default: return oracle_3d(f);
  }
}

}  // namespace robustbias
