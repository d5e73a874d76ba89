#include "robustbias/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "robustbias/kernels.hpp"

namespace robustbias {

namespace {

constexpr int kMaxHalvings = 30;
constexpr long kDenseLogUntil = 1000;
constexpr double kLogGrowth = 1.05;
constexpr long kMarginRefresh = 1000;

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double min_of(std::span<const double> v) { return *std::min_element(v.begin(), v.end()); }

long next_log_after(long t) {
  if (t < kDenseLogUntil) return t + 1;
  return std::max(t + 1, static_cast<long>(std::floor(static_cast<double>(t) * kLogGrowth)));
}

struct Iterate {
  Vector w;
  Vector z;  // y_i <w, x_i>
  double penalty = 0.0;
  ExponentSummary summary;

  double log_loss() const { return summary.log_sum(); }
};

double penalty_for(std::span<const double> w, const ThreatModel& tm) {
  return tm.epsilon == 0.0 ? 0.0 : tm.epsilon * lp_norm(w, tm.p.dual());
}

void refresh(Iterate& it, const Dataset& data, const ThreatModel& tm) {
  it.z.resize(data.m());
  kernels::signed_margins(data.samples, data.labels, it.w, it.z);
  it.penalty = penalty_for(it.w, tm);
  it.summary = summarize_exponents(it.z, it.penalty);
}

// Gradient divided by exp(max exponent) so it stays representable as the
// loss underflows.
Vector scaled_gradient(const Iterate& it, const Dataset& data, const ThreatModel& tm) {
  const double amax = it.summary.max_exponent;
  Vector coeff(data.m());
  double total = 0.0;
  for (std::size_t i = 0; i < data.m(); ++i) {
    const double e = std::exp(-it.z[i] + it.penalty - amax);
    total += e;
    coeff[i] = -data.labels[i] * e;
  }
  Vector g(data.d());
  kernels::weighted_row_sum(data.samples, coeff, g);
  if (tm.epsilon == 0.0) return g;
  const double pen = tm.epsilon * total;
  const NormExponent q = tm.p.dual();
  const Vector s = dual_norm_subgradient(it.w, q);
  for (std::size_t j = 0; j < g.size(); ++j) g[j] += pen * s[j];
  // Where the penalty norm has a kink, sign(0) = 0 is not the minimal-norm
  // element of the loss subdifferential: a coordinate whose smooth part is
  // dominated by the penalty weight has no descent. Steepest directions need
  // the minimal element or CD picks an ascent coordinate and cycles.
  if (q.is_one()) {
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (it.w[j] == 0.0) g[j] = std::copysign(std::max(std::abs(g[j]) - pen, 0.0), g[j]);
    }
  } else if (std::all_of(it.w.begin(), it.w.end(), [](double v) { return v == 0.0; })) {
    const double n = lp_norm(g, tm.p);
    const double keep = n > pen ? 1.0 - pen / n : 0.0;
    for (double& v : g) v *= keep;
  }
  return g;
}

TraceRow describe(long t, std::span<const double> w, std::span<const double> z, double penalty, double log_loss,
                  const NormExponent& r) {
  TraceRow row;
  row.iteration = t;
  row.log_loss = log_loss;
  row.norm_l1 = lp_norm(w, NormExponent::one());
  row.norm_l2 = lp_norm(w, NormExponent::two());
  row.norm_linf = lp_norm(w, NormExponent::infinity());
  const double nr = lp_norm(w, r);
  if (nr > 0.0) row.margin = (min_of(z) - penalty) / nr;
  return row;
}

}  // namespace

void StoppingRule::validate() const {
  if (!(loss_threshold >= 0.0) || !std::isfinite(loss_threshold)) throw std::invalid_argument("loss threshold must be >= 0");
  if (max_iters <= 0) throw std::invalid_argument("max_iters must be > 0");
}

void OptimizerSpec::validate() const {
  stop.validate();
  if (const auto* a = std::get_if<AdaptiveLr>(&lr)) {
    if (!std::holds_alternative<Steepest>(algorithm)) throw std::invalid_argument("adaptive learning rate needs a steepest-descent algorithm");
    if (!(a->eta_max > 0.0)) throw std::invalid_argument("eta_max must be > 0");
  } else if (!(std::get<ConstantLr>(lr).eta > 0.0)) {
    throw std::invalid_argument("learning rate must be > 0");
  }
}

std::string to_string(StopReason reason) { return reason == StopReason::threshold ? "threshold" : "max_iters"; }

double adaptive_lr(double B, double epsilon, double loss, double eta_max) {
  if (!(loss > 0.0)) throw std::domain_error("adaptive_lr: loss must be > 0");
  if (!(B >= 0.0)) throw std::domain_error("adaptive_lr: B must be >= 0");
  const double scale = (B + epsilon) * (B + epsilon);
  if (scale == 0.0) return eta_max;
  return std::min(eta_max, 1.0 / (scale * loss));
}

double adaptive_lr_from_log(double B, double epsilon, double log_loss, double eta_max) {
  if (std::isnan(log_loss) || log_loss == -std::numeric_limits<double>::infinity()) {
    throw std::domain_error("adaptive_lr: loss must be > 0");
  }
  if (!(B >= 0.0)) throw std::domain_error("adaptive_lr: B must be >= 0");
  const double scale = B + epsilon;
  if (scale == 0.0) return eta_max;
  const double log_eta = -2.0 * std::log(scale) - log_loss;
  return log_eta >= std::log(eta_max) ? eta_max : std::exp(log_eta);
}

double normalized_robust_margin(std::span<const double> w, const Dataset& data, const ThreatModel& tm,
                                const NormExponent& r) {
  if (w.size() != data.d()) throw std::invalid_argument("model and dataset dimensions differ");
  const double nr = lp_norm(w, r);
  if (nr == 0.0) throw std::domain_error("margin of the zero predictor is undefined");
  Vector z(data.m());
  kernels::signed_margins(data.samples, data.labels, w, z);
  return (min_of(z) - penalty_for(w, tm)) / nr;
}

TrainTrace train_linear(const Dataset& data, const ThreatModel& tm, const OptimizerSpec& spec,
                        std::span<const double> w0) {
  spec.validate();
  const auto* steep = std::get_if<Steepest>(&spec.algorithm);
  if (!steep) throw std::invalid_argument("train_linear needs a steepest-descent algorithm");
  if (data.m() == 0) throw std::invalid_argument("train_linear: empty dataset");
  const NormExponent r = steep->r;
  const NormExponent r_dual = r.dual();
  const bool coordinate = r.is_one();

  TrainTrace trace;
  trace.r = r;
  Iterate cur;
  cur.w = w0.empty() ? Vector(data.d(), 0.0) : Vector(w0.begin(), w0.end());
  if (cur.w.size() != data.d()) throw std::invalid_argument("w0 has the wrong dimension");
  if (!all_finite(cur.w)) throw std::invalid_argument("w0 must be finite");
  refresh(cur, data, tm);

  const double B = data.max_linf();
  const double log_threshold = std::log(spec.stop.loss_threshold);
  long next_log = 0;
  Iterate trial;

  for (long t = 0;; ++t) {
    const double log_loss = cur.log_loss();
    if (!std::isfinite(log_loss) && log_loss != -std::numeric_limits<double>::infinity()) {
      trace.w = cur.w;
      throw DivergenceError("training loss became non-finite", std::move(trace));
    }
    const bool done = log_loss <= log_threshold;
    if (done || t >= spec.stop.max_iters) {
      TraceRow row = describe(t, cur.w, cur.z, cur.penalty, log_loss, r);
      if (std::isfinite(log_loss)) {
        row.log_grad_dual_norm = cur.summary.max_exponent + std::log(lp_norm(scaled_gradient(cur, data, tm), r_dual));
      }
      if (trace.rows.empty() || trace.rows.back().iteration != t) trace.rows.push_back(row);
      trace.stop = done ? StopReason::threshold : StopReason::max_iters;
      trace.iterations = t;
      trace.w = cur.w;
      return trace;
    }

    const Vector g = scaled_gradient(cur, data, tm);
    const double amax = cur.summary.max_exponent;
    const Vector dir = steepest_direction(g, r, spec.normalized_update);
    const double eta = std::holds_alternative<AdaptiveLr>(spec.lr)
                           ? adaptive_lr_from_log(B, tm.epsilon, log_loss, std::get<AdaptiveLr>(spec.lr).eta_max)
                           : std::get<ConstantLr>(spec.lr).eta;
    // unnormalised directions are homogeneous of degree one in g
    const double base = spec.normalized_update ? eta : std::exp(std::log(eta) + amax);

    std::size_t coord = 0;
    if (coordinate) {
      while (coord < dir.size() && dir[coord] == 0.0) ++coord;
    }
    auto try_step = [&](double mult) {
      trial.w = cur.w;
      if (coordinate) {
        if (coord == dir.size()) {
          trial.z = cur.z;
        } else {
          trial.w[coord] += mult * dir[coord];
          trial.z.resize(data.m());
          const double step = trial.w[coord] - cur.w[coord];
          for (std::size_t i = 0; i < data.m(); ++i) trial.z[i] = cur.z[i] + data.labels[i] * data.samples(i, coord) * step;
        }
        trial.penalty = penalty_for(trial.w, tm);
        trial.summary = summarize_exponents(trial.z, trial.penalty);
      } else {
        for (std::size_t j = 0; j < dir.size(); ++j) trial.w[j] += mult * dir[j];
        refresh(trial, data, tm);
      }
      return trial.log_loss();
    };

    int halvings = 0;
    bool forced = false;
    double mult = base;
    double next = try_step(mult);
    while (!(next <= log_loss) && halvings < kMaxHalvings) {
      mult *= 0.5;
      ++halvings;
      next = try_step(mult);
    }
    if (!(next <= log_loss)) {
      forced = true;
      mult = base;
      try_step(mult);
    }

    if (t == next_log) {
      TraceRow row = describe(t, cur.w, cur.z, cur.penalty, log_loss, r);
      row.step = spec.normalized_update ? mult : mult * std::exp(-amax);
      row.halvings = halvings;
      row.forced = forced;
      row.log_grad_dual_norm = amax + std::log(lp_norm(g, r_dual));
      trace.rows.push_back(row);
      next_log = next_log_after(t);
    }
    if (halvings > 0) ++trace.halving_steps;
    if (forced) ++trace.forced_steps;

    if (!all_finite(trial.w)) {
      trace.w = cur.w;
      trace.iterations = t;
      throw DivergenceError("iterate became non-finite at iteration " + std::to_string(t + 1), std::move(trace));
    }
    std::swap(cur, trial);
    if (coordinate && (t + 1) % kMarginRefresh == 0) refresh(cur, data, tm);
  }
}

TrainTrace train_diagnet(const Dataset& data, const ThreatModel& tm, double lr, double alpha, StoppingRule stop) {
  stop.validate();
  if (!(lr > 0.0) || !(alpha > 0.0)) throw std::invalid_argument("train_diagnet: lr and alpha must be > 0");
  if (data.m() == 0 || data.d() == 0) throw std::invalid_argument("train_diagnet: empty dataset");

  const double init = alpha / std::sqrt(2.0 * static_cast<double>(data.d()));
  DiagNet net{Vector(data.d(), init), Vector(data.d(), init)};
  TrainTrace trace;
  trace.loss_is_mean = true;
  trace.r = NormExponent::one();
  const double log_threshold = std::log(stop.loss_threshold);
  long next_log = 0;

  for (long t = 0;; ++t) {
    const DiagLossGrads lg = diag_worst_case_loss_and_grads(net, data, tm);
    const Vector w = net.effective();
    const double sq = dot(net.u_plus, net.u_plus) + dot(net.u_minus, net.u_minus);
    const double l1 = lp_norm(w, NormExponent::one());
    trace.max_half_bridge_excess = std::max(trace.max_half_bridge_excess, l1 - 0.5 * sq);
    trace.max_full_bridge_excess = std::max(trace.max_full_bridge_excess, l1 - sq);

    auto finish = [&](StopReason reason) {
      trace.stop = reason;
      trace.iterations = t;
      trace.w = w;
      trace.u_plus = net.u_plus;
      trace.u_minus = net.u_minus;
    };
    if (!std::isfinite(lg.log_loss) || !all_finite(lg.grad_plus) || !all_finite(lg.grad_minus)) {
      finish(StopReason::max_iters);
      throw DivergenceError("diagonal network diverged at iteration " + std::to_string(t), std::move(trace));
    }
    const bool done = lg.log_loss <= log_threshold;
    const bool last = done || t >= stop.max_iters;
    if (t == next_log || last) {
      Vector z(data.m());
      kernels::signed_margins(data.samples, data.labels, w, z);
      TraceRow row = describe(t, w, z, penalty_for(w, tm), lg.log_loss, NormExponent::one());
      row.param_half_sq = 0.5 * sq;
      if (!last) {
        row.step = lr;
        // GD geometry on the parameters: l2 norm of the full gradient
        row.log_grad_dual_norm =
            0.5 * std::log(dot(lg.grad_plus, lg.grad_plus) + dot(lg.grad_minus, lg.grad_minus));
      }
      trace.rows.push_back(row);
      next_log = next_log_after(t);
    }
    if (last) {
      finish(done ? StopReason::threshold : StopReason::max_iters);
      return trace;
    }
    for (std::size_t j = 0; j < data.d(); ++j) {
      net.u_plus[j] -= lr * lg.grad_plus[j];
      net.u_minus[j] -= lr * lg.grad_minus[j];
    }
  }
}

void write_trace_csv(const TrainTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iteration,log_loss,norm_l1,norm_l2,norm_linf,margin,step,halvings,forced,log_grad_dual_norm,param_half_sq\n";
  char buf[512];
  for (const auto& r : trace.rows) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d,%.17g,%.17g\n", r.iteration,
                  r.log_loss, r.norm_l1, r.norm_l2, r.norm_linf, r.margin, r.step, r.halvings, r.forced ? 1 : 0,
                  r.log_grad_dual_norm, r.param_half_sq);
    out << buf;
  }
}

void write_vector_csv(std::span<const double> v, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "index,value\n";
  char buf[64];
  for (std::size_t j = 0; j < v.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", j, v[j]);
    out << buf;
  }
}

}  // namespace robustbias
