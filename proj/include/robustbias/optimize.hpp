#pragma once

#include <filesystem>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "robustbias/robust_loss.hpp"

namespace robustbias {

struct StoppingRule {
  double loss_threshold = 1e-3;  // 0 disables the threshold
  long max_iters = 200000;

  static StoppingRule fixed_iterations(long n) { return {0.0, n}; }
  void validate() const;
};

struct AdaptiveLr {
  double eta_max = 1e5;
};
struct ConstantLr {
  double eta = 1e-3;
};
using LrPolicy = std::variant<AdaptiveLr, ConstantLr>;

/// Steepest descent in the lr geometry: r=2 is GD, r=1 CD, r=inf sign descent.
struct Steepest {
  NormExponent r = NormExponent::two();
};
struct DiagGd {};

struct OptimizerSpec {
  std::variant<Steepest, DiagGd> algorithm = Steepest{};
  LrPolicy lr = AdaptiveLr{};
  StoppingRule stop;
  bool normalized_update = false;

  void validate() const;
};

enum class StopReason { threshold, max_iters };
std::string to_string(StopReason reason);

struct TraceRow {
  long iteration = 0;
  double log_loss = 0.0;  // log of the trainer's loss (sum for linear, mean for diag)
  double norm_l1 = 0.0;
  double norm_l2 = 0.0;
  double norm_linf = 0.0;
  /// min_i (y_i<w,x_i> - eps||w||_{p*}) / ||w||_r in the trainer's geometry
  /// (l1 for the diagonal network); NaN at w = 0.
  double margin = std::numeric_limits<double>::quiet_NaN();
  double step = 0.0;       // learning rate used for the step leaving this iterate
  int halvings = 0;        // safeguard halvings applied to that step
  bool forced = false;     // 30 halvings did not help; the undamped step was taken
  double log_grad_dual_norm = -std::numeric_limits<double>::infinity();  // log ||g||_{r*}
  double param_half_sq = std::numeric_limits<double>::quiet_NaN();       // diag only: (|u+|^2 + |u-|^2)/2
};

struct TrainTrace {
  std::vector<TraceRow> rows;
  Vector w;  // final effective predictor
  Vector u_plus, u_minus;  // diag only
  StopReason stop = StopReason::max_iters;
  long iterations = 0;
  long halving_steps = 0;      // iterations whose step was halved at least once
  long forced_steps = 0;       // iterations where 30 halvings still increased the loss
  bool loss_is_mean = false;   // diag loss carries 1/m, linear loss does not
  NormExponent r = NormExponent::two();
  /// Diag only, over every iterate: max of ||w(u)||_1 - (|u+|^2 + |u-|^2)/2,
  /// and of ||w(u)||_1 - (|u+|^2 + |u-|^2).
  double max_half_bridge_excess = -std::numeric_limits<double>::infinity();
  double max_full_bridge_excess = -std::numeric_limits<double>::infinity();

  double final_log_loss() const { return rows.empty() ? std::numeric_limits<double>::quiet_NaN() : rows.back().log_loss; }
};

struct DivergenceError : std::runtime_error {
  DivergenceError(const std::string& what, TrainTrace last) : std::runtime_error(what), trace(std::move(last)) {}
  TrainTrace trace;
};

/// min(eta_max, 1 / ((B + epsilon)^2 loss)); throws for loss <= 0.
double adaptive_lr(double B, double epsilon, double loss, double eta_max);
/// Same schedule from log(loss); stays finite when the loss underflows.
double adaptive_lr_from_log(double B, double epsilon, double log_loss, double eta_max);

/// Full-batch steepest descent on the worst-case exponential loss from w0
/// (all zeros when empty). A step that raises the loss is halved up to 30
/// times. Logs every iteration up to 1000, then on a geometric schedule.
TrainTrace train_linear(const Dataset& data, const ThreatModel& tm, const OptimizerSpec& spec,
                        std::span<const double> w0 = {});

/// Gradient descent on the (1/m) worst-case loss of a diagonal network,
/// started at u+ = u- = alpha / sqrt(2d).
TrainTrace train_diagnet(const Dataset& data, const ThreatModel& tm, double lr = 2e-3, double alpha = 1e-3,
                         StoppingRule stop = {});

/// min_i (y_i <w, x_i> - eps ||w||_{p*}) / ||w||_r; throws for w = 0.
double normalized_robust_margin(std::span<const double> w, const Dataset& data, const ThreatModel& tm,
                                const NormExponent& r);

void write_trace_csv(const TrainTrace& trace, const std::filesystem::path& path);
void write_vector_csv(std::span<const double> v, const std::filesystem::path& path);

}  // namespace robustbias
