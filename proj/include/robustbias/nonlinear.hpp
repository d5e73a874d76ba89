#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "robustbias/optimize.hpp"

namespace robustbias {

/// f(x) = sum_j u_j max(0, <W_j, x>), no biases.
struct MlpModel {
  Matrix W;  // width x d
  Vector u;  // width

  std::size_t width() const { return u.size(); }
  std::size_t input_dim() const { return W.cols(); }
  bool operator==(const MlpModel&) const = default;
};

struct MlpGrads {
  Matrix W;
  Vector u;
};

double mlp_forward(const MlpModel& model, std::span<const double> x);

/// Gradients of exp(-y f(x)) with respect to (W, u); relu'(0) = 0.
MlpGrads mlp_grads(const MlpModel& model, std::span<const double> x, double y);

/// d/dx exp(-y f(x)), scaled by a positive factor (only signs matter to PGD).
InputGradient mlp_input_gradient(const MlpModel& model);

/// W ~ U(-1/sqrt(d), 1/sqrt(d)), u ~ U(-1/sqrt(width), 1/sqrt(width)),
/// both multiplied by init_scale. W is drawn row by row before u.
MlpModel init_mlp(std::size_t d, std::size_t width, std::uint64_t seed, double init_scale = 1e-2);

enum class MlpAlgorithm { gd, sign_descent };
MlpAlgorithm parse_mlp_algorithm(const std::string& text);
std::string to_string(MlpAlgorithm alg);

struct MlpOptions {
  MlpAlgorithm algorithm = MlpAlgorithm::gd;
  double lr = 1e-5;
  double init_scale = 1e-2;
  std::size_t width = 128;
  std::uint64_t seed = 0;
  StoppingRule stop;  // max_iters counts full-batch epochs
  long eval_every = 1;  // robust test accuracy cadence, in epochs
  int pgd_steps = 10;
  // Step on the summed loss (m times the mean gradient); rows still log the mean.
  bool sum_loss = false;

  void validate() const;
};

struct MlpEpochRow {
  long epoch = 0;
  double loss = 0.0;  // mean exponential loss at the PGD points
  double robust_train_acc = 0.0;
  double robust_test_acc = std::numeric_limits<double>::quiet_NaN();
};

struct MlpTrace {
  std::vector<MlpEpochRow> rows;
  MlpModel model;
  StopReason stop = StopReason::max_iters;
  long epochs = 0;
};

struct MlpDivergenceError : std::runtime_error {
  MlpDivergenceError(const std::string& what, MlpTrace last) : std::runtime_error(what), trace(std::move(last)) {}
  MlpTrace trace;
};

/// Full-batch robust ERM: every epoch attacks each training point with PGD
/// (skipped at eps = 0) against the current model, logs the loss and robust
/// train accuracy of that model, then takes one GD or sign-descent step on
/// the mean exponential loss. `test` may be null.
MlpTrace train_mlp(const Dataset& train, const Dataset* test, const ThreatModel& tm, const MlpOptions& options);

/// Fraction of points still classified correctly (y f > 0) after PGD with
/// the given number of steps; the clean accuracy at eps = 0.
double mlp_robust_accuracy(const MlpModel& model, const Dataset& data, const ThreatModel& tm, int pgd_steps = 10);

/// "# {json}" header, then W row by row, then u on the last line.
void write_mlp_checkpoint(const MlpModel& model, const std::filesystem::path& path, const std::string& meta_json = "{}");
MlpModel read_mlp_checkpoint(const std::filesystem::path& path);

void write_mlp_curves_csv(const MlpTrace& trace, const std::filesystem::path& path);

}  // namespace robustbias
