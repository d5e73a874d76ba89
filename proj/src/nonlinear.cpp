#include "robustbias/nonlinear.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace robustbias {

namespace {

const std::uint64_t kInitStream = hash_tag("mlp-init");

// Writes preactivations to `pre` (width entries) and returns f(x).
double forward_with_pre(const MlpModel& model, std::span<const double> x, std::span<double> pre) {
  double f = 0.0;
  for (std::size_t j = 0; j < model.width(); ++j) {
    pre[j] = dot(model.W.row(j), x);
    if (pre[j] > 0.0) f += model.u[j] * pre[j];
  }
  return f;
}

void check_input(const MlpModel& model, std::span<const double> x) {
  if (x.size() != model.input_dim()) throw std::invalid_argument("MLP input has the wrong dimension");
  if (model.W.rows() != model.width()) throw std::invalid_argument("MLP layers disagree on the hidden width");
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// PGD points (or copies of the clean points at eps = 0), one row per sample.
Matrix attack_all(const MlpModel& model, const Dataset& data, const ThreatModel& tm, int steps) {
  Matrix out = data.samples;
  if (tm.epsilon == 0.0 || steps == 0) return out;
  const InputGradient grad = mlp_input_gradient(model);
  const auto m = static_cast<std::int64_t>(data.m());
  bool failed = false;
#pragma omp parallel for schedule(dynamic, 4)
  for (std::int64_t i = 0; i < m; ++i) {
    try {
      const Vector adv = pgd_attack(grad, data.samples.row(i), data.labels[i], tm, steps);
      std::copy(adv.begin(), adv.end(), out.row(i).begin());
    } catch (const AttackError&) {
#pragma omp atomic write
      failed = true;
    }
  }
  if (failed) throw AttackError("PGD failed on at least one sample");
  return out;
}

std::size_t count_correct(const MlpModel& model, const Matrix& points, std::span<const double> labels) {
  const auto m = static_cast<std::int64_t>(points.rows());
  std::int64_t correct = 0;
#pragma omp parallel for schedule(static) reduction(+ : correct)
  for (std::int64_t i = 0; i < m; ++i) {
    if (labels[i] * mlp_forward(model, points.row(i)) > 0.0) ++correct;
  }
  return static_cast<std::size_t>(correct);
}

}  // namespace

double mlp_forward(const MlpModel& model, std::span<const double> x) {
  check_input(model, x);
  Vector pre(model.width());
  return forward_with_pre(model, x, pre);
}

MlpGrads mlp_grads(const MlpModel& model, std::span<const double> x, double y) {
  check_input(model, x);
  Vector pre(model.width());
  const double f = forward_with_pre(model, x, pre);
  const double dl_df = -y * std::exp(-y * f);
  MlpGrads g{Matrix(model.width(), model.input_dim()), Vector(model.width())};
  for (std::size_t j = 0; j < model.width(); ++j) {
    if (!(pre[j] > 0.0)) continue;
    g.u[j] = dl_df * pre[j];
    const double c = dl_df * model.u[j];
    auto row = g.W.row(j);
    for (std::size_t l = 0; l < x.size(); ++l) row[l] = c * x[l];
  }
  return g;
}

InputGradient mlp_input_gradient(const MlpModel& model) {
  return [model](std::span<const double> x, double y) {
    check_input(model, x);
    Vector pre(model.width());
    forward_with_pre(model, x, pre);
    // the positive factor exp(-y f) is dropped
    Vector g(model.input_dim(), 0.0);
    for (std::size_t j = 0; j < model.width(); ++j) {
      if (!(pre[j] > 0.0)) continue;
      const double c = -y * model.u[j];
      const auto row = model.W.row(j);
      for (std::size_t l = 0; l < g.size(); ++l) g[l] += c * row[l];
    }
    return g;
  };
}

MlpModel init_mlp(std::size_t d, std::size_t width, std::uint64_t seed, double init_scale) {
  if (d == 0 || width == 0) throw std::invalid_argument("init_mlp: dimensions must be positive");
  if (!(init_scale > 0.0)) throw std::invalid_argument("init_mlp: init_scale must be > 0");
  Pcg64 rng(seed, kInitStream);
  MlpModel model{Matrix(width, d), Vector(width)};
  const double bw = 1.0 / std::sqrt(static_cast<double>(d));
  const double bu = 1.0 / std::sqrt(static_cast<double>(width));
  for (double& v : model.W.data()) v = (2.0 * rng.uniform() - 1.0) * bw * init_scale;
  for (double& v : model.u) v = (2.0 * rng.uniform() - 1.0) * bu * init_scale;
  return model;
}

MlpAlgorithm parse_mlp_algorithm(const std::string& text) {
  if (text == "gd") return MlpAlgorithm::gd;
  if (text == "sd" || text == "sign_descent") return MlpAlgorithm::sign_descent;
  throw std::invalid_argument("unknown MLP algorithm '" + text + "' (expected gd or sd)");
}

std::string to_string(MlpAlgorithm alg) { return alg == MlpAlgorithm::gd ? "gd" : "sd"; }

void MlpOptions::validate() const {
  stop.validate();
  if (!(lr > 0.0) || !(init_scale > 0.0)) throw std::invalid_argument("MLP lr and init_scale must be > 0");
  if (width == 0) throw std::invalid_argument("MLP width must be > 0");
  if (eval_every <= 0 || pgd_steps < 0) throw std::invalid_argument("bad MLP evaluation settings");
}

MlpTrace train_mlp(const Dataset& train, const Dataset* test, const ThreatModel& tm, const MlpOptions& options) {
  options.validate();
  if (train.m() == 0) throw std::invalid_argument("train_mlp: empty training set");
  if (tm.epsilon > 0.0 && !tm.p.is_infinite()) throw std::invalid_argument("train_mlp attacks l_inf balls only");
  if (test && test->d() != train.d()) throw std::invalid_argument("train and test dimensions differ");

  MlpTrace trace;
  MlpModel& model = trace.model;
  model = init_mlp(train.d(), options.width, options.seed, options.init_scale);
  const std::size_t m = train.m();
  const std::size_t k = options.width;
  const std::size_t d = train.d();
  const double inv_m = 1.0 / static_cast<double>(m);
  const double grad_scale = options.sum_loss ? 1.0 : inv_m;
  const double log_threshold = std::log(options.stop.loss_threshold);

  Matrix pre(m, k);
  Vector coeff(m);
  for (long epoch = 0;; ++epoch) {
    const Matrix adv = attack_all(model, train, tm, options.pgd_steps);

    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const double f = forward_with_pre(model, adv.row(i), pre.row(i));
      const double li = std::exp(-train.labels[i] * f);
      loss += li;
      coeff[i] = -train.labels[i] * li * grad_scale;
      if (train.labels[i] * f > 0.0) ++correct;
    }
    loss *= inv_m;

    const bool done = std::log(loss) <= log_threshold;
    const bool last = done || epoch >= options.stop.max_iters;
    MlpEpochRow row{epoch, loss, static_cast<double>(correct) * inv_m};
    if (test && (epoch % options.eval_every == 0 || last)) {
      row.robust_test_acc = mlp_robust_accuracy(model, *test, tm, options.pgd_steps);
    }
    trace.rows.push_back(row);
    trace.epochs = epoch;
    if (!std::isfinite(loss)) throw MlpDivergenceError("MLP loss became non-finite at epoch " + std::to_string(epoch), trace);
    if (last) {
      trace.stop = done ? StopReason::threshold : StopReason::max_iters;
      return trace;
    }

    // Hidden units own disjoint parameters, so each sums over samples in
    // index order regardless of threading.
    MlpGrads g{Matrix(k, d), Vector(k)};
    const auto kk = static_cast<std::int64_t>(k);
#pragma omp parallel for schedule(static)
    for (std::int64_t j = 0; j < kk; ++j) {
      auto gw = g.W.row(j);
      for (std::size_t i = 0; i < m; ++i) {
        const double a = pre(i, j);
        if (!(a > 0.0) || coeff[i] == 0.0) continue;
        g.u[j] += coeff[i] * a;
        const double c = coeff[i] * model.u[j];
        const auto x = adv.row(i);
        for (std::size_t l = 0; l < d; ++l) gw[l] += c * x[l];
      }
    }

    auto apply = [&](std::span<double> theta, std::span<const double> grad) {
      if (options.algorithm == MlpAlgorithm::gd) {
        for (std::size_t q = 0; q < theta.size(); ++q) theta[q] -= options.lr * grad[q];
      } else {
        for (std::size_t q = 0; q < theta.size(); ++q) theta[q] -= options.lr * sign(grad[q]);
      }
    };
    apply(model.W.data(), g.W.data());
    apply(model.u, g.u);
    if (!all_finite(model.W.data()) || !all_finite(model.u)) {
      throw MlpDivergenceError("MLP parameters became non-finite after epoch " + std::to_string(epoch), trace);
    }
  }
}

double mlp_robust_accuracy(const MlpModel& model, const Dataset& data, const ThreatModel& tm, int pgd_steps) {
  if (data.m() == 0) throw std::invalid_argument("accuracy of an empty dataset");
  const Matrix adv = attack_all(model, data, tm, pgd_steps);
  return static_cast<double>(count_correct(model, adv, data.labels)) / static_cast<double>(data.m());
}

void write_mlp_checkpoint(const MlpModel& model, const std::filesystem::path& path, const std::string& meta_json) {
  nlohmann::json meta = nlohmann::json::parse(meta_json);
  meta["width"] = model.width();
  meta["d"] = model.input_dim();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# " << meta.dump() << "\n";
  char buf[32];
  auto put_row = [&](std::span<const double> row) {
    for (std::size_t l = 0; l < row.size(); ++l) {
      std::snprintf(buf, sizeof buf, "%.17g", row[l]);
      out << (l ? "," : "") << buf;
    }
    out << "\n";
  };
  for (std::size_t j = 0; j < model.width(); ++j) put_row(model.W.row(j));
  put_row(model.u);
}

MlpModel read_mlp_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw std::runtime_error(path.string() + ": missing JSON header");
  const auto meta = nlohmann::json::parse(line.substr(2));
  const auto width = meta.at("width").get<std::size_t>();
  const auto d = meta.at("d").get<std::size_t>();
  auto read_row = [&](std::span<double> row) {
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": truncated checkpoint");
    std::istringstream ss(line);
    std::string cell;
    std::size_t l = 0;
    while (std::getline(ss, cell, ',')) {
      if (l >= row.size()) throw std::runtime_error(path.string() + ": row too long");
      row[l++] = std::stod(cell);
    }
    if (l != row.size()) throw std::runtime_error(path.string() + ": row too short");
  };
  MlpModel model{Matrix(width, d), Vector(width)};
  for (std::size_t j = 0; j < width; ++j) read_row(model.W.row(j));
  read_row(model.u);
  return model;
}

void write_mlp_curves_csv(const MlpTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,loss,robust_train_acc,robust_test_acc\n";
  char buf[160];
  for (const auto& r : trace.rows) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g\n", r.epoch, r.loss, r.robust_train_acc, r.robust_test_acc);
    out << buf;
  }
}

}  // namespace robustbias
