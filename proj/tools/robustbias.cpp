// robustbias command line: sweeps, bound tables, the MNIST MLP run and
// re-aggregation of stored records.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "robustbias/bounds.hpp"
#include "robustbias/data.hpp"
#include "robustbias/harness.hpp"
#include "robustbias/nonlinear.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace robustbias;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

NormExponent norm_from(const json& j) {
  return j.is_string() ? NormExponent::parse(j.get<std::string>()) : NormExponent::finite(j.get<double>());
}

std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void print_benefits(const std::vector<ResultRecord>& records) {
  std::map<std::string, std::set<double>> fractions;
  std::set<SweepAlgorithm> algs;
  for (const auto& r : records) {
    if (r.failed) continue;
    fractions[r.key.distribution].insert(r.key.eps_fraction);
    algs.insert(r.key.algorithm);
  }
  if (!algs.count(SweepAlgorithm::gd) || !algs.count(SweepAlgorithm::cd)) return;
  for (const auto& [dist, fs_] : fractions) {
    for (double f : fs_) {
      try {
        std::printf("avg_benefit(gd, cd) %s eps_frac=%g: %+.4f\n", dist.c_str(), f, avg_benefit(records, dist, f));
      } catch (const GridError& e) {
        std::printf("avg_benefit(gd, cd) %s eps_frac=%g: n/a (%s)\n", dist.c_str(), f, e.what());
      }
    }
  }
}

int count_failed(const std::vector<ResultRecord>& records) {
  int n = 0;
  for (const auto& r : records) {
    if (r.failed) {
      ++n;
      std::fprintf(stderr, "failed cell %s: %s\n", r.key.id().c_str(), r.error.c_str());
    }
  }
  return n;
}

int cmd_sweep(const fs::path& config_path, const std::optional<fs::path>& out_override) {
  SweepConfig cfg = SweepConfig::load(config_path);
  if (out_override) cfg.output_dir = *out_override;
  SweepProgress progress;
  const auto records = run_sweep(cfg, &progress);
  const auto files = emit_outputs(records, cfg.output_dir);
  std::printf("%zu cells: %zu trained, %zu reused; outputs in %s\n", progress.cells_total, progress.cells_trained,
              progress.cells_reused, cfg.output_dir.string().c_str());
  for (const auto& f : files) std::printf("  %s\n", f.string().c_str());
  print_benefits(records);
  return count_failed(records) == 0 ? 0 : 1;
}

int cmd_aggregate(const fs::path& records_path, const std::optional<fs::path>& out_override) {
  const auto records = read_records_csv(records_path);
  const fs::path out = out_override ? *out_override : records_path.parent_path() / "aggregate";
  for (const auto& f : emit_outputs(records, out)) std::printf("%s\n", f.string().c_str());
  print_benefits(records);
  return count_failed(records) == 0 ? 0 : 1;
}

// {"r", "p", "d", "delta", "rho", "W", "max_linf", "max_l2", "teacher_l1",
//  "teacher_l2", "eps_grid", "m_grid", "rate_case", "k"}
int cmd_bounds(const fs::path& spec_path, const std::optional<fs::path>& out_path) {
  const json j = read_json(spec_path);
  check_keys(j, {"r", "p", "d", "delta", "rho", "W", "max_linf", "max_l2", "teacher_l1", "teacher_l2", "eps_grid",
                 "m_grid", "rate_case", "k"},
             "bounds spec");
  BoundSpec base;
  base.r = j.value("r", base.r);
  if (j.contains("p")) base.p = norm_from(j["p"]);
  base.d = j.value("d", base.d);
  base.delta = j.value("delta", base.delta);
  base.rho = j.value("rho", base.rho);
  base.W = j.value("W", base.W);
  base.max_linf = j.value("max_linf", base.max_linf);
  base.max_l2 = j.value("max_l2", base.max_l2);
  if (j.contains("teacher_l1")) base.teacher_l1 = j["teacher_l1"].get<double>();
  if (j.contains("teacher_l2")) base.teacher_l2 = j["teacher_l2"].get<double>();
  const auto eps_grid = j.value("eps_grid", std::vector<double>{0.0});
  const auto m_grid = j.value("m_grid", std::vector<long>{64, 128, 256, 512, 1024});
  std::optional<RateCase> rc;
  if (j.contains("rate_case")) rc = parse_rate_case(j["rate_case"].get<std::string>());
  const double k = j.value("k", 1.0);
  const bool have_teacher = base.r == 1 ? base.teacher_l1.has_value() : base.teacher_l2.has_value();

  std::ofstream file;
  if (out_path) {
    file.open(*out_path);
    if (!file) throw std::runtime_error("cannot write " + out_path->string());
  }
  std::ostream& out = out_path ? file : std::cout;
  out << "epsilon,m,clean_rademacher,robust_rademacher_upper,interpolator_bound,interpolator_reported";
  if (rc) out << ",rate_r1,rate_r2";
  out << '\n';
  for (double eps : eps_grid) {
    for (long m : m_grid) {
      BoundSpec s = base;
      s.epsilon = eps;
      s.m = m;
      s.validate();
      const double clean = clean_rademacher(s);
      out << num(eps) << ',' << m << ',' << num(clean) << ',' << num(robust_rademacher_upper(clean, s)) << ',';
      if (have_teacher) {
        const double raw = interpolator_bound(s);
        out << num(raw) << ',' << num(reported_bound(raw));
      } else {
        out << ',';
      }
      if (rc) {
        const auto [r1, r2] = case_rates(*rc, static_cast<double>(s.d), k, eps, static_cast<double>(m));
        out << ',' << num(r1) << ',' << num(r2);
      }
      out << '\n';
    }
  }
  return 0;
}

int cmd_mnist_mlp(const fs::path& config_path) {
  const json j = read_json(config_path);
  check_keys(j, {"mnist_dir", "classes", "train_size", "seeds", "algorithms", "epsilon", "p", "lr", "init_scale", "width",
                 "stop", "eval_every", "pgd_steps", "sum_loss", "output_dir"},
             "mnist-mlp config");
  if (!j.contains("mnist_dir")) throw ConfigError("mnist-mlp config needs mnist_dir");
  const fs::path dir = j["mnist_dir"].get<std::string>();
  const auto classes_v = j.value("classes", std::vector<int>{2, 7});
  const std::set<int> classes(classes_v.begin(), classes_v.end());
  const auto train_size = j.value("train_size", std::size_t{100});
  const auto seeds = j.value("seeds", std::vector<std::uint64_t>{0, 1, 2});
  const auto algs = j.value("algorithms", std::vector<std::string>{"gd", "sd"});
  const ThreatModel tm(j.contains("p") ? norm_from(j["p"]) : NormExponent::infinity(), j.value("epsilon", 0.2));
  const fs::path out_dir = j.value("output_dir", std::string("mlp_out"));

  MlpOptions base;
  base.init_scale = j.value("init_scale", base.init_scale);
  base.width = j.value("width", base.width);
  base.pgd_steps = j.value("pgd_steps", base.pgd_steps);
  base.eval_every = j.value("eval_every", base.eval_every);
  base.sum_loss = j.value("sum_loss", base.sum_loss);
  base.stop = StoppingRule::fixed_iterations(1000);
  if (j.contains("stop")) {
    check_keys(j["stop"], {"loss_threshold", "max_iters"}, "stop");
    base.stop.loss_threshold = j["stop"].value("loss_threshold", base.stop.loss_threshold);
    base.stop.max_iters = j["stop"].value("max_iters", base.stop.max_iters);
  }
  // one rate for every algorithm, or {"gd": .., "sd": ..}
  std::map<std::string, double> lr;
  if (j.contains("lr") && j["lr"].is_object()) {
    lr = j["lr"].get<std::map<std::string, double>>();
  } else {
    for (const auto& a : algs) lr[a] = j.value("lr", base.lr);
  }

  const Dataset test = load_mnist_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", classes, 0, 0);
  fs::create_directories(out_dir);
  std::ofstream summary(out_dir / "summary.csv");
  summary << "algorithm,seed,epochs,stop,loss,robust_train_acc,robust_test_acc,failed\n";
  int failures = 0;
  for (std::uint64_t seed : seeds) {
    const Dataset train =
        load_mnist_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", classes, train_size, seed);
    for (const auto& name : algs) {
      MlpOptions opt = base;
      opt.algorithm = parse_mlp_algorithm(name);
      if (!lr.count(name)) throw ConfigError("no learning rate for algorithm " + name);
      opt.lr = lr.at(name);
      opt.seed = seed;
      const std::string tag = to_string(opt.algorithm) + "_seed" + std::to_string(seed);
      try {
        const MlpTrace tr = train_mlp(train, &test, tm, opt);
        write_mlp_curves_csv(tr, out_dir / ("curves_" + tag + ".csv"));
        write_mlp_checkpoint(tr.model, out_dir / ("model_" + tag + ".csv"),
                             json{{"algorithm", to_string(opt.algorithm)}, {"seed", seed}, {"lr", opt.lr}}.dump());
        const auto& last = tr.rows.back();
        const double test_acc = std::isnan(last.robust_test_acc) ? mlp_robust_accuracy(tr.model, test, tm, opt.pgd_steps)
                                                                 : last.robust_test_acc;
        summary << to_string(opt.algorithm) << ',' << seed << ',' << tr.epochs << ',' << to_string(tr.stop) << ','
                << num(last.loss) << ',' << num(last.robust_train_acc) << ',' << num(test_acc) << ",0\n";
        std::printf("%s: robust train %.4f, robust test %.4f after %ld epochs\n", tag.c_str(), last.robust_train_acc,
                    test_acc, tr.epochs);
      } catch (const MlpDivergenceError& e) {
        ++failures;
        write_mlp_curves_csv(e.trace, out_dir / ("curves_" + tag + ".csv"));
        summary << to_string(opt.algorithm) << ',' << seed << ',' << e.trace.epochs << ",diverged,,,,1\n";
        std::fprintf(stderr, "%s diverged: %s\n", tag.c_str(), e.what());
      }
    }
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robust ERM implicit-bias experiments"};
  app.require_subcommand(1);

  fs::path sweep_cfg, bounds_spec, mlp_cfg, records;
  std::optional<fs::path> sweep_out, bounds_out, agg_out;

  auto* sweep = app.add_subcommand("sweep", "run (or resume) a sweep and write CSV/SVG outputs");
  sweep->add_option("config", sweep_cfg, "sweep config JSON")->required()->check(CLI::ExistingFile);
  sweep->add_option("--out", sweep_out, "override output_dir");

  auto* bounds = app.add_subcommand("bounds", "bound table over an (epsilon, m) grid as CSV");
  bounds->add_option("spec", bounds_spec, "bound spec JSON")->required()->check(CLI::ExistingFile);
  bounds->add_option("-o,--out", bounds_out, "CSV path (default stdout)");

  auto* mlp = app.add_subcommand("mnist-mlp", "train the ReLU network on an MNIST digit pair");
  mlp->add_option("config", mlp_cfg, "MLP config JSON")->required()->check(CLI::ExistingFile);

  auto* agg = app.add_subcommand("aggregate", "rebuild curves, heatmap and charts from records.csv");
  agg->add_option("records", records, "records CSV")->required()->check(CLI::ExistingFile);
  agg->add_option("--out", agg_out, "output directory (default <records dir>/aggregate)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*sweep) return cmd_sweep(sweep_cfg, sweep_out);
    if (*bounds) return cmd_bounds(bounds_spec, bounds_out);
    if (*mlp) return cmd_mnist_mlp(mlp_cfg);
    if (*agg) return cmd_aggregate(records, agg_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
