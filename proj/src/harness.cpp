#include "robustbias/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "robustbias/kernels.hpp"
#include "robustbias/margin.hpp"

namespace robustbias {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kTestChunk = 4096;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string g17(double v) { return fmt("%.17g", v); }

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double num_from(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

std::size_t sparsity_k(const SparsitySpec& s) { return s.is_dense() ? 0 : s.k; }

SparsitySpec sparsity_from_config(const json& j, std::size_t d) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "dense") return SparsitySpec::dense();
    if (s == "log") return SparsitySpec::sparse(std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(std::log(static_cast<double>(d))))));
    throw ConfigError("sparsity must be \"dense\", \"log\" or an integer k, got \"" + s + "\"");
  }
  if (j.is_number_integer()) return SparsitySpec::sparse(j.get<std::size_t>());
  if (j.is_object() && j.contains("k")) return SparsitySpec::sparse(j.at("k").get<std::size_t>());
  throw ConfigError("cannot read sparsity from " + j.dump());
}

json sparsity_to_config(const SparsitySpec& s) { return s.is_dense() ? json("dense") : json(s.k); }

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }) == allowed.end()) {
      throw ConfigError("unknown key '" + k + "' in " + where);
    }
  }
}

void write_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
  }
  return s;
}

struct TrainedCell {
  ResultRecord record;
  Vector w;
  std::size_t test_correct = 0;
  std::size_t test_robust = 0;
  double offset = 0.0;  // epsilon ||w||_{p*}
};

OptimizerSpec linear_spec(SweepAlgorithm alg, const SweepConfig& cfg) {
  OptimizerSpec spec;
  spec.lr = AdaptiveLr{cfg.eta_max};
  spec.stop = cfg.stop;
  switch (alg) {
    case SweepAlgorithm::gd: spec.algorithm = Steepest{NormExponent::two()}; break;
    case SweepAlgorithm::cd: spec.algorithm = Steepest{NormExponent::one()}; break;
    case SweepAlgorithm::sd: spec.algorithm = Steepest{NormExponent::infinity()}; break;
    case SweepAlgorithm::diag_gd: throw std::logic_error("diag_gd is not a linear steepest method");
  }
  return spec;
}

// Trains one cell on `data`; evaluation on the test set happens later.
TrainedCell train_cell(const CellKey& key, const DistributionSpec& dist, const Dataset& data,
                       const MarginEstimate& eps_star, const SweepConfig& cfg) {
  TrainedCell cell;
  ResultRecord& rec = cell.record;
  rec.key = key;
  rec.d = dist.d;
  rec.teacher_k = sparsity_k(dist.teacher);
  rec.data_k = sparsity_k(dist.data);
  rec.eps_star = eps_star.value;
  rec.eps_star_separable = eps_star.separable;
  rec.epsilon = key.eps_fraction * eps_star.value;
  const auto start = std::chrono::steady_clock::now();
  try {
    const ThreatModel tm(cfg.p, rec.epsilon);
    const TrainTrace trace = key.algorithm == SweepAlgorithm::diag_gd
                                 ? train_diagnet(data, tm, cfg.diag_lr, cfg.diag_alpha, cfg.stop)
                                 : train_linear(data, tm, linear_spec(key.algorithm, cfg));
    cell.w = trace.w;
    rec.stop_reason = to_string(trace.stop);
    rec.iterations = trace.iterations;
    rec.final_log_loss = trace.final_log_loss();
    rec.norm_l1 = lp_norm(trace.w, NormExponent::one());
    rec.norm_l2 = lp_norm(trace.w, NormExponent::two());
    rec.norm_linf = lp_norm(trace.w, NormExponent::infinity());
    cell.offset = rec.epsilon == 0.0 ? 0.0 : rec.epsilon * lp_norm(trace.w, cfg.p.dual());
    const double m = static_cast<double>(data.m());
    rec.train_acc = static_cast<double>(kernels::count_margin_above(data.samples, data.labels, trace.w, 0.0)) / m;
    rec.robust_train_acc =
        static_cast<double>(kernels::count_margin_above(data.samples, data.labels, trace.w, cell.offset)) / m;
  } catch (const std::exception& e) {
    rec.failed = true;
    rec.error = e.what();
    rec.stop_reason = "failed";
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return cell;
}

ResultRecord failed_record(const CellKey& key, const DistributionSpec& dist, const std::string& what) {
  ResultRecord rec;
  rec.key = key;
  rec.d = dist.d;
  rec.teacher_k = sparsity_k(dist.teacher);
  rec.data_k = sparsity_k(dist.data);
  rec.failed = true;
  rec.error = what;
  rec.stop_reason = "failed";
  rec.final_log_loss = std::numeric_limits<double>::quiet_NaN();
  return rec;
}

std::vector<ResultRecord> run_group(const SweepConfig& cfg, const DistributionSpec& dist, std::uint64_t seed,
                                    const fs::path& cell_dir, SweepProgress& progress, std::mutex& progress_mutex) {
  std::vector<ResultRecord> done;
  std::vector<TrainedCell> pending;
  std::size_t reused = 0;

  for (std::size_t m : cfg.m_grid) {
    std::vector<CellKey> todo;
    for (SweepAlgorithm alg : cfg.algorithms) {
      for (double frac : cfg.eps_fractions) {
        CellKey key{dist.key(), m, seed, alg, frac};
        const fs::path file = cell_dir / (key.id() + ".json");
        if (fs::exists(file)) {
          std::ifstream in(file);
          done.push_back(ResultRecord::from_json(json::parse(in)));
          ++reused;
        } else {
          todo.push_back(key);
        }
      }
    }
    if (todo.empty()) continue;
    try {
      const Dataset data = sweep_dataset(dist, seed, m);
      const MarginEstimate eps_star = dataset_eps_star(data, cfg.eps_star_iters);
      for (const auto& key : todo) pending.push_back(train_cell(key, dist, data, eps_star, cfg));
    } catch (const std::exception& e) {
      for (const auto& key : todo) pending.push_back({failed_record(key, dist, e.what()), {}, 0, 0, 0.0});
    }
  }

  if (!pending.empty()) {
    // one pass over the shared test set evaluates every new model
    try {
      TestSetStream stream(dist, seed, cfg.test_size);
      std::size_t n = 0;
      for (;;) {
        const Dataset chunk = stream.next_chunk(kTestChunk);
        if (chunk.m() == 0) break;
        n += chunk.m();
        for (auto& cell : pending) {
          if (cell.record.failed) continue;
          cell.test_correct += kernels::count_margin_above(chunk.samples, chunk.labels, cell.w, 0.0);
          cell.test_robust += kernels::count_margin_above(chunk.samples, chunk.labels, cell.w, cell.offset);
        }
      }
      for (auto& cell : pending) {
        if (cell.record.failed) continue;
        cell.record.test_acc = static_cast<double>(cell.test_correct) / static_cast<double>(n);
        cell.record.robust_test_acc = static_cast<double>(cell.test_robust) / static_cast<double>(n);
      }
    } catch (const std::exception& e) {
      for (auto& cell : pending) {
        if (cell.record.failed) continue;
        cell.record.failed = true;
        cell.record.error = std::string("test evaluation: ") + e.what();
      }
    }
    for (auto& cell : pending) {
      write_atomic(cell_dir / (cell.record.key.id() + ".json"), cell.record.to_json().dump(1) + "\n");
      done.push_back(std::move(cell.record));
    }
  }
  std::lock_guard lock(progress_mutex);
  progress.cells_reused += reused;
  progress.cells_trained += pending.size();
  return done;
}

// ---- SVG ----

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

std::string gap_chart_svg(const std::string& distribution, const std::vector<GapRow>& rows, EvalEps eval) {
  constexpr double W = 640, H = 420, L = 70, R = 180, T = 40, B = 60;
  double mmin = 1e300, mmax = -1e300, gmin = 0.0, gmax = 0.0;
  for (const auto& r : rows) {
    const double lm = std::log2(static_cast<double>(r.m));
    mmin = std::min(mmin, lm);
    mmax = std::max(mmax, lm);
    gmin = std::min(gmin, r.mean_gap - r.stderr_gap);
    gmax = std::max(gmax, r.mean_gap + r.stderr_gap);
  }
  if (mmax == mmin) {
    mmin -= 0.5;
    mmax += 0.5;
  }
  if (gmax == gmin) gmax = gmin + 1.0;
  const double pad = 0.05 * (gmax - gmin);
  gmin -= pad;
  gmax += pad;
  auto X = [&](double lm) { return L + (lm - mmin) / (mmax - mmin) * (W - L - R); };
  auto Y = [&](double g) { return H - B - (g - gmin) / (gmax - gmin) * (H - T - B); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << L << "\" y=\"24\" font-size=\"14\">" << svg_escape(distribution) << ": "
    << (eval == EvalEps::training ? "robust" : "clean") << " generalization gap</text>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  std::set<std::size_t> ms;
  for (const auto& r : rows) ms.insert(r.m);
  for (std::size_t m : ms) {
    const double x = X(std::log2(static_cast<double>(m)));
    s << "<line x1=\"" << fmt("%.2f", x) << "\" y1=\"" << H - B << "\" x2=\"" << fmt("%.2f", x) << "\" y2=\"" << H - B + 5
      << "\" stroke=\"black\"/><text x=\"" << fmt("%.2f", x) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << m
      << "</text>\n";
  }
  for (int t = 0; t <= 4; ++t) {
    const double g = gmin + (gmax - gmin) * t / 4.0;
    s << "<text x=\"" << L - 6 << "\" y=\"" << fmt("%.2f", Y(g) + 4) << "\" text-anchor=\"end\">" << fmt("%.3f", g) << "</text>\n";
  }
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">training set size m (log scale)</text>\n";
  s << "<text transform=\"translate(18," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">train minus test accuracy</text>\n";

  std::map<std::pair<SweepAlgorithm, double>, std::vector<const GapRow*>> series;
  for (const auto& r : rows) series[{r.algorithm, r.eps_fraction}].push_back(&r);
  std::size_t idx = 0;
  for (const auto& [k, pts] : series) {
    const char* color = kPalette[idx % std::size(kPalette)];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t q = 0; q < pts.size(); ++q) {
      s << (q ? " " : "") << fmt("%.2f", X(std::log2(static_cast<double>(pts[q]->m)))) << "," << fmt("%.2f", Y(pts[q]->mean_gap));
    }
    s << "\"/>\n";
    for (const auto* p : pts) {
      const double x = X(std::log2(static_cast<double>(p->m)));
      s << "<line x1=\"" << fmt("%.2f", x) << "\" y1=\"" << fmt("%.2f", Y(p->mean_gap - p->stderr_gap)) << "\" x2=\""
        << fmt("%.2f", x) << "\" y2=\"" << fmt("%.2f", Y(p->mean_gap + p->stderr_gap)) << "\" stroke=\"" << color << "\"/>\n";
    }
    const double ly = T + 16.0 * static_cast<double>(idx);
    s << "<rect x=\"" << W - R + 12 << "\" y=\"" << fmt("%.2f", ly) << "\" width=\"12\" height=\"3\" fill=\"" << color << "\"/>"
      << "<text x=\"" << W - R + 30 << "\" y=\"" << fmt("%.2f", ly + 5) << "\">" << to_string(k.first) << ", eps = "
      << fmt("%g", k.second) << " eps*</text>\n";
    ++idx;
  }
  s << "</svg>\n";
  return s.str();
}

std::string heatmap_svg(const HeatmapTable& h) {
  constexpr double cell_w = 90, cell_h = 36, L = 150, T = 60;
  const double W = L + cell_w * static_cast<double>(h.eps_fractions.size()) + 20;
  const double H = T + cell_h * static_cast<double>(h.row_labels.size()) + 50;
  double vmax = 0.0;
  for (const auto& row : h.values) {
    for (double v : row) {
      if (std::isfinite(v)) vmax = std::max(vmax, std::abs(v));
    }
  }
  if (vmax == 0.0) vmax = 1.0;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"10\" y=\"22\" font-size=\"14\">average gap benefit of cd over gd</text>\n";
  for (std::size_t c = 0; c < h.eps_fractions.size(); ++c) {
    s << "<text x=\"" << fmt("%.2f", L + cell_w * (static_cast<double>(c) + 0.5)) << "\" y=\"" << T - 8
      << "\" text-anchor=\"middle\">eps = " << fmt("%g", h.eps_fractions[c]) << " eps*</text>\n";
  }
  for (std::size_t r = 0; r < h.row_labels.size(); ++r) {
    const double y = T + cell_h * static_cast<double>(r);
    s << "<text x=\"" << L - 8 << "\" y=\"" << fmt("%.2f", y + cell_h / 2 + 4) << "\" text-anchor=\"end\">"
      << svg_escape(h.row_labels[r]) << "</text>\n";
    for (std::size_t c = 0; c < h.eps_fractions.size(); ++c) {
      const double v = h.values[r][c];
      std::string color = "#dddddd";
      if (std::isfinite(v)) {
        const int shade = static_cast<int>(std::lround(255.0 * (1.0 - std::min(1.0, std::abs(v) / vmax))));
        char buf[16];
        if (v >= 0) std::snprintf(buf, sizeof buf, "#%02x%02xff", shade, shade);
        else std::snprintf(buf, sizeof buf, "#ff%02x%02x", shade, shade);
        color = buf;
      }
      const double x = L + cell_w * static_cast<double>(c);
      s << "<rect x=\"" << fmt("%.2f", x) << "\" y=\"" << fmt("%.2f", y) << "\" width=\"" << cell_w << "\" height=\"" << cell_h
        << "\" fill=\"" << color << "\" stroke=\"white\"/>";
      s << "<text x=\"" << fmt("%.2f", x + cell_w / 2) << "\" y=\"" << fmt("%.2f", y + cell_h / 2 + 4)
        << "\" text-anchor=\"middle\">" << (std::isfinite(v) ? fmt("%.3f", v) : std::string("n/a")) << "</text>\n";
    }
  }
  s << "<text x=\"" << L << "\" y=\"" << H - 16 << "\">rows: teacher and data sparsity; blue: cd gap smaller</text>\n";
  s << "</svg>\n";
  return s.str();
}

}  // namespace

// ---- config ----

SweepAlgorithm parse_sweep_algorithm(const std::string& text) {
  if (text == "gd") return SweepAlgorithm::gd;
  if (text == "cd") return SweepAlgorithm::cd;
  if (text == "sd") return SweepAlgorithm::sd;
  if (text == "diag_gd") return SweepAlgorithm::diag_gd;
  throw ConfigError("unknown algorithm '" + text + "' (expected gd, cd, sd or diag_gd)");
}

std::string to_string(SweepAlgorithm alg) {
  switch (alg) {
    case SweepAlgorithm::gd: return "gd";
    case SweepAlgorithm::cd: return "cd";
    case SweepAlgorithm::sd: return "sd";
    case SweepAlgorithm::diag_gd: return "diag_gd";
  }
  return "?";
}

std::string to_string(EvalEps e) { return e == EvalEps::training ? "training" : "zero"; }

void SweepConfig::validate() const {
  if (distributions.empty() || m_grid.empty() || eps_fractions.empty() || algorithms.empty() || seeds.empty()) {
    throw ConfigError("every sweep grid must be non-empty");
  }
  for (const auto& d : distributions) {
    try {
      d.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  for (std::size_t m : m_grid) {
    if (m == 0) throw ConfigError("m values must be >= 1");
  }
  for (double f : eps_fractions) {
    if (!(f >= 0.0 && f < 1.0)) throw ConfigError("eps fractions must lie in [0, 1)");
  }
  if (eps_star_iters <= 0) throw ConfigError("eps_star_iters must be > 0");
  if (!(diag_lr > 0.0) || !(diag_alpha > 0.0) || !(eta_max > 0.0)) throw ConfigError("learning rates must be > 0");
  if (test_size && *test_size == 0) throw ConfigError("test_size must be >= 1");
  try {
    stop.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

json SweepConfig::to_json() const {
  json j;
  j["distributions"] = json::array();
  for (const auto& d : distributions) {
    j["distributions"].push_back({{"d", d.d}, {"teacher", sparsity_to_config(d.teacher)}, {"data", sparsity_to_config(d.data)}});
  }
  j["m_grid"] = m_grid;
  j["eps_fractions"] = eps_fractions;
  j["algorithms"] = json::array();
  for (auto a : algorithms) j["algorithms"].push_back(to_string(a));
  j["seeds"] = seeds;
  j["output_dir"] = output_dir.string();
  j["p"] = p.to_string();
  j["stop"] = {{"loss_threshold", stop.loss_threshold}, {"max_iters", stop.max_iters}};
  j["eps_star_iters"] = eps_star_iters;
  j["test_size"] = test_size ? json(*test_size) : json(nullptr);
  j["diag"] = {{"lr", diag_lr}, {"alpha", diag_alpha}};
  j["eta_max"] = eta_max;
  return j;
}

SweepConfig SweepConfig::from_json(const json& j) {
  check_keys(j, {"distributions", "m_grid", "eps_fractions", "algorithms", "seeds", "output_dir", "p", "stop",
                 "eps_star_iters", "test_size", "diag", "eta_max", "scale"},
             "sweep config");
  SweepConfig c;
  try {
    std::optional<std::size_t> d_override;
    if (j.contains("scale")) {
      check_keys(j["scale"], {"d"}, "scale");
      if (j["scale"].contains("d")) d_override = j["scale"]["d"].get<std::size_t>();
    }
    if (j.contains("distributions")) {
      c.distributions.clear();
      for (const auto& dj : j["distributions"]) {
        check_keys(dj, {"d", "teacher", "data"}, "distribution");
        const std::size_t d = d_override.value_or(dj.at("d").get<std::size_t>());
        c.distributions.push_back({d, sparsity_from_config(dj.value("teacher", json("dense")), d),
                                   sparsity_from_config(dj.value("data", json("dense")), d)});
      }
    } else if (d_override) {
      for (auto& d : c.distributions) d.d = *d_override;
    }
    if (j.contains("m_grid")) c.m_grid = j["m_grid"].get<std::vector<std::size_t>>();
    if (j.contains("eps_fractions")) c.eps_fractions = j["eps_fractions"].get<std::vector<double>>();
    if (j.contains("algorithms")) {
      c.algorithms.clear();
      for (const auto& a : j["algorithms"]) c.algorithms.push_back(parse_sweep_algorithm(a.get<std::string>()));
    }
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
    if (j.contains("p")) {
      c.p = j["p"].is_string() ? NormExponent::parse(j["p"].get<std::string>()) : NormExponent::finite(j["p"].get<double>());
    }
    if (j.contains("stop")) {
      check_keys(j["stop"], {"loss_threshold", "max_iters"}, "stop");
      c.stop.loss_threshold = j["stop"].value("loss_threshold", c.stop.loss_threshold);
      c.stop.max_iters = j["stop"].value("max_iters", c.stop.max_iters);
    }
    if (j.contains("eps_star_iters")) c.eps_star_iters = j["eps_star_iters"].get<long>();
    if (j.contains("test_size") && !j["test_size"].is_null()) c.test_size = j["test_size"].get<std::size_t>();
    if (j.contains("diag")) {
      check_keys(j["diag"], {"lr", "alpha"}, "diag");
      c.diag_lr = j["diag"].value("lr", c.diag_lr);
      c.diag_alpha = j["diag"].value("alpha", c.diag_alpha);
    }
    if (j.contains("eta_max")) c.eta_max = j["eta_max"].get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed sweep config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

SweepConfig SweepConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// ---- records ----

std::string CellKey::id() const {
  return distribution + "_m" + std::to_string(m) + "_s" + std::to_string(seed) + "_" + to_string(algorithm) + "_f" +
         fmt("%.6g", eps_fraction);
}

json ResultRecord::to_json() const {
  return {{"distribution", key.distribution},
          {"m", key.m},
          {"seed", key.seed},
          {"algorithm", to_string(key.algorithm)},
          {"eps_fraction", key.eps_fraction},
          {"d", d},
          {"teacher_k", teacher_k},
          {"data_k", data_k},
          {"eps_star", num(eps_star)},
          {"eps_star_separable", eps_star_separable},
          {"epsilon", num(epsilon)},
          {"train_acc", num(train_acc)},
          {"robust_train_acc", num(robust_train_acc)},
          {"test_acc", num(test_acc)},
          {"robust_test_acc", num(robust_test_acc)},
          {"norm_l1", num(norm_l1)},
          {"norm_l2", num(norm_l2)},
          {"norm_linf", num(norm_linf)},
          {"stop_reason", stop_reason},
          {"iterations", iterations},
          {"final_log_loss", num(final_log_loss)},
          {"wall_seconds", wall_seconds},
          {"failed", failed},
          {"error", error}};
}

ResultRecord ResultRecord::from_json(const json& j) {
  ResultRecord r;
  r.key = {j.at("distribution").get<std::string>(), j.at("m").get<std::size_t>(), j.at("seed").get<std::uint64_t>(),
           parse_sweep_algorithm(j.at("algorithm").get<std::string>()), j.at("eps_fraction").get<double>()};
  r.d = j.at("d").get<std::size_t>();
  r.teacher_k = j.at("teacher_k").get<std::size_t>();
  r.data_k = j.at("data_k").get<std::size_t>();
  r.eps_star = num_from(j.at("eps_star"));
  r.eps_star_separable = j.at("eps_star_separable").get<bool>();
  r.epsilon = num_from(j.at("epsilon"));
  r.train_acc = num_from(j.at("train_acc"));
  r.robust_train_acc = num_from(j.at("robust_train_acc"));
  r.test_acc = num_from(j.at("test_acc"));
  r.robust_test_acc = num_from(j.at("robust_test_acc"));
  r.norm_l1 = num_from(j.at("norm_l1"));
  r.norm_l2 = num_from(j.at("norm_l2"));
  r.norm_linf = num_from(j.at("norm_linf"));
  r.stop_reason = j.at("stop_reason").get<std::string>();
  r.iterations = j.at("iterations").get<long>();
  r.final_log_loss = num_from(j.at("final_log_loss"));
  r.wall_seconds = j.at("wall_seconds").get<double>();
  r.failed = j.at("failed").get<bool>();
  r.error = j.at("error").get<std::string>();
  return r;
}

bool ResultRecord::same_result(const ResultRecord& o) const {
  auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
  return key == o.key && d == o.d && teacher_k == o.teacher_k && data_k == o.data_k && same(eps_star, o.eps_star) &&
         eps_star_separable == o.eps_star_separable && same(epsilon, o.epsilon) && same(train_acc, o.train_acc) &&
         same(robust_train_acc, o.robust_train_acc) && same(test_acc, o.test_acc) &&
         same(robust_test_acc, o.robust_test_acc) && same(norm_l1, o.norm_l1) && same(norm_l2, o.norm_l2) &&
         same(norm_linf, o.norm_linf) && stop_reason == o.stop_reason && iterations == o.iterations &&
         same(final_log_loss, o.final_log_loss) && failed == o.failed && error == o.error;
}

std::size_t sweep_workers() {
  if (const char* env = std::getenv("ROBUSTBIAS_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

Dataset sweep_dataset(const DistributionSpec& dist, std::uint64_t seed, std::size_t m) {
  return gen_dataset(dist, m, seed);
}

std::vector<ResultRecord> run_sweep(const SweepConfig& config, SweepProgress* progress) {
  config.validate();
  const fs::path cell_dir = config.output_dir / "cells";
  fs::create_directories(cell_dir);
  write_atomic(config.output_dir / "config.resolved.json", config.to_json().dump(2) + "\n");

  std::vector<std::pair<const DistributionSpec*, std::uint64_t>> groups;
  for (const auto& d : config.distributions) {
    for (auto s : config.seeds) groups.emplace_back(&d, s);
  }
  SweepProgress local;
  local.cells_total = groups.size() * config.m_grid.size() * config.algorithms.size() * config.eps_fractions.size();
  std::mutex mutex;
  std::vector<std::vector<ResultRecord>> results(groups.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;
  auto worker = [&] {
    for (std::size_t g; (g = next.fetch_add(1)) < groups.size();) {
      try {
        results[g] = run_group(config, *groups[g].first, groups[g].second, cell_dir, local, mutex);
      } catch (...) {
        // only I/O on the output directory gets here
        std::lock_guard lock(mutex);
        if (!fatal) fatal = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::min(sweep_workers(), groups.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  std::vector<ResultRecord> all;
  for (auto& r : results) all.insert(all.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
  std::sort(all.begin(), all.end(), [](const ResultRecord& a, const ResultRecord& b) { return a.key < b.key; });
  if (progress) *progress = local;
  return all;
}

// ---- aggregation ----

std::vector<GapRow> gap_curves(const std::vector<ResultRecord>& records, EvalEps eval) {
  using Key = std::tuple<std::string, SweepAlgorithm, double, std::size_t>;
  std::map<Key, std::vector<double>> gaps;
  for (const auto& r : records) {
    if (r.failed) continue;
    const double gap = eval == EvalEps::training ? r.robust_train_acc - r.robust_test_acc : r.train_acc - r.test_acc;
    gaps[{r.key.distribution, r.key.algorithm, r.key.eps_fraction, r.key.m}].push_back(gap);
  }
  std::vector<GapRow> out;
  for (const auto& [k, v] : gaps) {
    GapRow row{std::get<0>(k), std::get<1>(k), std::get<2>(k), std::get<3>(k), v.size()};
    double sum = 0.0;
    for (double g : v) sum += g;
    row.mean_gap = sum / static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double g : v) ss += (g - row.mean_gap) * (g - row.mean_gap);
      row.stderr_gap = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
    }
    out.push_back(row);
  }
  return out;
}

double avg_benefit(std::span<const std::size_t> ms_a, std::span<const double> gaps_a,
                   std::span<const std::size_t> ms_b, std::span<const double> gaps_b) {
  if (ms_a.size() != gaps_a.size() || ms_b.size() != gaps_b.size()) throw GridError("curve lengths disagree");
  if (ms_a.empty() || ms_b.empty()) throw GridError("empty m grid");
  if (!std::equal(ms_a.begin(), ms_a.end(), ms_b.begin(), ms_b.end())) throw GridError("the two curves use different m grids");
  for (std::size_t q = 1; q < ms_a.size(); ++q) {
    if (ms_a[q] <= ms_a[q - 1]) throw GridError("m grid must be strictly increasing");
  }
  if (ms_a.size() == 1) return gaps_a[0] - gaps_b[0];
  double integral = 0.0;
  for (std::size_t q = 1; q < ms_a.size(); ++q) {
    const double h = static_cast<double>(ms_a[q] - ms_a[q - 1]);
    integral += 0.5 * h * ((gaps_a[q - 1] - gaps_b[q - 1]) + (gaps_a[q] - gaps_b[q]));
  }
  return integral / static_cast<double>(ms_a.back() - ms_a.front());
}

double avg_benefit(const std::vector<ResultRecord>& records, const std::string& distribution, double eps_fraction,
                   SweepAlgorithm alg_a, SweepAlgorithm alg_b, EvalEps eval) {
  std::vector<std::size_t> ma, mb;
  std::vector<double> ga, gb;
  for (const auto& row : gap_curves(records, eval)) {
    if (row.distribution != distribution || row.eps_fraction != eps_fraction) continue;
    if (row.algorithm == alg_a) {
      ma.push_back(row.m);
      ga.push_back(row.mean_gap);
    }
    if (row.algorithm == alg_b) {
      mb.push_back(row.m);
      gb.push_back(row.mean_gap);
    }
  }
  return avg_benefit(ma, ga, mb, gb);
}

HeatmapTable benefit_heatmap(const std::vector<ResultRecord>& records, SweepAlgorithm alg_a, SweepAlgorithm alg_b,
                             EvalEps eval) {
  std::map<std::tuple<std::size_t, std::size_t, std::string>, std::string> rows;  // (kW, kX, dist) -> label
  std::set<double> fracs;
  auto k_label = [](std::size_t k) { return k == 0 ? std::string("dense") : std::to_string(k); };
  for (const auto& r : records) {
    if (r.failed) continue;
    // dense sorts after every sparse level
    const std::size_t kw = r.teacher_k == 0 ? std::numeric_limits<std::size_t>::max() : r.teacher_k;
    const std::size_t kx = r.data_k == 0 ? std::numeric_limits<std::size_t>::max() : r.data_k;
    rows[{kw, kx, r.key.distribution}] = "kW=" + k_label(r.teacher_k) + ",kX=" + k_label(r.data_k);
    fracs.insert(r.key.eps_fraction);
  }
  HeatmapTable h;
  h.eps_fractions.assign(fracs.begin(), fracs.end());
  for (const auto& [k, label] : rows) {
    h.row_labels.push_back(label);
    h.distributions.push_back(std::get<2>(k));
    std::vector<double> vals;
    for (double f : h.eps_fractions) {
      try {
        vals.push_back(avg_benefit(records, std::get<2>(k), f, alg_a, alg_b, eval));
      } catch (const GridError&) {
        vals.push_back(std::numeric_limits<double>::quiet_NaN());
      }
    }
    h.values.push_back(std::move(vals));
  }
  return h;
}

// ---- persistence ----

namespace {

const char* const kRecordHeader =
    "distribution,d,teacher_k,data_k,m,seed,algorithm,eps_fraction,epsilon,eps_star,eps_star_separable,train_acc,"
    "robust_train_acc,test_acc,robust_test_acc,norm_l1,norm_l2,norm_linf,stop_reason,iterations,final_log_loss,"
    "wall_seconds,status,error";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void write_records_csv(const std::vector<ResultRecord>& records, const fs::path& path) {
  std::ostringstream s;
  s << kRecordHeader << "\n";
  for (const auto& r : records) {
    s << r.key.distribution << ',' << r.d << ',' << r.teacher_k << ',' << r.data_k << ',' << r.key.m << ',' << r.key.seed
      << ',' << to_string(r.key.algorithm) << ',' << g17(r.key.eps_fraction) << ',' << g17(r.epsilon) << ','
      << g17(r.eps_star) << ',' << (r.eps_star_separable ? 1 : 0) << ',' << g17(r.train_acc) << ','
      << g17(r.robust_train_acc) << ',' << g17(r.test_acc) << ',' << g17(r.robust_test_acc) << ',' << g17(r.norm_l1)
      << ',' << g17(r.norm_l2) << ',' << g17(r.norm_linf) << ',' << r.stop_reason << ',' << r.iterations << ','
      << g17(r.final_log_loss) << ',' << g17(r.wall_seconds) << ',' << (r.failed ? "failed" : "ok") << ','
      << sanitize(r.error) << "\n";
  }
  write_file(path, s.str());
}

std::vector<ResultRecord> read_records_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kRecordHeader) throw std::runtime_error(path.string() + ": unexpected header");
  std::vector<ResultRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 24) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 24 fields");
    try {
      ResultRecord r;
      r.key = {c[0], std::stoul(c[4]), std::stoull(c[5]), parse_sweep_algorithm(c[6]), std::stod(c[7])};
      r.d = std::stoul(c[1]);
      r.teacher_k = std::stoul(c[2]);
      r.data_k = std::stoul(c[3]);
      r.epsilon = std::stod(c[8]);
      r.eps_star = std::stod(c[9]);
      r.eps_star_separable = c[10] == "1";
      r.train_acc = std::stod(c[11]);
      r.robust_train_acc = std::stod(c[12]);
      r.test_acc = std::stod(c[13]);
      r.robust_test_acc = std::stod(c[14]);
      r.norm_l1 = std::stod(c[15]);
      r.norm_l2 = std::stod(c[16]);
      r.norm_linf = std::stod(c[17]);
      r.stop_reason = c[18];
      r.iterations = std::stol(c[19]);
      r.final_log_loss = std::stod(c[20]);
      r.wall_seconds = std::stod(c[21]);
      r.failed = c[22] == "failed";
      r.error = c[23];
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<fs::path> emit_outputs(const std::vector<ResultRecord>& records, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<fs::path> written;

  write_records_csv(records, out_dir / "records.csv");
  written.push_back(out_dir / "records.csv");

  std::ostringstream curves;
  curves << "eval,distribution,algorithm,eps_fraction,m,n,mean_gap,stderr_gap\n";
  std::map<std::string, std::vector<GapRow>> by_dist[2];
  for (EvalEps eval : {EvalEps::training, EvalEps::zero}) {
    for (const auto& r : gap_curves(records, eval)) {
      curves << to_string(eval) << ',' << r.distribution << ',' << to_string(r.algorithm) << ',' << g17(r.eps_fraction)
             << ',' << r.m << ',' << r.n << ',' << g17(r.mean_gap) << ',' << g17(r.stderr_gap) << "\n";
      by_dist[eval == EvalEps::training ? 0 : 1][r.distribution].push_back(r);
    }
  }
  write_file(out_dir / "curves.csv", curves.str());
  written.push_back(out_dir / "curves.csv");

  const HeatmapTable h = benefit_heatmap(records);
  std::ostringstream heat;
  heat << "teacher_k,data_k";
  for (double f : h.eps_fractions) heat << ",eps_frac_" << fmt("%g", f);
  heat << "\n";
  for (std::size_t r = 0; r < h.row_labels.size(); ++r) {
    // label is "kW=<a>,kX=<b>"
    const auto& lab = h.row_labels[r];
    const auto comma = lab.find(',');
    heat << lab.substr(3, comma - 3) << ',' << lab.substr(comma + 4);
    for (double v : h.values[r]) heat << ',' << g17(v);
    heat << "\n";
  }
  write_file(out_dir / "heatmap.csv", heat.str());
  written.push_back(out_dir / "heatmap.csv");

  for (int e = 0; e < 2; ++e) {
    const EvalEps eval = e == 0 ? EvalEps::training : EvalEps::zero;
    for (const auto& [dist, rows] : by_dist[e]) {
      const fs::path p = out_dir / ("gap_" + dist + "_" + to_string(eval) + ".svg");
      write_file(p, gap_chart_svg(dist, rows, eval));
      written.push_back(p);
    }
  }
  if (!h.row_labels.empty()) {
    write_file(out_dir / "heatmap.svg", heatmap_svg(h));
    written.push_back(out_dir / "heatmap.svg");
  }
  return written;
}

}  // namespace robustbias
