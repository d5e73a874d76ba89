#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "robustbias/optimize.hpp"

namespace robustbias {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GridError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class SweepAlgorithm { gd, cd, sd, diag_gd };
SweepAlgorithm parse_sweep_algorithm(const std::string& text);
std::string to_string(SweepAlgorithm alg);

struct SweepConfig {
  std::vector<DistributionSpec> distributions{{512, SparsitySpec::dense(), SparsitySpec::dense()}};
  std::vector<std::size_t> m_grid{64, 128, 256, 512, 1024};
  std::vector<double> eps_fractions{0.0, 0.25, 0.5};  // of eps* per draw
  std::vector<SweepAlgorithm> algorithms{SweepAlgorithm::gd, SweepAlgorithm::cd, SweepAlgorithm::diag_gd};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::filesystem::path output_dir = "sweep_out";
  NormExponent p = NormExponent::infinity();
  StoppingRule stop;
  long eps_star_iters = 100000;
  std::optional<std::size_t> test_size;  // default d^2
  double diag_lr = 2e-3;
  double diag_alpha = 1e-3;
  double eta_max = 1e5;

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static SweepConfig from_json(const nlohmann::json& j);
  static SweepConfig load(const std::filesystem::path& path);
};

struct CellKey {
  std::string distribution;  // DistributionSpec::key()
  std::size_t m = 0;
  std::uint64_t seed = 0;
  SweepAlgorithm algorithm = SweepAlgorithm::gd;
  double eps_fraction = 0.0;

  /// File-name safe and unique within a sweep.
  std::string id() const;
  auto operator<=>(const CellKey&) const = default;
};

struct ResultRecord {
  CellKey key;
  std::size_t d = 0;
  std::size_t teacher_k = 0;  // 0 = dense
  std::size_t data_k = 0;     // 0 = dense
  double eps_star = 0.0;
  bool eps_star_separable = false;
  double epsilon = 0.0;
  double train_acc = 0.0;
  double robust_train_acc = 0.0;
  double test_acc = 0.0;  // clean
  double robust_test_acc = 0.0;
  double norm_l1 = 0.0;
  double norm_l2 = 0.0;
  double norm_linf = 0.0;
  std::string stop_reason;
  long iterations = 0;
  double final_log_loss = 0.0;
  double wall_seconds = 0.0;
  bool failed = false;
  std::string error;

  nlohmann::json to_json() const;
  static ResultRecord from_json(const nlohmann::json& j);
  /// Equality of everything except wall time.
  bool same_result(const ResultRecord& other) const;
};

/// Worker threads for run_sweep: ROBUSTBIAS_WORKERS if set and positive, else 1.
std::size_t sweep_workers();

struct SweepProgress {
  std::size_t cells_total = 0;
  std::size_t cells_trained = 0;  // this invocation
  std::size_t cells_reused = 0;   // already on disk
};

/// Runs every (distribution, seed, m, algorithm, eps fraction) cell. Each
/// cell is committed to <output_dir>/cells/<id>.json by atomic rename, and
/// cells already present are loaded instead of retrained. Failed cells are
/// recorded, never thrown. The resolved config is written to
/// <output_dir>/config.resolved.json. Records come back sorted by key.
std::vector<ResultRecord> run_sweep(const SweepConfig& config, SweepProgress* progress = nullptr);

/// Draw order used by the sweep: the dataset for (distribution, seed, m).
Dataset sweep_dataset(const DistributionSpec& dist, std::uint64_t seed, std::size_t m);

enum class EvalEps { training, zero };
std::string to_string(EvalEps e);

struct GapRow {
  std::string distribution;
  SweepAlgorithm algorithm = SweepAlgorithm::gd;
  double eps_fraction = 0.0;
  std::size_t m = 0;
  std::size_t n = 0;
  double mean_gap = 0.0;
  double stderr_gap = 0.0;  // sample sd / sqrt(n); 0 when n = 1
};

/// Mean and standard error over seeds of train minus test accuracy, robust
/// (training eps) or clean. Failed records are skipped. Sorted by
/// (distribution, algorithm, eps fraction, m).
std::vector<GapRow> gap_curves(const std::vector<ResultRecord>& records, EvalEps eval);

/// Trapezoid integral of gap_a(m) - gap_b(m) over the m grid divided by
/// (max m - min m); the plain difference for a single-point grid.
double avg_benefit(std::span<const std::size_t> ms_a, std::span<const double> gaps_a,
                   std::span<const std::size_t> ms_b, std::span<const double> gaps_b);
double avg_benefit(const std::vector<ResultRecord>& records, const std::string& distribution, double eps_fraction,
                   SweepAlgorithm alg_a = SweepAlgorithm::gd, SweepAlgorithm alg_b = SweepAlgorithm::cd,
                   EvalEps eval = EvalEps::training);

struct HeatmapTable {
  std::vector<std::string> row_labels;  // "kW=<k|dense>,kX=<k|dense>"
  std::vector<std::string> distributions;
  std::vector<double> eps_fractions;
  std::vector<std::vector<double>> values;  // NaN where undefined
};
HeatmapTable benefit_heatmap(const std::vector<ResultRecord>& records, SweepAlgorithm alg_a = SweepAlgorithm::gd,
                             SweepAlgorithm alg_b = SweepAlgorithm::cd, EvalEps eval = EvalEps::training);

void write_records_csv(const std::vector<ResultRecord>& records, const std::filesystem::path& path);
std::vector<ResultRecord> read_records_csv(const std::filesystem::path& path);

/// records.csv, curves.csv, heatmap.csv and SVG charts (gap curves per
/// distribution, the heatmap). Byte-stable for identical records; empty
/// input gives header-only CSVs and no SVG.
std::vector<std::filesystem::path> emit_outputs(const std::vector<ResultRecord>& records,
                                                const std::filesystem::path& out_dir);

}  // namespace robustbias
