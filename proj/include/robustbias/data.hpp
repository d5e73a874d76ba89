#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>

#include "robustbias/linalg.hpp"
#include "robustbias/rng.hpp"

namespace robustbias {

struct DataFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataSizeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyClassError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SparsitySpec {
  enum class Mode { dense, k_sparse };
  Mode mode = Mode::dense;
  std::size_t k = 0;  // only meaningful for k_sparse

  static SparsitySpec dense() { return {}; }
  static SparsitySpec sparse(std::size_t k) { return {Mode::k_sparse, k}; }
  bool is_dense() const { return mode == Mode::dense; }
  /// Expected number of nonzeros against dimension d.
  std::size_t expected_support(std::size_t d) const { return is_dense() ? d : k; }
  void validate(std::size_t d) const;
  bool operator==(const SparsitySpec&) const = default;
};

/// Teacher and sample sparsity are independent axes, so both readings of the
/// "sparse teacher / dense data" case labelling are expressible.
struct DistributionSpec {
  std::size_t d = 0;
  SparsitySpec teacher;
  SparsitySpec data;

  void validate() const;
  /// Stable identifier such as "d128_w4_xdense"; used in RNG keys and records.
  std::string key() const;
  bool operator==(const DistributionSpec&) const = default;
};

struct Dataset {
  Matrix samples;
  Vector labels;  // entries are +1 or -1
  std::optional<Vector> teacher;
  std::variant<DistributionSpec, std::string> source;  // string: external source tag
  std::uint64_t seed = 0;

  std::size_t m() const { return samples.rows(); }
  std::size_t d() const { return samples.cols(); }
  /// Largest l_inf norm over the samples.
  double max_linf() const;
  double max_l2() const;
};

Vector gen_teacher(const DistributionSpec& spec, std::uint64_t seed);

/// m labelled points; the teacher is gen_teacher(spec, seed).
Dataset gen_dataset(const DistributionSpec& spec, std::size_t m, std::uint64_t seed);
Dataset gen_dataset(const DistributionSpec& spec, const Vector& teacher, std::size_t m, std::uint64_t seed);

/// d^2 points (or `size` when given) sharing the teacher of gen_teacher(spec, seed).
Dataset gen_test_set(const DistributionSpec& spec, std::uint64_t seed, std::optional<std::size_t> size = {});

/// Produces the rows of gen_test_set in order, chunk by chunk, without
/// materialising the whole d^2 x d matrix.
class TestSetStream {
 public:
  TestSetStream(const DistributionSpec& spec, std::uint64_t seed, std::optional<std::size_t> size = {});

  std::size_t total() const { return total_; }
  std::size_t produced() const { return produced_; }
  const Vector& teacher() const { return teacher_; }
  /// Next block of at most max_rows rows; an empty block means done.
  Dataset next_chunk(std::size_t max_rows);

 private:
  DistributionSpec spec_;
  Vector teacher_;
  Pcg64 rng_;
  std::uint64_t seed_;
  std::size_t total_;
  std::size_t produced_ = 0;
};

/// Reads an MNIST-style IDX pair, keeps two classes (smaller digit -> -1),
/// scales pixels to [0, 1] and draws a seeded subset of m rows without
/// replacement. m = 0 keeps every matching row in file order.
Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                       const std::set<int>& classes, std::size_t m, std::uint64_t seed);

/// Raw IDX writers (big-endian, magic 2051 / 2049); used for fixtures and converters.
void write_idx_images(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                      std::span<const std::uint8_t> pixels);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

/// CSV with a one-line JSON metadata header ("# {...}") followed by
/// "label,x1,...,xd" rows printed with 17 significant digits.
void write_dataset_csv(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset_csv(const std::filesystem::path& path);

}  // namespace robustbias
