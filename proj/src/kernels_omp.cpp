#include <algorithm>
#include <cstdint>
#include <stdexcept>

#include <omp.h>

#include "robustbias/kernels.hpp"

namespace robustbias::kernels::parallel {

namespace {

// Below this many matrix entries the fork/join costs more than the loop.
constexpr std::size_t kMinParallelWork = std::size_t{1} << 15;
constexpr std::size_t kColumnAlign = 8;

}  // namespace

void signed_margins(const Matrix& x, std::span<const double> y, std::span<const double> w, std::span<double> out) {
  if (w.size() != x.cols() || y.size() != x.rows() || out.size() != x.rows()) {
    throw std::invalid_argument("signed_margins: shape mismatch");
  }
  const auto rows = static_cast<std::int64_t>(x.rows());
#pragma omp parallel for schedule(static) if (x.rows() * x.cols() >= kMinParallelWork)
  for (std::int64_t i = 0; i < rows; ++i) out[i] = y[i] * dot(x.row(i), w);
}

void weighted_row_sum(const Matrix& x, std::span<const double> coeff, std::span<double> out) {
  if (coeff.size() != x.rows() || out.size() != x.cols()) throw std::invalid_argument("weighted_row_sum: shape mismatch");
  const std::size_t cols = x.cols();
  const bool par = x.rows() * x.cols() >= kMinParallelWork;
  // One column block per thread: every block streams the whole matrix, so
  // more blocks than threads only adds passes.
  const std::size_t threads = par ? static_cast<std::size_t>(omp_get_max_threads()) : 1;
  std::size_t width = (cols + threads - 1) / threads;
  width = std::max<std::size_t>(kColumnAlign, (width + kColumnAlign - 1) / kColumnAlign * kColumnAlign);
  const auto blocks = static_cast<std::int64_t>((cols + width - 1) / width);
  // Each block walks rows in ascending order, which reproduces the serial
  // accumulation order per column.
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t b = 0; b < blocks; ++b) {
    const std::size_t lo = static_cast<std::size_t>(b) * width;
    const std::size_t hi = std::min(cols, lo + width);
    for (std::size_t j = lo; j < hi; ++j) out[j] = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double c = coeff[i];
      if (c == 0.0) continue;
      const double* row = x.row(i).data();
      for (std::size_t j = lo; j < hi; ++j) out[j] += c * row[j];
    }
  }
}

std::size_t count_margin_above(const Matrix& x, std::span<const double> y, std::span<const double> w, double offset) {
  const auto rows = static_cast<std::int64_t>(x.rows());
  std::int64_t count = 0;
#pragma omp parallel for schedule(static) reduction(+ : count) if (x.rows() * x.cols() >= kMinParallelWork)
  for (std::int64_t i = 0; i < rows; ++i) {
    if (y[i] * dot(x.row(i), w) - offset > 0.0) ++count;
  }
  return static_cast<std::size_t>(count);
}

}  // namespace robustbias::kernels::parallel
