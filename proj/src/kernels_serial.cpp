#include <algorithm>
#include <stdexcept>

#include "robustbias/kernels.hpp"

namespace robustbias::kernels::serial {

void signed_margins(const Matrix& x, std::span<const double> y, std::span<const double> w, std::span<double> out) {
  if (w.size() != x.cols() || y.size() != x.rows() || out.size() != x.rows()) {
    throw std::invalid_argument("signed_margins: shape mismatch");
  }
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = y[i] * dot(x.row(i), w);
}

void weighted_row_sum(const Matrix& x, std::span<const double> coeff, std::span<double> out) {
  if (coeff.size() != x.rows() || out.size() != x.cols()) throw std::invalid_argument("weighted_row_sum: shape mismatch");
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double c = coeff[i];
    if (c == 0.0) continue;
    const auto row = x.row(i);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += c * row[j];
  }
}

std::size_t count_margin_above(const Matrix& x, std::span<const double> y, std::span<const double> w, double offset) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (y[i] * dot(x.row(i), w) - offset > 0.0) ++count;
  }
  return count;
}

}  // namespace robustbias::kernels::serial
