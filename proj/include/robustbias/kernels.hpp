#pragma once

#include <cstddef>
#include <span>

#include "robustbias/linalg.hpp"

// Data-parallel inner loops of the library. `serial` is the reference kept
// for testing and benchmarking; `parallel` is the OpenMP version used by
// the library. Both use the same per-output summation order, so their
// results are bitwise identical for any thread count.
namespace robustbias::kernels {

namespace serial {

/// out[i] = y[i] * <x_i, w>
void signed_margins(const Matrix& x, std::span<const double> y, std::span<const double> w, std::span<double> out);

/// out = sum_i coeff[i] * x_i, accumulated in ascending i for every column.
void weighted_row_sum(const Matrix& x, std::span<const double> coeff, std::span<double> out);

/// Number of rows with y[i] * <x_i, w> - offset > 0.
std::size_t count_margin_above(const Matrix& x, std::span<const double> y, std::span<const double> w, double offset);

}  // namespace serial

namespace parallel {

void signed_margins(const Matrix& x, std::span<const double> y, std::span<const double> w, std::span<double> out);
void weighted_row_sum(const Matrix& x, std::span<const double> coeff, std::span<double> out);
std::size_t count_margin_above(const Matrix& x, std::span<const double> y, std::span<const double> w, double offset);

}  // namespace parallel

// Library entry points.
using parallel::count_margin_above;
using parallel::signed_margins;
using parallel::weighted_row_sum;

}  // namespace robustbias::kernels
