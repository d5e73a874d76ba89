#include <cmath>
#include <cstring>

#include <omp.h>

#include "doctest.h"
#include "robustbias/kernels.hpp"
#include "robustbias/rng.hpp"

using namespace robustbias;

namespace {

bool same_bits(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("serial and OpenMP kernels agree bit for bit") {
  Pcg64 rng(17, 4);
  for (auto [m, d] : {std::pair<std::size_t, std::size_t>{3, 5}, {257, 130}, {1024, 513}, {4096, 64}}) {
    Matrix x(m, d);
    for (double& v : x.data()) v = rng.normal();
    Vector y(m), w(d), coeff(m);
    for (double& v : y) v = rng.uniform() < 0.5 ? -1.0 : 1.0;
    for (double& v : w) v = rng.normal() * 1e3;
    for (std::size_t i = 0; i < m; ++i) coeff[i] = (i % 7 == 0) ? 0.0 : std::exp(5 * rng.normal());

    for (int threads : {1, 2, 3, 8}) {
      omp_set_num_threads(threads);
      Vector zs(m), zp(m), gs(d), gp(d);
      kernels::serial::signed_margins(x, y, w, zs);
      kernels::parallel::signed_margins(x, y, w, zp);
      CHECK(same_bits(zs, zp));
      kernels::serial::weighted_row_sum(x, coeff, gs);
      kernels::parallel::weighted_row_sum(x, coeff, gp);
      CHECK(same_bits(gs, gp));
      for (double off : {0.0, 10.0, -5.0}) {
        CHECK(kernels::serial::count_margin_above(x, y, w, off) == kernels::parallel::count_margin_above(x, y, w, off));
      }
    }
  }
  omp_set_num_threads(omp_get_num_procs());
}

TEST_CASE("kernel results") {
  Matrix x(2, 2);
  x(0, 0) = 1;
  x(0, 1) = 2;
  x(1, 0) = -3;
  x(1, 1) = 4;
  const Vector y = {1, -1}, w = {1, 1};
  Vector z(2), g(2);
  kernels::signed_margins(x, y, w, z);
  CHECK(z == Vector{3, -1});
  kernels::weighted_row_sum(x, Vector{2, 1}, g);
  CHECK(g == Vector{-1, 8});
  CHECK(kernels::count_margin_above(x, y, w, 0.0) == 1);
  CHECK(kernels::count_margin_above(x, y, w, 3.0) == 0);
  CHECK_THROWS(kernels::signed_margins(x, y, Vector{1}, z));
}
