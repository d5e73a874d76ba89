// Serial reference vs OpenMP kernels at sweep-like shapes (m rows, d columns).

#include <benchmark/benchmark.h>

#include <vector>

#include "robustbias/kernels.hpp"
#include "robustbias/rng.hpp"

using namespace robustbias;

namespace {

struct Problem {
  Matrix x;
  std::vector<double> y, w, coeff, out_m, out_d;

  Problem(std::size_t m, std::size_t d) : x(m, d), y(m), w(d), coeff(m), out_m(m), out_d(d) {
    Pcg64 rng(7, m * 1000 + d);
    for (double& v : x.data()) v = rng.normal();
    for (std::size_t i = 0; i < m; ++i) {
      y[i] = rng.uniform() < 0.5 ? -1.0 : 1.0;
      coeff[i] = rng.normal();
    }
    for (double& v : w) v = rng.normal();
  }
};

void shapes(benchmark::internal::Benchmark* b) {
  for (long d : {128, 512}) {
    for (long m : {64, 1024, 16384}) b->Args({m, d});
  }
}

template <bool Parallel>
void BM_signed_margins(benchmark::State& state) {
  Problem p(state.range(0), state.range(1));
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::signed_margins(p.x, p.y, p.w, p.out_m);
    } else {
      kernels::serial::signed_margins(p.x, p.y, p.w, p.out_m);
    }
    benchmark::DoNotOptimize(p.out_m.data());
  }
  state.SetBytesProcessed(state.iterations() * static_cast<long>(p.x.data().size() * sizeof(double)));
}

template <bool Parallel>
void BM_weighted_row_sum(benchmark::State& state) {
  Problem p(state.range(0), state.range(1));
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::weighted_row_sum(p.x, p.coeff, p.out_d);
    } else {
      kernels::serial::weighted_row_sum(p.x, p.coeff, p.out_d);
    }
    benchmark::DoNotOptimize(p.out_d.data());
  }
  state.SetBytesProcessed(state.iterations() * static_cast<long>(p.x.data().size() * sizeof(double)));
}

template <bool Parallel>
void BM_count_margin_above(benchmark::State& state) {
  Problem p(state.range(0), state.range(1));
  std::size_t n = 0;
  for (auto _ : state) {
    n = Parallel ? kernels::parallel::count_margin_above(p.x, p.y, p.w, 0.1)
                 : kernels::serial::count_margin_above(p.x, p.y, p.w, 0.1);
    benchmark::DoNotOptimize(n);
  }
}

}  // namespace

BENCHMARK(BM_signed_margins<false>)->Apply(shapes)->Name("signed_margins/serial");
BENCHMARK(BM_signed_margins<true>)->Apply(shapes)->Name("signed_margins/omp");
BENCHMARK(BM_weighted_row_sum<false>)->Apply(shapes)->Name("weighted_row_sum/serial");
BENCHMARK(BM_weighted_row_sum<true>)->Apply(shapes)->Name("weighted_row_sum/omp");
BENCHMARK(BM_count_margin_above<false>)->Apply(shapes)->Name("count_margin_above/serial");
BENCHMARK(BM_count_margin_above<true>)->Apply(shapes)->Name("count_margin_above/omp");

BENCHMARK_MAIN();
