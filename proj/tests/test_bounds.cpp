#include <cmath>

#include "doctest.h"
#include "robustbias/bounds.hpp"
#include "robustbias/rng.hpp"

using namespace robustbias;
using doctest::Approx;

namespace {

BoundSpec base() {
  BoundSpec s;
  s.r = 2;
  s.m = 100;
  s.d = 16;
  s.W = 1;
  s.max_linf = 1;
  s.max_l2 = 1;
  return s;
}

}  // namespace

TEST_CASE("clean Rademacher") {
  BoundSpec s = base();
  CHECK(clean_rademacher(s) == Approx(0.1));
  s.r = 1;
  s.d = 8;
  CHECK(clean_rademacher(s) == Approx(std::sqrt(2 * std::log(16.0)) / 10).epsilon(1e-14));
  CHECK(clean_rademacher(s) == Approx(0.23548).epsilon(1e-4));
  const double before = clean_rademacher(s);
  s.m = 400;
  CHECK(clean_rademacher(s) == Approx(before / 2).epsilon(1e-14));
  s.r = 3;
  CHECK_THROWS_AS(clean_rademacher(s), BoundRangeError);
}

TEST_CASE("robust Rademacher upper bound") {
  BoundSpec s = base();
  s.epsilon = 0.1;
  CHECK(robust_rademacher_upper(0.1, s) == Approx(0.12).epsilon(1e-14));
  s.r = 1;
  CHECK(robust_rademacher_upper(0.1, s) == Approx(0.105).epsilon(1e-14));
  s.epsilon = 0;
  CHECK(robust_rademacher_upper(0.1, s) == 0.1);
  // p = 1 against r = 2: d^(0 - 1/2) < 1, so the factor is 1
  s = base();
  s.epsilon = 0.1;
  s.p = NormExponent::one();
  CHECK(robust_rademacher_upper(0.1, s) == Approx(0.105).epsilon(1e-14));
}

TEST_CASE("interpolator bound") {
  BoundSpec s = base();
  s.r = 1;
  s.d = 8;
  s.epsilon = 0.5;
  s.teacher_l1 = 2.0;
  const double raw = interpolator_bound(s);
  CHECK(raw == Approx(1.5494).epsilon(1e-4));
  CHECK(reported_bound(raw) == 1.0);

  s = base();
  s.teacher_l2 = 1.5;
  s.max_l2 = 2.0;
  CHECK(interpolator_bound(s) == Approx(2 * 2.0 * 1.5 / 10 + confidence_term(0.05, 100)).epsilon(1e-14));
  CHECK(confidence_term(1.0, 100) == Approx(3 * std::sqrt(std::log(2.0) / 200)).epsilon(1e-14));
  s.teacher_l2.reset();
  CHECK_THROWS(interpolator_bound(s));
}

TEST_CASE("bounds are monotone in eps and m") {
  Pcg64 rng(3, 3);
  for (int t = 0; t < 100; ++t) {
    BoundSpec s = base();
    s.r = rng.uniform() < 0.5 ? 1 : 2;
    s.d = 1 + static_cast<long>(rng.below(1000));
    s.m = 1 + static_cast<long>(rng.below(5000));
    s.epsilon = rng.uniform();
    s.teacher_l1 = 1 + rng.uniform();
    s.teacher_l2 = 1 + rng.uniform();
    BoundSpec more_eps = s, more_m = s;
    more_eps.epsilon += 0.1;
    more_m.m *= 2;
    CHECK(interpolator_bound(more_eps) > interpolator_bound(s));
    CHECK(interpolator_bound(more_m) < interpolator_bound(s));
    const double c = clean_rademacher(s);
    CHECK(robust_rademacher_upper(c, more_eps) > robust_rademacher_upper(c, s));
    CHECK(robust_rademacher_upper(clean_rademacher(more_m), more_m) < robust_rademacher_upper(c, s));
  }
}

TEST_CASE("case rates") {
  const auto [r1, r2] = case_rates(RateCase::SS, 512, 4, 0, 64);
  CHECK(r1 == Approx(4 * std::sqrt(std::log(512.0)) / 8).epsilon(1e-14));
  CHECK(r2 == Approx(0.5).epsilon(1e-14));
  const auto big = case_rates(RateCase::SS, 512, 4, 10, 64);
  CHECK(big.second > 5 * big.first);
  const auto dd = case_rates(RateCase::DD, 512, 512, 0, 64);
  CHECK(dd.second / dd.first == Approx(1 / std::sqrt(std::log(512.0))).epsilon(1e-14));
  CHECK(parse_rate_case("DS") == RateCase::DS);
  CHECK_THROWS(parse_rate_case("XX"));
  CHECK_THROWS(case_rates(RateCase::SS, 4, 5, 0, 1));
}
