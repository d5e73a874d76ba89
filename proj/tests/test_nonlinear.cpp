#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "robustbias/nonlinear.hpp"

using namespace robustbias;
using doctest::Approx;

namespace {

MlpModel tiny() {
  MlpModel m{Matrix(2, 2), Vector{1.0, -1.0}};
  m.W(0, 0) = 1.0;
  m.W(1, 1) = 1.0;
  return m;
}

Dataset uniform_set(Pcg64& rng, std::size_t m, std::size_t d, double lo, double hi) {
  Dataset out;
  Vector x(d);
  for (std::size_t i = 0; i < m; ++i) {
    for (double& v : x) v = lo + (hi - lo) * rng.uniform();
    out.samples.append_row(x);
    out.labels.push_back(i % 2 ? -1.0 : 1.0);
  }
  return out;
}

}  // namespace

TEST_CASE("mlp forward on a hand example") {
  const MlpModel m = tiny();
  CHECK(mlp_forward(m, Vector{2.0, -3.0}) == 2.0);
  CHECK(mlp_forward(m, Vector{-1.0, 4.0}) == -4.0);
  CHECK(mlp_forward(m, Vector{0.0, 0.0}) == 0.0);
  CHECK_THROWS_AS(mlp_forward(m, Vector{1.0}), std::invalid_argument);
}

TEST_CASE("mlp output is 2-homogeneous in the parameters") {
  Pcg64 rng(3, 1);
  const MlpModel m = init_mlp(5, 7, 11, 1.0);
  for (int t = 0; t < 50; ++t) {
    Vector x(5);
    for (double& v : x) v = rng.normal();
    const double c = 0.5 + 3.0 * rng.uniform();
    MlpModel s = m;
    for (double& v : s.W.data()) v *= c;
    for (double& v : s.u) v *= c;
    CHECK(mlp_forward(s, x) == Approx(c * c * mlp_forward(m, x)).epsilon(1e-12));
  }
}

TEST_CASE("mlp parameter gradients match finite differences") {
  Pcg64 rng(5, 2);
  const MlpModel m = init_mlp(4, 6, 2, 1.0);
  const double h = 1e-6;
  for (int t = 0; t < 10; ++t) {
    Vector x(4);
    for (double& v : x) v = rng.normal();
    const double y = t % 2 ? 1.0 : -1.0;
    const MlpGrads g = mlp_grads(m, x, y);
    auto loss = [&](const MlpModel& mm) { return std::exp(-y * mlp_forward(mm, x)); };
    for (std::size_t j = 0; j < m.width(); ++j) {
      MlpModel a = m, b = m;
      a.u[j] += h;
      b.u[j] -= h;
      CHECK(g.u[j] == Approx((loss(a) - loss(b)) / (2 * h)).epsilon(1e-6));
      for (std::size_t l = 0; l < 4; ++l) {
        a = m;
        b = m;
        a.W(j, l) += h;
        b.W(j, l) -= h;
        CHECK(g.W(j, l) == Approx((loss(a) - loss(b)) / (2 * h)).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("inactive units get zero gradient rows and flipping y flips the sign of dl/df") {
  const MlpModel m = tiny();
  const Vector x{2.0, -3.0};  // unit 1 inactive
  const MlpGrads gp = mlp_grads(m, x, 1.0);
  CHECK(gp.u[1] == 0.0);
  CHECK(gp.W(1, 0) == 0.0);
  CHECK(gp.W(1, 1) == 0.0);
  // f = 2: dl/du0 = -y e^{-y f} * 2
  CHECK(gp.u[0] == Approx(-2.0 * std::exp(-2.0)).epsilon(1e-15));
  const MlpGrads gn = mlp_grads(m, x, -1.0);
  CHECK(gn.u[0] == Approx(2.0 * std::exp(2.0)).epsilon(1e-15));
  CHECK(gn.W(0, 0) == Approx(2.0 * std::exp(2.0)).epsilon(1e-15));
}

TEST_CASE("init_mlp scaling and bounds") {
  const MlpModel a = init_mlp(9, 16, 4, 1e-2);
  const MlpModel b = init_mlp(9, 16, 4, 2e-2);
  for (std::size_t q = 0; q < a.W.data().size(); ++q) CHECK(b.W.data()[q] == 2.0 * a.W.data()[q]);
  for (std::size_t j = 0; j < a.width(); ++j) CHECK(b.u[j] == 2.0 * a.u[j]);
  for (double v : a.W.data()) CHECK(std::abs(v) <= 1e-2 / 3.0);
  for (double v : a.u) CHECK(std::abs(v) <= 1e-2 / 4.0);
  CHECK(init_mlp(9, 16, 4) == a);
  CHECK_FALSE(init_mlp(9, 16, 5) == a);
  CHECK_THROWS_AS(init_mlp(0, 16, 4), std::invalid_argument);
  CHECK_THROWS_AS(init_mlp(9, 16, 4, 0.0), std::invalid_argument);
}

TEST_CASE("algorithm names") {
  CHECK(parse_mlp_algorithm("gd") == MlpAlgorithm::gd);
  CHECK(parse_mlp_algorithm("sd") == MlpAlgorithm::sign_descent);
  CHECK(parse_mlp_algorithm("sign_descent") == MlpAlgorithm::sign_descent);
  CHECK(to_string(MlpAlgorithm::sign_descent) == "sd");
  CHECK_THROWS_AS(parse_mlp_algorithm("adam"), std::invalid_argument);
}

TEST_CASE("one sign-descent epoch moves every parameter by at most lr") {
  Pcg64 rng(8, 8);
  const Dataset data = uniform_set(rng, 12, 5, -1.0, 1.0);
  MlpOptions opt;
  opt.algorithm = MlpAlgorithm::sign_descent;
  opt.lr = 1e-3;
  opt.width = 8;
  opt.init_scale = 1.0;
  opt.stop = StoppingRule::fixed_iterations(1);
  const MlpTrace tr = train_mlp(data, nullptr, ThreatModel(NormExponent::infinity(), 0.05), opt);
  const MlpModel m0 = init_mlp(5, 8, opt.seed, 1.0);
  double dmax = 0.0;
  for (std::size_t q = 0; q < m0.W.data().size(); ++q) dmax = std::max(dmax, std::abs(tr.model.W.data()[q] - m0.W.data()[q]));
  for (std::size_t j = 0; j < m0.width(); ++j) dmax = std::max(dmax, std::abs(tr.model.u[j] - m0.u[j]));
  CHECK(dmax == Approx(1e-3).epsilon(1e-9));
  CHECK(tr.rows.size() == 2);
  CHECK(tr.epochs == 1);
}

TEST_CASE("a single always-active unit is attacked like its linear model") {
  // inputs in [1, 2]^d and positive first-layer weights keep the unit active
  // inside the eps ball, so PGD must match the closed form.
  Pcg64 rng(21, 4);
  const std::size_t d = 6;
  const Dataset data = uniform_set(rng, 40, d, 1.0, 2.0);
  MlpModel m{Matrix(1, d), Vector{0.7}};
  for (double& v : m.W.data()) v = 0.2 + rng.uniform();
  const ThreatModel tm(NormExponent::infinity(), 0.1);
  double w1 = 0.0;
  for (double v : m.W.data()) w1 += v;
  for (std::size_t i = 0; i < data.m(); ++i) {
    const auto x = data.samples.row(i);
    const double y = data.labels[i];
    const Vector adv = pgd_attack(mlp_input_gradient(m), x, y, tm, 10);
    const double closed = y * mlp_forward(m, x) - tm.epsilon * m.u[0] * w1;
    CHECK(y * mlp_forward(m, adv) == Approx(closed).epsilon(1e-12));
  }
}

TEST_CASE("trainer's last logged robust accuracies equal a post-hoc evaluation") {
  Pcg64 rng(30, 1);
  const Dataset train = uniform_set(rng, 16, 4, -1.0, 1.0);
  const Dataset test = uniform_set(rng, 32, 4, -1.0, 1.0);
  MlpOptions opt;
  opt.algorithm = MlpAlgorithm::sign_descent;
  opt.lr = 1e-2;
  opt.width = 16;
  opt.init_scale = 1.0;
  opt.eval_every = 5;
  opt.stop = StoppingRule::fixed_iterations(7);
  const ThreatModel tm(NormExponent::infinity(), 0.05);
  const MlpTrace tr = train_mlp(train, &test, tm, opt);
  REQUIRE(tr.rows.size() == 8);
  CHECK(tr.rows.back().robust_train_acc == mlp_robust_accuracy(tr.model, train, tm, opt.pgd_steps));
  CHECK(tr.rows.back().robust_test_acc == mlp_robust_accuracy(tr.model, test, tm, opt.pgd_steps));
  CHECK(std::isnan(tr.rows[1].robust_test_acc));
  CHECK_FALSE(std::isnan(tr.rows[5].robust_test_acc));
  // robust accuracy never exceeds clean accuracy for the same model
  CHECK(mlp_robust_accuracy(tr.model, test, tm) <= mlp_robust_accuracy(tr.model, test, ThreatModel{}));
}

TEST_CASE("sign descent fits a small separable set robustly") {
  Pcg64 rng(2, 2);
  Dataset data;
  for (int i = 0; i < 20; ++i) {
    Vector x{rng.normal(), rng.normal(), rng.normal()};
    const double y = x[0] + 0.5 * x[1] > 0 ? 1.0 : -1.0;
    x[0] += 0.5 * y;
    data.samples.append_row(x);
    data.labels.push_back(y);
  }
  MlpOptions opt;
  opt.algorithm = MlpAlgorithm::sign_descent;
  opt.lr = 1e-2;
  opt.width = 32;
  opt.init_scale = 1.0;
  opt.eval_every = 1000000;
  opt.stop = {1e-2, 5000};
  const ThreatModel tm(NormExponent::infinity(), 0.1);
  const MlpTrace tr = train_mlp(data, nullptr, tm, opt);
  CHECK(tr.stop == StopReason::threshold);
  CHECK(mlp_robust_accuracy(tr.model, data, tm) == 1.0);
}

TEST_CASE("checkpoint round trip is exact") {
  const MlpModel m = init_mlp(7, 5, 99, 0.3);
  const auto path = std::filesystem::temp_directory_path() / "robustbias_ckpt_test.csv";
  write_mlp_checkpoint(m, path, R"({"seed": 99})");
  CHECK(read_mlp_checkpoint(path) == m);
  std::filesystem::remove(path);
  CHECK_THROWS(read_mlp_checkpoint(path));
}
