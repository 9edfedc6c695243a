#include <doctest.h>

#include <cmath>

#include "evnet/loss.hpp"
#include "evnet/random.hpp"

using namespace evnet;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Matrix random_points(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  auto rng = make_stream({seed});
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1, 1);
  return m;
}

}  // namespace

TEST_SUITE("loss") {
  TEST_CASE("t kernel examples") {
    CHECK(t_kernel(vec({1, 2}), vec({1, 2}), 3.0) == 1.0);
    CHECK(t_kernel(vec({0}), vec({1}), 1.0) == 0.5);
    // (1.01)^(-50.5) computed independently via exp/log.
    const double expected = std::exp(-50.5 * std::log1p(0.01));
    CHECK(t_kernel(vec({0, 0}), vec({0.6, 0.8}), 100.0) == doctest::Approx(expected).epsilon(1e-13));
    CHECK(expected == doctest::Approx(0.6050).epsilon(1e-4));
    CHECK_THROWS_AS(t_kernel(vec({0}), vec({1}), 0.0), Error);
  }

  TEST_CASE("t kernel is symmetric, bounded and monotone") {
    auto rng = make_stream({5});
    for (int trial = 0; trial < 200; ++trial) {
      Vector u(3), v(3);
      for (int i = 0; i < 3; ++i) {
        u(i) = rng.uniform(-3, 3);
        v(i) = rng.uniform(-3, 3);
      }
      const double nu = rng.uniform(0.001, 200);
      const double k = t_kernel(u, v, nu);
      CHECK(k == t_kernel(v, u, nu));
      CHECK(k > 0.0);
      CHECK(k <= 1.0);
      CHECK(t_kernel(u, u + 2.0 * (v - u), nu) <= k);
    }
  }

  TEST_CASE("kernel derivative matches finite differences") {
    for (double nu : {0.01, 1.0, 100.0}) {
      for (double d : {0.01, 0.5, 3.0}) {
        const double h = 1e-6 * d;
        const double fd = (t_kernel_sq(d + h, nu) - t_kernel_sq(d - h, nu)) / (2 * h);
        CHECK(t_kernel_sq_derivative(d, nu) == doctest::Approx(fd).epsilon(1e-6));
      }
    }
  }

  TEST_CASE("structure loss examples") {
    const LossConfig cfg;
    const Matrix half = Matrix::Constant(2, 2, 0.5);
    CHECK(loss_sp(half, half, cfg) == doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-14));

    Matrix t(2, 2);
    t << 1 - cfg.clamp, cfg.clamp, cfg.clamp, 1 - cfg.clamp;
    CHECK(loss_sp(t, t, cfg) < 1e-5);
    LossConfig no_diag = cfg;
    no_diag.include_diagonal = false;
    CHECK(loss_sp(half, half, no_diag) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-14));
  }

  TEST_CASE("moving S^Z away from the target raises the loss") {
    const LossConfig cfg;
    auto rng = make_stream({8});
    Matrix t(5, 5);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(0.05, 0.95);
    const double base = loss_sp(t, t, cfg);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      for (double delta : {-0.01, 0.01}) {
        Matrix s = t;
        s.data()[i] += delta;
        CHECK(loss_sp(t, s, cfg) > base);
      }
    }
  }

  TEST_CASE("loss partials match finite differences") {
    const LossConfig cfg;
    auto rng = make_stream({9});
    Matrix t(4, 4), s(4, 4);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      t.data()[i] = rng.uniform(0.05, 0.95);
      s.data()[i] = rng.uniform(0.05, 0.95);
    }
    const LossPartials p = loss_sp_partials(t, s, cfg);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double h = 1e-6;
      Matrix up = s, down = s;
      up.data()[i] += h;
      down.data()[i] -= h;
      CHECK(p.d_low.data()[i] == doctest::Approx((loss_sp(t, up, cfg) - loss_sp(t, down, cfg)) / (2 * h)).epsilon(1e-6));
      Matrix tu = t, td = t;
      tu.data()[i] += h;
      td.data()[i] -= h;
      CHECK(p.d_target.data()[i] ==
            doctest::Approx((loss_sp(tu, s, cfg) - loss_sp(td, s, cfg)) / (2 * h)).epsilon(1e-6));
    }
  }

  TEST_CASE("similarity matrices") {
    const LossConfig cfg;
    const Matrix y = random_points(6, 4, 1);
    const Matrix z = random_points(6, 2, 2);
    const SimilarityMatrices s = similarity_matrices(y, y, z, cfg);
    for (Eigen::Index i = 0; i < 6; ++i) {
      CHECK(s.target(i, i) == 1.0);
      CHECK(s.low(i, i) == 1.0);
      for (Eigen::Index j = 0; j < 6; ++j) {
        CHECK(s.target(i, j) == s.target(j, i));
        const double expected = t_kernel(y.row(i).transpose(), y.row(j).transpose(), cfg.nu_y);
        CHECK(s.target(i, j) == doctest::Approx(expected).epsilon(1e-13));
      }
    }
    // Originals against different augments: no symmetry in general.
    const SimilarityMatrices a = similarity_matrices(y, random_points(6, 4, 3), z, cfg);
    CHECK(a.target != a.target.transpose());
  }

  TEST_CASE("two-point hand computation") {
    LossConfig cfg;
    cfg.nu_y = 1.0;
    cfg.nu_z = 1.0;
    Matrix y(2, 1), ya(2, 1), z(2, 2);
    y << 0, 1;
    ya << 0, 2;
    z << 0, 0, 1, 1;
    const SimilarityMatrices s = similarity_matrices(y, ya, z, cfg);
    // nu = 1: kappa = 1 / (1 + d^2).
    CHECK(s.target(0, 0) == 1.0);
    CHECK(s.target(0, 1) == 1.0 / 5.0);
    CHECK(s.target(1, 0) == 1.0 / 2.0);
    CHECK(s.target(1, 1) == 1.0 / 2.0);
    CHECK(s.low(0, 1) == 1.0 / 3.0);
  }

  TEST_CASE("regularizer") {
    CHECK(loss_reg(Vector::Zero(3)) == 0.0);
    CHECK(loss_reg(Vector::Constant(10, 0.2)) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(loss_reg(vec({-0.3, 0.1})) == doctest::Approx(0.4).epsilon(1e-15));
  }

  TEST_CASE("lambda schedule") {
    const LambdaState s = lambda_init(1.0, 2.0);
    CHECK(s.lambda == 5.0);
    CHECK(lambda_init(0.0, 2.0).lambda == 0.0);
    CHECK_THROWS_AS(lambda_init(1.0, 0.0), Error);

    LambdaState five;
    five.lambda = 5.0;
    CHECK(lambda_step(five, 100, 50).lambda == doctest::Approx(5.025).epsilon(1e-15));
    const LambdaState hit = lambda_step(five, 50, 50);
    CHECK(hit.frozen);
    CHECK(hit.lambda == 5.0);
    CHECK(lambda_step(hit, 100, 50).lambda == 5.0);
  }

  TEST_CASE("config validation") {
    LossConfig cfg;
    cfg.nu_z = 0.0;
    CHECK_THROWS_AS(validate(cfg), Error);
    cfg = {};
    cfg.clamp = 0.5;
    CHECK_THROWS_AS(validate(cfg), Error);
  }
}
