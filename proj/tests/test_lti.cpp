// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "quantemu/lti.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace quantemu;
using Catch::Approx;

namespace {

Matrix example1_B() {
  Matrix b(2, 4);
  b << 1, 0, -1, 0,
       0, 1, 0, 1;
  return b;
}

Matrix section5_H() {
  Matrix h(2, 2);
  h << 0, 1,
       -1, -2;
  return h;
}

}  // namespace

TEST_CASE("matrix exponential of zero is the identity", "[lti]") {
  const Matrix e = matrix_exponential(Matrix::Zero(3, 3));
  CHECK((e - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("matrix exponential of a diagonal matrix is entrywise exp", "[lti]") {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = 1.0;
  m(1, 1) = 2.0;
  const Matrix e = matrix_exponential(m, 1e-12);
  CHECK(e(0, 0) == Approx(std::exp(1.0)).epsilon(1e-12));
  CHECK(e(1, 1) == Approx(std::exp(2.0)).epsilon(1e-12));
  CHECK(std::abs(e(0, 1)) < 1e-15);
  CHECK(std::abs(e(1, 0)) < 1e-15);
}

TEST_CASE("matrix exponential matches an extended-precision Taylor oracle", "[lti]") {
  const Matrix m = 0.05 * section5_H();
  const Matrix expected = oracles::taylor_exp_extended(m, 60);
  CHECK(max_abs(matrix_exponential(m) - expected) < 1e-14);

  // A larger-norm case, exercising the scaling-and-squaring stage.
  Matrix big(2, 2);
  big << 1.3, -0.7, 2.1, 0.4;
  CHECK(max_abs(matrix_exponential(big) - oracles::taylor_exp_extended(big, 120)) < 1e-12);
}

TEST_CASE("matrix exponential rejects bad inputs", "[lti]") {
  CHECK_THROWS_AS(matrix_exponential(Matrix::Zero(2, 3)), std::invalid_argument);
  CHECK_THROWS_AS(matrix_exponential(Matrix::Zero(2, 2), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(matrix_exponential(Matrix::Zero(2, 2), -1e-9), std::invalid_argument);
}

TEST_CASE("semigroup property e^M e^M = e^2M", "[lti]") {
  Matrix m(3, 3);
  m << 0.2, -0.5, 0.1,
       0.3, 0.0, -0.2,
       -0.1, 0.4, 0.25;
  const double tol = 1e-12;
  const Matrix once = matrix_exponential(m, tol);
  const Matrix twice = matrix_exponential(2.0 * m, tol);
  CHECK(max_abs(once * once - twice) < 10.0 * tol);
}

TEST_CASE("discretize with A = 0 returns (I, hB) bit-exactly", "[lti]") {
  const Matrix b = example1_B();
  const double h = 0.05;
  const DiscretizedSystem d = discretize(Matrix::Zero(2, 2), b, h);
  CHECK((d.A_d.array() == Matrix::Identity(2, 2).array()).all());
  CHECK((d.B_d.array() == (h * b).array()).all());
  CHECK(d.m() == 4);
}

TEST_CASE("discretize decoupled scalar case", "[lti]") {
  const double h = 0.3;
  const DiscretizedSystem d = discretize(Matrix::Identity(2, 2), Matrix::Zero(2, 4), h);
  CHECK(d.A_d(0, 0) == Approx(std::exp(h)).epsilon(1e-12));
  CHECK(d.A_d(1, 1) == Approx(std::exp(h)).epsilon(1e-12));
  CHECK(max_abs(d.B_d) == 0.0);
}

TEST_CASE("discretized input map matches trapezoid quadrature", "[lti]") {
  const Matrix a = section5_H();
  const Matrix b = example1_B();
  const double h = 0.05;
  const DiscretizedSystem d = discretize(a, b, h);

  const Matrix bd_oracle = oracles::trapezoid_input_map(a, b, h, 10000);
  CHECK(max_abs(d.B_d - bd_oracle) / max_abs(bd_oracle) < 1e-10);

  const Matrix ad_oracle = oracles::taylor_exp_extended(a * h, 60);
  CHECK(max_abs(d.A_d - ad_oracle) / max_abs(ad_oracle) < 1e-10);
}

TEST_CASE("discretize rejects mismatched dimensions", "[lti]") {
  CHECK_THROWS_AS(discretize(Matrix::Zero(2, 2), Matrix::Zero(3, 4), 0.05), std::invalid_argument);
  CHECK_THROWS_AS(discretize(Matrix::Zero(2, 3), Matrix::Zero(2, 4), 0.05), std::invalid_argument);
  CHECK_THROWS_AS(discretize(Matrix::Zero(2, 2), Matrix::Zero(2, 4), 0.0), std::invalid_argument);
}

TEST_CASE("reference step basics", "[lti]") {
  const ContinuousLti sys(section5_H(), true);

  CHECK(reference_step(Vector::Zero(2), sys, 0.05).norm() == 0.0);

  const ContinuousLti frozen(Matrix::Zero(2, 2));
  Vector x(2);
  x << 0.3, -0.8;
  const Vector out = reference_step(x, frozen, 0.05);
  CHECK(out(0) == x(0));
  CHECK(out(1) == x(1));

  CHECK_THROWS_AS(reference_step(Vector::Zero(3), sys, 0.05), std::invalid_argument);
}

TEST_CASE("reference step matches a Runge-Kutta oracle", "[lti]") {
  const ContinuousLti sys(section5_H(), true);
  Vector x(2);
  x << 1.0, 0.0;
  const Vector stepped = reference_step(x, sys, 0.05);
  const Vector rk = oracles::rk4_flow(sys.H(), x, 0.05, 1e-4);
  CHECK((stepped - rk).norm() < 1e-12);
}

TEST_CASE("quantized step", "[lti]") {
  const DiscretizedSystem d = discretize(Matrix::Zero(2, 2), example1_B(), 0.05);

  SECTION("zero input leaves A_d x") {
    Vector x(2);
    x << 0.4, -0.2;
    const Vector out = quantized_step(x, Pattern{0, 0, 0, 0}, d);
    CHECK((out - d.A_d * x).norm() == 0.0);
  }

  SECTION("Example 1 step from the origin") {
    const Vector out = quantized_step(Vector::Zero(2), Pattern{1, 1, 0, 0}, d);
    CHECK(out(0) == Approx(0.05).margin(1e-15));
    CHECK(out(1) == Approx(0.05).margin(1e-15));
  }

  SECTION("pattern entries outside {-1,0,1} are rejected") {
    CHECK_THROWS_AS(quantized_step(Vector::Zero(2), Pattern{2, 0, 0, 0}, d),
                    std::invalid_argument);
  }

  SECTION("column-sum oracle over random patterns") {
    Rng rng(42);
    std::uniform_int_distribution<int> tern(-1, 1);
    Vector x(2);
    x << -0.3, 0.9;
    for (int trial = 0; trial < 100; ++trial) {
      Pattern u(4);
      for (int& c : u) c = tern(rng);
      Vector expected = d.A_d * x;
      for (int i = 0; i < 4; ++i) expected += double(u[std::size_t(i)]) * d.B_d.col(i);
      CHECK((quantized_step(x, u, d) - expected).norm() < 1e-15);
    }
  }
}

TEST_CASE("quantized step is affine in the input", "[lti]") {
  const DiscretizedSystem d = discretize(section5_H(), example1_B(), 0.05);
  Vector x(2);
  x << 0.2, 0.7;
  Rng rng(7);
  std::uniform_int_distribution<int> bit(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    Pattern u1(4), u2(4), sum(4);
    for (int i = 0; i < 4; ++i) {
      // Split so u1 + u2 stays in {-1,0,1}.
      const int total = bit(rng) - bit(rng);
      u1[std::size_t(i)] = total != 0 ? total : 0;
      u2[std::size_t(i)] = 0;
      if (total == 0 && bit(rng)) {
        u1[std::size_t(i)] = 1;
        u2[std::size_t(i)] = -1;
      }
      sum[std::size_t(i)] = u1[std::size_t(i)] + u2[std::size_t(i)];
    }
    const Vector base = quantized_step(x, Pattern{0, 0, 0, 0}, d);
    const Vector lhs = quantized_step(x, sum, d) - base;
    const Vector rhs =
        (quantized_step(x, u1, d) - base) + (quantized_step(x, u2, d) - base);
    CHECK((lhs - rhs).norm() < 1e-14);
  }
}

TEST_CASE("simulate_reference", "[lti]") {
  const ContinuousLti sys(section5_H(), true);
  Vector x0(2);
  x0 << 1.0, 0.0;

  SECTION("T = 1 reduces to reference_step") {
    const Trajectory t = simulate_reference(x0, sys, 0.05, 1);
    REQUIRE(t.steps() == 2);
    CHECK((t.states[1] - reference_step(x0, sys, 0.05)).norm() == 0.0);
  }

  SECTION("zero start stays at zero") {
    const Trajectory t = simulate_reference(Vector::Zero(2), sys, 0.05, 10);
    for (const Vector& s : t.states) CHECK(s.norm() == 0.0);
  }

  SECTION("stable flow eventually decreases in norm") {
    const Trajectory t = simulate_reference(x0, sys, 0.05, 200);
    bool decreasing_tail = true;
    for (std::size_t k = 100; k + 1 < t.states.size(); ++k)
      if (t.states[k + 1].norm() > t.states[k].norm()) decreasing_tail = false;
    CHECK(decreasing_tail);
    CHECK(t.states.back().norm() < 0.05);
  }

  SECTION("k-fold composition equals the k-th trajectory state") {
    const Trajectory t = simulate_reference(x0, sys, 0.05, 20);
    Vector x = x0;
    for (int k = 0; k < 20; ++k) x = reference_step(x, sys, 0.05);
    CHECK((x - t.states[20]).norm() <= 1e-12 * x.norm());
  }
}

TEST_CASE("stability verification", "[lti]") {
  CHECK_NOTHROW(ContinuousLti(section5_H(), true));
  CHECK_THROWS_AS(ContinuousLti(Matrix::Identity(2, 2), true), std::invalid_argument);

  // n = 3 goes through the spectral-radius bound on e^H.
  Matrix stable3 = -Matrix::Identity(3, 3);
  stable3(0, 1) = 0.3;
  stable3(1, 2) = -0.2;
  CHECK_NOTHROW(ContinuousLti(stable3, true));

  Matrix unstable3 = Matrix::Identity(3, 3);
  CHECK_THROWS_AS(ContinuousLti(unstable3, true), std::invalid_argument);

  CHECK_THROWS_AS(ContinuousLti(Matrix::Zero(2, 3)), std::invalid_argument);
}
