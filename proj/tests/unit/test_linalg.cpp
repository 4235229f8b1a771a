#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "saspec/error.hpp"
#include "saspec/linalg.hpp"
#include "test_util.hpp"

using namespace saspec;
using testing_util::eigen_singular_values;
using testing_util::random_matrix;

namespace {

double oracle_sigma1(const Matrix& m) { return eigen_singular_values(m)(0); }

}  // namespace

TEST(Matrix, RejectsNonFiniteOnConstruction) {
  EXPECT_THROW(Matrix(1, 2, {1.0, std::numeric_limits<double>::quiet_NaN()}), Error);
  EXPECT_THROW(Matrix(1, 1, {std::numeric_limits<double>::infinity()}), Error);
  EXPECT_THROW(Matrix(2, 2, {1.0, 2.0, 3.0}), Error);
}

TEST(Matrix, MatvecAgreesWithTranspose) {
  std::mt19937_64 rng(3);
  const Matrix w = random_matrix(5, 3, rng);
  const Vector x = testing_util::random_vector(3, rng);
  const Vector y = testing_util::random_vector(5, rng);
  const Vector wx = matvec(w, x);
  const Vector wty = matvec_transposed(w, y);
  EXPECT_NEAR(dot(y, wx), dot(wty, x), 1e-12);
  EXPECT_NEAR(bilinear(y, w, x), dot(y, wx), 1e-12);
}

TEST(PowerIteration, DiagonalMatrix) {
  const SpectralTriple t = power_iteration(Matrix{{3, 0}, {0, 1}});
  EXPECT_NEAR(t.sigma1, 3.0, 1e-12);
  EXPECT_TRUE(t.converged);
  EXPECT_NEAR(t.u1[0], 1.0, 1e-9);
  EXPECT_NEAR(t.v1[0], 1.0, 1e-9);
  EXPECT_NEAR(t.u1[1], 0.0, 1e-8);
}

TEST(PowerIteration, IdentityIsDegenerateButExact) {
  const SpectralTriple t = power_iteration(Matrix::identity(2));
  EXPECT_NEAR(t.sigma1, 1.0, 1e-12);
  EXPECT_LE(t.residual, 1e-8);
  EXPECT_NEAR(norm2(t.u1), 1.0, 1e-12);
}

TEST(PowerIteration, ZeroMatrixThrows) {
  try {
    power_iteration(Matrix(3, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kZeroMatrix);
  }
}

TEST(PowerIteration, Random5x4MatchesEigen) {
  std::mt19937_64 rng(11);
  const Matrix w = random_matrix(5, 4, rng);
  const SpectralTriple t = power_iteration(w);
  EXPECT_NEAR(t.sigma1 / oracle_sigma1(w), 1.0, 1e-8);
  EXPECT_NEAR(norm2(t.u1), 1.0, 1e-12);
  EXPECT_NEAR(norm2(t.v1), 1.0, 1e-12);
  EXPECT_TRUE(t.converged);
  EXPECT_LE(t.residual, 1e-8 * t.sigma1);
}

TEST(PowerIteration, AgreesWithEigenAcrossShapesWhenGapped) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<std::size_t> dim(1, 40);
  int checked = 0;
  while (checked < 60) {
    const Matrix w = random_matrix(dim(rng), dim(rng), rng);
    const Eigen::VectorXd s = eigen_singular_values(w);
    if (s.size() > 1 && s(0) / s(1) < 1.01) continue;
    const SpectralTriple t = power_iteration(w);
    EXPECT_NEAR(t.sigma1 / s(0), 1.0, 1e-8) << w.rows() << "x" << w.cols();
    ++checked;
  }
}

TEST(PowerIteration, ScaleEquivariance) {
  std::mt19937_64 rng(13);
  const Matrix w = random_matrix(7, 6, rng);
  const SpectralTriple a = power_iteration(w);
  for (double c : {-3.5, 0.25, 10.0}) {
    const SpectralTriple b = power_iteration(w * c);
    EXPECT_NEAR(b.sigma1, std::abs(c) * a.sigma1, 1e-10 * std::abs(c) * a.sigma1);
    // Canonical sign picks the same u for W and cW.
    for (std::size_t i = 0; i < a.u1.size(); ++i) EXPECT_NEAR(b.u1[i], a.u1[i], 1e-7);
  }
}

TEST(PowerIteration, DeterministicDefaultStart) {
  std::mt19937_64 rng(14);
  const Matrix w = random_matrix(9, 9, rng);
  const SpectralTriple a = power_iteration(w);
  const SpectralTriple b = power_iteration(w);
  EXPECT_EQ(a.u1, b.u1);
  EXPECT_EQ(a.iterations, b.iterations);
  EXPECT_EQ(default_init_vector(9), default_init_vector(9));
  EXPECT_NEAR(norm2(default_init_vector(9)), 1.0, 1e-15);
}

TEST(PowerIteration, ReportsNonConvergenceInsteadOfThrowing) {
  std::mt19937_64 rng(15);
  const Matrix w = random_matrix(20, 20, rng);
  PowerIterationOptions opts;
  opts.max_iters = 1;
  opts.tol = 1e-14;
  const SpectralTriple t = power_iteration(w, opts);
  EXPECT_FALSE(t.converged);
  EXPECT_GT(t.residual, 0.0);
}

TEST(CanonicalizeSign, Examples) {
  EXPECT_EQ(canonicalize_sign(Vector{0, -1}), (Vector{0, 1}));
  const Vector ref_neg{-1, 0};
  const Vector ref_pos{1, 0};
  EXPECT_EQ(canonicalize_sign(Vector{0.6, 0.8}, std::span<const double>(ref_neg)), (Vector{-0.6, -0.8}));
  EXPECT_EQ(canonicalize_sign(Vector{0.6, 0.8}, std::span<const double>(ref_pos)), (Vector{0.6, 0.8}));
  // Ties in magnitude go to the lowest index.
  EXPECT_EQ(canonicalize_sign(Vector{-0.5, 0.5}), (Vector{0.5, -0.5}));
}

TEST(CanonicalizeSign, Idempotent) {
  std::mt19937_64 rng(16);
  for (int i = 0; i < 100; ++i) {
    Vector u = testing_util::random_vector(6, rng);
    normalize(u);
    const Vector once = canonicalize_sign(u);
    EXPECT_EQ(canonicalize_sign(once), once);
    EXPECT_FALSE(needs_sign_flip(once));
  }
}

TEST(SvdOracle, Examples) {
  const auto d = svd_small_oracle(Matrix{{2, 0}, {0, 1}});
  ASSERT_EQ(d.size(), 2u);
  EXPECT_NEAR(d[0].sigma, 2.0, 1e-14);
  EXPECT_NEAR(d[1].sigma, 1.0, 1e-14);
  EXPECT_NEAR(std::abs(d[0].u[0]), 1.0, 1e-14);

  for (const auto& t : svd_small_oracle(Matrix(3, 3))) EXPECT_EQ(t.sigma, 0.0);

  const auto p = svd_small_oracle(Matrix{{0, 1}, {1, 0}});
  EXPECT_NEAR(p[0].sigma, 1.0, 1e-14);
  EXPECT_NEAR(p[1].sigma, 1.0, 1e-14);
}

TEST(SvdOracle, TooLargeThrows) {
  try {
    svd_small_oracle(Matrix(65, 70));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTooLarge);
  }
  EXPECT_NO_THROW(svd_small_oracle(Matrix{{1.0}}));
}

TEST(SvdOracle, MatchesEigenAndReconstructs) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> dim(1, 24);
  for (int trial = 0; trial < 40; ++trial) {
    const Matrix w = random_matrix(dim(rng), dim(rng), rng);
    const auto triples = svd_small_oracle(w);
    const Eigen::VectorXd s = eigen_singular_values(w);
    ASSERT_EQ(triples.size(), static_cast<std::size_t>(s.size()));
    Matrix rebuilt(w.rows(), w.cols());
    for (std::size_t k = 0; k < triples.size(); ++k) {
      EXPECT_NEAR(triples[k].sigma, s(k), 1e-10 * s(0));
      if (k > 0) EXPECT_GE(triples[k - 1].sigma, triples[k].sigma);
      rebuilt += Matrix::outer(triples[k].u, triples[k].v) * triples[k].sigma;
      for (std::size_t j = 0; j < triples.size(); ++j) {
        const double expect = j == k ? 1.0 : 0.0;
        EXPECT_NEAR(dot(triples[k].v, triples[j].v), expect, 1e-10);
        if (triples[k].sigma > 1e-12 && triples[j].sigma > 1e-12) {
          EXPECT_NEAR(dot(triples[k].u, triples[j].u), expect, 1e-10);
        }
      }
    }
    EXPECT_LE((w - rebuilt).frobenius_norm(), 1e-9 * w.frobenius_norm());
  }
}

TEST(StableRank, Examples) {
  const Matrix eye = Matrix::identity(5);
  EXPECT_NEAR(stable_rank(eye, power_iteration(eye)), 5.0, 1e-12);

  const Vector u{1, 2, 3};
  const Vector v{-1, 0.5};
  const Matrix r1 = Matrix::outer(u, v);
  EXPECT_NEAR(stable_rank(r1, power_iteration(r1)), 1.0, 1e-12);

  const Matrix d{{3, 0}, {0, 1}};
  EXPECT_NEAR(stable_rank(d, power_iteration(d)), 10.0 / 9.0, 1e-12);
}

TEST(StableRank, MatchesEigenAndIsScaleInvariant) {
  std::mt19937_64 rng(18);
  const Matrix w = random_matrix(10, 10, rng);
  const Eigen::VectorXd s = eigen_singular_values(w);
  const double oracle = s.squaredNorm() / (s(0) * s(0));
  const double sr = stable_rank(w, power_iteration(w));
  EXPECT_NEAR(sr, oracle, 1e-8 * oracle);
  const Matrix scaled = w * -7.0;
  EXPECT_NEAR(stable_rank(scaled, power_iteration(scaled)), sr, 1e-10);
  EXPECT_GE(sr, 1.0);
  EXPECT_LE(sr, 10.0);
}

TEST(StableRank, ZeroSigmaThrows) {
  SpectralTriple t;
  EXPECT_THROW(stable_rank(Matrix{{1.0}}, t), Error);
}

TEST(FirstOrderChange, Examples) {
  const Matrix a{{2, 0}, {0, 1}};
  EXPECT_NEAR(first_order_spectral_change(a, Matrix{{1, 0}, {0, 0}}, 0.01), 2.01, 1e-12);
  EXPECT_NEAR(first_order_spectral_change(a, Matrix{{0, 0}, {0, 1}}, 0.01), 2.0, 1e-12);
  EXPECT_THROW(first_order_spectral_change(Matrix(2, 2), a, 0.1), Error);
  EXPECT_THROW(first_order_spectral_change(a, Matrix(3, 2), 0.1), Error);
}

TEST(FirstOrderChange, ErrorShrinksQuadratically) {
  std::mt19937_64 rng(19);
  int checked = 0;
  while (checked < 10) {
    const Matrix a = random_matrix(4, 4, rng);
    const Eigen::VectorXd s = eigen_singular_values(a);
    if (s(0) / s(1) < 1.2) continue;
    const Matrix b = random_matrix(4, 4, rng);
    auto err = [&](double eta) { return std::abs(oracle_sigma1(a + b * eta) - first_order_spectral_change(a, b, eta)); };
    const double ratio = err(5e-3) / err(2.5e-3);
    EXPECT_GE(ratio, 3.5);
    EXPECT_LE(ratio, 4.5);
    ++checked;
  }
}
