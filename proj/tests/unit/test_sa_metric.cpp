#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "saspec/error.hpp"
#include "saspec/sa_metric.hpp"
#include "test_util.hpp"

using namespace saspec;
using testing_util::random_matrix;
using testing_util::random_vector;

namespace {

SpectralTriple triple_with_u(Vector u) {
  SpectralTriple t;
  t.sigma1 = 1.0;
  t.u1 = std::move(u);
  return t;
}

Vector unit(std::size_t n, std::size_t k) {
  Vector e(n, 0.0);
  e[k] = 1.0;
  return e;
}

Matrix rows_of(const std::vector<Vector>& rows) {
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  return m;
}

SADistribution summary(std::uint64_t step, double mean, double frac_pos, double frac_neg) {
  SADistribution d;
  d.step = step;
  d.mean = mean;
  d.frac_positive = frac_pos;
  d.frac_negative = frac_neg;
  return d;
}

}  // namespace

TEST(SpectralAlignment, Examples) {
  Vector u{0.6, 0.8};
  EXPECT_NEAR(spectral_alignment(Vector{3.0, 4.0}, u), 1.0, 1e-15);
  EXPECT_NEAR(spectral_alignment(Vector{-0.8, 0.6}, u), 0.0, 1e-15);
  EXPECT_NEAR(spectral_alignment(Vector{-1.2, -1.6}, u), -1.0, 1e-15);
  try {
    spectral_alignment(Vector{0.0, 0.0}, u);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kZeroInput);
  }
}

TEST(SpectralAlignment, ScaleAndRotationInvariance) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 30;
    Vector u = random_vector(n, rng);
    normalize(u);
    const Vector h = random_vector(n, rng);
    const double s = spectral_alignment(h, u);
    EXPECT_LE(std::abs(s), 1.0 + 1e-12);
    for (double c : {-2.5, 1e-3, 40.0}) {
      Vector ch = h;
      for (double& x : ch) x *= c;
      EXPECT_NEAR(spectral_alignment(ch, u), (c > 0 ? 1 : -1) * s, 1e-12);
    }
    // A random orthogonal Q from the Eigen QR of a Gaussian matrix.
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(
                                  testing_util::to_eigen(random_matrix(n, n, rng)))
                                  .householderQ();
    const Eigen::VectorXd qh = q * Eigen::Map<const Eigen::VectorXd>(h.data(), n);
    const Eigen::VectorXd qu = q * Eigen::Map<const Eigen::VectorXd>(u.data(), n);
    EXPECT_NEAR(spectral_alignment(Vector(qh.data(), qh.data() + n), Vector(qu.data(), qu.data() + n)), s, 1e-10);
    // SA = α·‖h‖.
    EXPECT_NEAR(s, alignment_decomposition(h, u).alpha * norm2(h), 1e-10);
  }
}

TEST(SaDistribution, Examples) {
  const Vector u{0.0, 1.0, 0.0};
  const SpectralTriple t = triple_with_u(u);
  const SADistribution d = sa_distribution({rows_of({u, u, u, u}), 4}, t);
  EXPECT_EQ(d.values, (std::vector<double>{1, 1, 1, 1}));
  EXPECT_EQ(d.mean, 1.0);
  EXPECT_EQ(d.frac_positive, 1.0);
  EXPECT_EQ(d.step, 4u);

  const SADistribution s = sa_distribution({rows_of({u, Vector{0, -1, 0}}), 0}, t);
  EXPECT_EQ(s.mean, 0.0);
  EXPECT_EQ(s.frac_positive, 0.5);
  EXPECT_EQ(s.frac_negative, 0.5);
}

TEST(SaDistribution, ZeroRowsSkippedAndCounted) {
  const SpectralTriple t = triple_with_u(unit(2, 0));
  const SADistribution d = sa_distribution({rows_of({{0, 0}, {1, 1}, {0, 0}}), 0}, t);
  EXPECT_EQ(d.n_skipped, 2u);
  EXPECT_EQ(d.values.size(), 1u);
  EXPECT_THROW(sa_distribution({rows_of({{0, 0}}), 0}, t), Error);
  EXPECT_THROW(sa_distribution({rows_of({{0, 0, 1}}), 0}, t), Error);
}

TEST(SaDistribution, ZeroBandCountsAsNeitherSign) {
  const SpectralTriple t = triple_with_u(unit(2, 0));
  const SADistribution d = sa_distribution({rows_of({{0, 1}, {1, 0}, {-1, 0}, {1e-12, 1}}), 0}, t);
  EXPECT_EQ(d.frac_positive, 0.25);
  EXPECT_EQ(d.frac_negative, 0.25);
  EXPECT_DOUBLE_EQ(d.frac_zero(), 0.5);
}

TEST(SaDistribution, IsotropicBatchIsBalanced) {
  // Cosine of a random direction with a fixed unit vector in 64 dims has
  // std 1/8; the mean of 256 draws has std 1/128, so 0.05 is over 6 sigma.
  // The positive count is Binomial(256, 1/2): 0.4..0.6 is over 3 sigma.
  std::mt19937_64 rng(22);
  Vector u = random_vector(64, rng);
  normalize(u);
  const SADistribution d = sa_distribution({random_matrix(256, 64, rng), 0}, triple_with_u(u));
  EXPECT_LE(std::abs(d.mean), 0.05);
  EXPECT_GE(d.frac_positive, 0.4);
  EXPECT_LE(d.frac_positive, 0.6);
}

TEST(SaDistribution, StatisticsRecomputableAndPermutationInvariant) {
  std::mt19937_64 rng(23);
  Vector u = random_vector(6, rng);
  normalize(u);
  const Matrix rows = random_matrix(37, 6, rng);
  const SADistribution d = sa_distribution({rows, 0}, triple_with_u(u));

  double mean = 0.0;
  for (double v : d.values) mean += v;
  mean /= static_cast<double>(d.values.size());
  double var = 0.0;
  for (double v : d.values) var += (v - mean) * (v - mean);
  EXPECT_NEAR(d.mean, mean, 1e-15);
  EXPECT_NEAR(d.std, std::sqrt(var / static_cast<double>(d.values.size())), 1e-15);
  std::vector<double> sorted = d.values;
  std::sort(sorted.begin(), sorted.end());
  // 37 values: q25 sits exactly on index 9, the median on 18.
  EXPECT_EQ(d.quantiles[1], sorted[9]);
  EXPECT_EQ(d.quantiles[2], sorted[18]);
  EXPECT_NEAR(d.frac_positive + d.frac_negative + d.frac_zero(), 1.0, 1e-15);

  Matrix reversed(rows.rows(), rows.cols());
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    std::copy(rows.row(i).begin(), rows.row(i).end(), reversed.row(rows.rows() - 1 - i).begin());
  }
  const SADistribution r = sa_distribution({reversed, 0}, triple_with_u(u));
  std::vector<double> a = d.values;
  std::vector<double> b = r.values;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  EXPECT_EQ(d.quantiles, r.quantiles);
  EXPECT_EQ(d.frac_positive, r.frac_positive);
  EXPECT_NEAR(d.mean, r.mean, 1e-15);
}

TEST(AlignmentDecomposition, Examples) {
  const Vector u{0.0, 1.0};
  const AlignmentDecomposition a = alignment_decomposition(u, u);
  EXPECT_NEAR(a.alpha, 1.0, 1e-15);
  EXPECT_NEAR(a.eps_norm, 0.0, 1e-15);
  EXPECT_NEAR(a.pathology_ratio, 0.0, 1e-15);

  const AlignmentDecomposition o = alignment_decomposition(Vector{2.0, 0.0}, u);
  EXPECT_EQ(o.alpha, 0.0);
  EXPECT_NEAR(o.eps_norm, 1.0, 1e-15);
  EXPECT_TRUE(std::isinf(o.pathology_ratio));
  EXPECT_THROW(alignment_decomposition(Vector{0.0, 0.0}, u), Error);
}

TEST(AlignmentDecomposition, ReconstructionOrthogonalityAndClosedForm) {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + trial % 128;
    Vector u = random_vector(n, rng);
    normalize(u);
    const Vector h = random_vector(n, rng);
    const AlignmentDecomposition a = alignment_decomposition(h, u);
    double recon = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = u[i] - a.alpha * h[i] - a.residual[i];
      recon += r * r;
    }
    EXPECT_LE(std::sqrt(recon), 1e-10);
    EXPECT_LE(std::abs(dot(a.residual, h)), 1e-10);
    const double s = spectral_alignment(h, u);
    if (std::abs(s) > 1e-6) EXPECT_NEAR(a.pathology_ratio, std::sqrt(1 - s * s) / std::abs(s), 1e-8 / std::abs(s));
  }
}

TEST(BaselineMetrics, HandComputedExample) {
  const Matrix w{{3, 0}, {0, 1}};
  const BaselineMetrics m = baseline_metrics(w, nullptr, {Matrix{{1, -4}}, 0});
  EXPECT_NEAR(m.weight_sigma1, 3.0, 1e-12);
  EXPECT_NEAR(m.stable_rank, 10.0 / 9.0, 1e-12);
  EXPECT_EQ(m.max_activation, 4.0);
  EXPECT_FALSE(m.grad_sigma1.has_value());

  const BaselineMetrics g = baseline_metrics(w, &w, {Matrix{{1, -4}}, 0});
  EXPECT_NEAR(*g.grad_sigma1, 3.0, 1e-12);
  const Matrix zero(2, 2);
  EXPECT_EQ(*baseline_metrics(w, &zero, {Matrix{{1, -4}}, 0}).grad_sigma1, 0.0);
  EXPECT_THROW(baseline_metrics(w, nullptr, {Matrix{{1, 2, 3}}, 0}), Error);
}

TEST(DetectCollapse, BalancedSeriesIsHealthy) {
  std::vector<SADistribution> s;
  for (std::uint64_t i = 0; i < 20; ++i) s.push_back(summary(i, (i % 2 ? 0.02 : -0.02), 0.5, 0.5));
  const DiversityVerdict v = detect_collapse(s);
  EXPECT_EQ(v.status, VerdictStatus::kHealthy);
  EXPECT_FALSE(v.onset_step);
  EXPECT_FALSE(v.dominant_sign);
}

TEST(DetectCollapse, InjectedStreakCollapses) {
  std::vector<SADistribution> s;
  for (std::uint64_t i = 0; i < 10; ++i) s.push_back(summary(i * 5, 0.0, 0.5, 0.5));
  for (std::uint64_t i = 10; i < 15; ++i) s.push_back(summary(i * 5, -0.3, 0.03, 0.97));
  const DiversityVerdict v = detect_collapse(s);
  EXPECT_EQ(v.status, VerdictStatus::kCollapsed);
  EXPECT_EQ(*v.onset_step, 50u);
  EXPECT_EQ(*v.dominant_sign, Sign::kNegative);
}

TEST(DetectCollapse, ShortStreakWarnsOnlyInsideWindow) {
  std::vector<SADistribution> s;
  for (std::uint64_t i = 0; i < 10; ++i) s.push_back(summary(i, 0.0, 0.5, 0.5));
  s.push_back(summary(10, 0.4, 0.95, 0.05));
  s.push_back(summary(11, 0.4, 0.95, 0.05));
  DiversityVerdict v = detect_collapse(s);
  EXPECT_EQ(v.status, VerdictStatus::kWarning);
  EXPECT_EQ(*v.onset_step, 10u);
  EXPECT_EQ(*v.dominant_sign, Sign::kPositive);

  for (std::uint64_t i = 12; i < 22; ++i) s.push_back(summary(i, 0.0, 0.5, 0.5));
  EXPECT_EQ(detect_collapse(s).status, VerdictStatus::kHealthy);
}

TEST(DetectCollapse, BothConditionsRequired) {
  std::vector<SADistribution> concentrated_small_mean;
  std::vector<SADistribution> large_mean_mixed;
  for (std::uint64_t i = 0; i < 5; ++i) {
    concentrated_small_mean.push_back(summary(i, -0.1, 0.0, 1.0));
    large_mean_mixed.push_back(summary(i, -0.3, 0.2, 0.8));
  }
  EXPECT_EQ(detect_collapse(concentrated_small_mean).status, VerdictStatus::kHealthy);
  EXPECT_EQ(detect_collapse(large_mean_mixed).status, VerdictStatus::kHealthy);
}

TEST(DetectCollapse, LongerStreakNeverDowngrades) {
  std::vector<SADistribution> s;
  for (std::uint64_t i = 0; i < 6; ++i) s.push_back(summary(i, 0.0, 0.5, 0.5));
  VerdictStatus prev = VerdictStatus::kHealthy;
  for (std::uint64_t i = 6; i < 12; ++i) {
    s.push_back(summary(i, 0.3, 0.95, 0.05));
    const VerdictStatus now = detect_collapse(s).status;
    EXPECT_GE(static_cast<int>(now), static_cast<int>(prev));
    prev = now;
  }
  EXPECT_EQ(prev, VerdictStatus::kCollapsed);
}

TEST(DetectCollapse, Errors) {
  EXPECT_THROW(detect_collapse(std::vector<SADistribution>{}), Error);
  std::vector<SADistribution> unordered{summary(5, 0, 0.5, 0.5), summary(3, 0, 0.5, 0.5)};
  EXPECT_THROW(detect_collapse(unordered), Error);
  CollapseConfig bad;
  bad.window = 2;
  bad.consecutive_required = 3;
  EXPECT_THROW(detect_collapse(std::vector<SADistribution>{summary(0, 0, 0.5, 0.5)}, bad), Error);
  bad = {};
  bad.sign_frac_threshold = 0.5;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(LayerMonitor, KeepsSignAcrossSteps) {
  std::mt19937_64 rng(25);
  Matrix w = random_matrix(8, 5, rng);
  const Matrix batch = random_matrix(32, 8, rng);
  LayerMonitor monitor;
  const LayerObservation first = monitor.observe(w, {batch, 0});
  // Negating W flips u1 in a fresh run, but the monitor keeps the old sign.
  const LayerObservation second = monitor.observe(w * -1.0, {batch, 1});
  EXPECT_GE(dot(first.spec.u1, second.spec.u1), 0.0);
  EXPECT_NEAR(second.distribution.mean, first.distribution.mean, 1e-9);
  const SpectralTriple fresh = power_iteration(w * -1.0);
  EXPECT_NEAR(std::abs(dot(fresh.u1, second.spec.u1)), 1.0, 1e-9);
}

TEST(LayerMonitor, FillsBaselines) {
  std::mt19937_64 rng(26);
  const Matrix w = random_matrix(6, 4, rng);
  const Matrix g = random_matrix(6, 4, rng);
  const Matrix batch = random_matrix(10, 6, rng);
  LayerMonitor monitor;
  const LayerObservation obs = monitor.observe(w, {batch, 3}, &g);
  EXPECT_NEAR(obs.baselines.weight_sigma1, testing_util::eigen_singular_values(w)(0), 1e-8);
  EXPECT_NEAR(*obs.baselines.grad_sigma1, testing_util::eigen_singular_values(g)(0), 1e-8);
  EXPECT_EQ(obs.baselines.max_activation, batch.max_abs());
  EXPECT_EQ(obs.distribution.step, 3u);
  EXPECT_EQ(obs.pathology_median, median_pathology_ratio({batch, 3}, obs.spec.u1));
}
