#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "saspec/error.hpp"
#include "saspec/linalg.hpp"

namespace saspec {

namespace {

// Column-major working copy so Jacobi rotations touch contiguous memory.
struct Columns {
  std::size_t len = 0;
  std::vector<Vector> cols;
};

void rotate(Vector& p, Vector& q, double c, double s) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = p[i];
    const double b = q[i];
    p[i] = c * a - s * b;
    q[i] = s * a + c * b;
  }
}

// One-sided Jacobi on a tall matrix (len >= count of columns). Each rotation
// zeroes one off-diagonal entry of the implicit Gram matrix AᵀA, so a full
// sweep is one cyclic Jacobi sweep on that Gram matrix.
void orthogonalize(Columns& a, Columns& v) {
  constexpr double eps = std::numeric_limits<double>::epsilon();
  constexpr int kMaxSweeps = 100;
  const std::size_t n = a.cols.size();
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = dot(a.cols[p], a.cols[p]);
        const double beta = dot(a.cols[q], a.cols[q]);
        const double gamma = dot(a.cols[p], a.cols[q]);
        if (gamma == 0.0 || std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
        const double c = 1.0 / std::hypot(1.0, t);
        const double s = c * t;
        rotate(a.cols[p], a.cols[q], c, s);
        rotate(v.cols[p], v.cols[q], c, s);
      }
    }
    if (!rotated) return;
  }
}

// Fills columns flagged in `missing` with an orthonormal completion of the
// others (Gram-Schmidt on standard basis vectors, two passes).
void complete_basis(std::vector<Vector>& basis, const std::vector<bool>& missing) {
  const std::size_t len = basis.empty() ? 0 : basis.front().size();
  std::size_t candidate = 0;
  for (std::size_t j = 0; j < basis.size(); ++j) {
    if (!missing[j]) continue;
    for (; candidate < len; ++candidate) {
      Vector e(len, 0.0);
      e[candidate] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < basis.size(); ++k) {
          if (k == j || (missing[k] && k > j)) continue;
          const double proj = dot(e, basis[k]);
          for (std::size_t i = 0; i < len; ++i) e[i] -= proj * basis[k][i];
        }
      }
      if (normalize(e) > 0.5) {
        basis[j] = std::move(e);
        ++candidate;
        break;
      }
    }
  }
}

}  // namespace

std::vector<SingularTriple> svd_small_oracle(const Matrix& w) {
  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  if (std::min(m, n) > kOracleMaxDim) {
    throw Error(ErrorCode::kTooLarge, "svd_small_oracle limited to min dimension " +
                                          std::to_string(kOracleMaxDim) + ", got " +
                                          std::to_string(std::min(m, n)));
  }
  if (m == 0 || n == 0) return {};

  // Work on whichever orientation is tall; swap u/v back at the end.
  const bool transpose = m < n;
  const Matrix a_mat = transpose ? w.transposed() : w;
  const std::size_t len = a_mat.rows();
  const std::size_t k = a_mat.cols();

  Columns a{len, {}};
  Columns v{k, {}};
  for (std::size_t j = 0; j < k; ++j) {
    a.cols.push_back(a_mat.column(j));
    Vector e(k, 0.0);
    e[j] = 1.0;
    v.cols.push_back(std::move(e));
  }
  orthogonalize(a, v);

  std::vector<double> sigma(k);
  for (std::size_t j = 0; j < k; ++j) sigma[j] = norm2(a.cols[j]);
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  const double sigma_max = sigma[order.front()];
  const double negligible = static_cast<double>(std::max(m, n)) * std::numeric_limits<double>::epsilon() * sigma_max;

  std::vector<Vector> left(k);
  std::vector<Vector> right(k);
  std::vector<double> sorted_sigma(k);
  std::vector<bool> missing(k, false);
  for (std::size_t idx = 0; idx < k; ++idx) {
    const std::size_t j = order[idx];
    right[idx] = v.cols[j];
    if (sigma[j] > negligible && sigma[j] > 0.0) {
      sorted_sigma[idx] = sigma[j];
      left[idx] = a.cols[j];
      for (double& x : left[idx]) x /= sigma[j];
    } else {
      sorted_sigma[idx] = 0.0;
      left[idx] = Vector(len, 0.0);
      missing[idx] = true;
    }
  }
  complete_basis(left, missing);

  std::vector<SingularTriple> out(k);
  for (std::size_t idx = 0; idx < k; ++idx) {
    SingularTriple t;
    t.sigma = sorted_sigma[idx];
    t.u = transpose ? std::move(right[idx]) : std::move(left[idx]);
    t.v = transpose ? std::move(left[idx]) : std::move(right[idx]);
    if (needs_sign_flip(t.u)) {
      for (double& x : t.u) x = -x;
      for (double& x : t.v) x = -x;
    }
    out[idx] = std::move(t);
  }
  return out;
}

}  // namespace saspec
