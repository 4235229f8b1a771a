#include "saspec/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "saspec/error.hpp"

namespace saspec {

namespace {

void check_finite(std::span<const double> data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw Error(ErrorCode::kNonFinite, "matrix element " + std::to_string(i) + " is not finite");
    }
  }
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::kShapeMismatch,
                std::string(what) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                    " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw Error(ErrorCode::kShapeMismatch, "matrix data length " + std::to_string(data_.size()) +
                                               " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
  }
  check_finite(data_);
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw Error(ErrorCode::kShapeMismatch, "ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
  check_finite(data_);
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> diag) {
  Matrix m(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  check_finite(diag);
  return m;
}

Matrix Matrix::outer(std::span<const double> left, std::span<const double> right) {
  Matrix m(left.size(), right.size());
  for (std::size_t i = 0; i < left.size(); ++i) {
    for (std::size_t j = 0; j < right.size(); ++j) m(i, j) = left[i] * right[j];
  }
  return m;
}

Vector Matrix::column(std::size_t c) const {
  Vector out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  }
  return t;
}

double Matrix::frobenius_norm() const { return norm2(data_); }

double Matrix::max_abs() const {
  double m = 0.0;
  for (double x : data_) m = std::max(m, std::abs(x));
  return m;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Matrix& Matrix::operator+=(const Matrix& other) {
  require_same_shape(*this, other, "matrix add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  require_same_shape(*this, other, "matrix subtract");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& x : data_) x *= s;
  return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "matmul inner dimensions " + std::to_string(a.cols()) +
                                               " vs " + std::to_string(b.rows()));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Vector matvec(const Matrix& w, std::span<const double> x) {
  if (x.size() != w.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "W x: vector length " + std::to_string(x.size()) +
                                               " != cols " + std::to_string(w.cols()));
  }
  Vector out(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) out[r] = dot(w.row(r), x);
  return out;
}

Vector matvec_transposed(const Matrix& w, std::span<const double> x) {
  if (x.size() != w.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "Wᵀ x: vector length " + std::to_string(x.size()) +
                                               " != rows " + std::to_string(w.rows()));
  }
  Vector out(w.cols(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    auto wrow = w.row(r);
    for (std::size_t c = 0; c < w.cols(); ++c) out[c] += xr * wrow[c];
  }
  return out;
}

double bilinear(std::span<const double> u, const Matrix& w, std::span<const double> v) {
  return dot(u, matvec(w, v));
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "dot: lengths " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) {
  // Scaled accumulation so exploding activations do not overflow the square.
  double scale = 0.0;
  double ssq = 1.0;
  for (double x : a) {
    if (x == 0.0) continue;
    const double ax = std::abs(x);
    if (scale < ax) {
      ssq = 1.0 + ssq * (scale / ax) * (scale / ax);
      scale = ax;
    } else {
      ssq += (ax / scale) * (ax / scale);
    }
  }
  return scale * std::sqrt(ssq);
}

double normalize(std::span<double> a) {
  const double n = norm2(a);
  if (n > 0.0) {
    for (double& x : a) x /= n;
  }
  return n;
}

Vector default_init_vector(std::size_t n, std::uint64_t seed) {
  // Raw 64-bit engine output mapped to [-1, 1) by hand: std::*_distribution
  // output differs between standard libraries.
  std::mt19937_64 engine(seed);
  Vector v(n);
  for (;;) {
    for (double& x : v) x = static_cast<double>(engine() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
    if (normalize(v) > 0.0) return v;
  }
}

bool needs_sign_flip(std::span<const double> u, std::optional<std::span<const double>> reference) {
  if (reference) return dot(u, *reference) < 0.0;
  std::size_t best = 0;
  double best_abs = -1.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (std::abs(u[i]) > best_abs) {
      best_abs = std::abs(u[i]);
      best = i;
    }
  }
  return !u.empty() && u[best] < 0.0;
}

Vector canonicalize_sign(std::span<const double> u, std::optional<std::span<const double>> reference) {
  Vector out(u.begin(), u.end());
  if (needs_sign_flip(u, reference)) {
    for (double& x : out) x = -x;
  }
  return out;
}

SpectralTriple power_iteration(const Matrix& w, const PowerIterationOptions& opts) {
  if (!(opts.tol > 0.0)) throw Error(ErrorCode::kInvalidConfig, "power iteration tol must be > 0");
  if (opts.max_iters < 1) throw Error(ErrorCode::kInvalidConfig, "power iteration max_iters must be >= 1");
  if (w.empty() || w.frobenius_norm() == 0.0) {
    throw Error(ErrorCode::kZeroMatrix, "power iteration on a zero matrix");
  }

  Vector u;
  if (opts.init) {
    if (opts.init->size() != w.rows()) {
      throw Error(ErrorCode::kShapeMismatch, "power iteration init has length " +
                                                 std::to_string(opts.init->size()) + ", expected " +
                                                 std::to_string(w.rows()));
    }
    u = *opts.init;
    if (normalize(u) == 0.0) u = default_init_vector(w.rows());
  } else {
    u = default_init_vector(w.rows());
  }

  Vector v = matvec_transposed(w, u);
  if (norm2(v) == 0.0) {
    // Start vector orthogonal to the column space; restart from the row of
    // largest norm, which is guaranteed to give Wᵀe_i ≠ 0.
    std::size_t best = 0;
    double best_norm = -1.0;
    for (std::size_t r = 0; r < w.rows(); ++r) {
      const double n = norm2(w.row(r));
      if (n > best_norm) {
        best_norm = n;
        best = r;
      }
    }
    std::fill(u.begin(), u.end(), 0.0);
    u[best] = 1.0;
    v = matvec_transposed(w, u);
  }

  SpectralTriple out;
  for (int it = 1; it <= opts.max_iters; ++it) {
    normalize(v);
    u = matvec(w, v);
    const double sigma = normalize(u);
    Vector wtu = matvec_transposed(w, u);
    double res2 = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double d = wtu[i] - sigma * v[i];
      res2 += d * d;
    }
    out.sigma1 = sigma;
    out.iterations = it;
    out.residual = std::sqrt(res2);
    if (out.residual <= opts.tol * sigma) {
      out.converged = true;
      break;
    }
    if (it < opts.max_iters) v = std::move(wtu);
  }

  std::optional<std::span<const double>> ref;
  if (opts.sign_reference) {
    if (opts.sign_reference->size() != w.rows()) {
      throw Error(ErrorCode::kShapeMismatch, "sign reference has wrong length");
    }
    ref = std::span<const double>(*opts.sign_reference);
  }
  if (needs_sign_flip(u, ref)) {
    for (double& x : u) x = -x;
    for (double& x : v) x = -x;
  }
  out.u1 = std::move(u);
  out.v1 = std::move(v);
  return out;
}

double stable_rank(const Matrix& w, const SpectralTriple& spec) {
  if (!(spec.sigma1 > 0.0)) throw Error(ErrorCode::kZeroMatrix, "stable rank with sigma1 = 0");
  const double ratio = w.frobenius_norm() / spec.sigma1;
  return ratio * ratio;
}

double first_order_spectral_change(const Matrix& a, const Matrix& b, double eta) {
  require_same_shape(a, b, "first_order_spectral_change");
  const SpectralTriple t = power_iteration(a);
  return t.sigma1 + eta * bilinear(t.u1, b, t.v1);
}

}  // namespace saspec
