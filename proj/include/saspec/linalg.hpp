#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <vector>

namespace saspec {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. Construction rejects non-finite
/// values; element access afterwards is unchecked so training code can
/// update weights in place.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> diag);
  static Matrix outer(std::span<const double> left, std::span<const double> right);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  Vector column(std::size_t c) const;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  Matrix transposed() const;
  double frobenius_norm() const;
  double max_abs() const;
  bool all_finite() const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);
Matrix matmul(const Matrix& a, const Matrix& b);

/// W x (x has length cols).
Vector matvec(const Matrix& w, std::span<const double> x);
/// Wᵀ x, equivalently the row vector xᵀ W (x has length rows).
Vector matvec_transposed(const Matrix& w, std::span<const double> x);
/// uᵀ W v.
double bilinear(std::span<const double> u, const Matrix& w, std::span<const double> v);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
/// Scales `a` to unit length in place and returns its former norm.
double normalize(std::span<double> a);

/// Top singular triple of a matrix as found by power iteration.
struct SpectralTriple {
  double sigma1 = 0.0;
  Vector u1;  // length rows
  Vector v1;  // length cols
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;  // ‖Wᵀu₁ − σ₁v₁‖₂
};

struct PowerIterationOptions {
  double tol = 1e-8;
  int max_iters = 1000;
  /// Starting left vector; defaults to a fixed pseudo-random unit vector.
  std::optional<Vector> init;
  /// When set, u₁ is oriented to have a nonnegative inner product with it.
  std::optional<Vector> sign_reference;
};

inline constexpr std::uint64_t kPowerIterationSeed = 0x5A;

/// Deterministic unit vector used as the default power-iteration start.
Vector default_init_vector(std::size_t n, std::uint64_t seed = kPowerIterationSeed);

/// Alternating power iteration v ← Wᵀu/‖·‖, u ← Wv/‖·‖. Stops once
/// ‖Wᵀu − σv‖₂ ≤ tol·σ. Running out of iterations is reported through
/// `converged`, not thrown.
SpectralTriple power_iteration(const Matrix& w, const PowerIterationOptions& opts = {});

/// Flips `u` so that it has a nonnegative inner product with `reference`,
/// or, without a reference, so that its largest-magnitude element (lowest
/// index on ties) is positive.
Vector canonicalize_sign(std::span<const double> u,
                         std::optional<std::span<const double>> reference = std::nullopt);

/// True when canonicalize_sign would flip `u`.
bool needs_sign_flip(std::span<const double> u,
                     std::optional<std::span<const double>> reference = std::nullopt);

struct SingularTriple {
  double sigma = 0.0;
  Vector u;
  Vector v;
};

inline constexpr std::size_t kOracleMaxDim = 64;

/// Thin SVD by one-sided cyclic Jacobi rotations, sorted by descending
/// singular value. Test oracle only: min(rows, cols) must not exceed
/// kOracleMaxDim.
std::vector<SingularTriple> svd_small_oracle(const Matrix& w);

/// ‖W‖_F² / σ₁².
double stable_rank(const Matrix& w, const SpectralTriple& spec);

/// First-order prediction of ‖A + ηB‖₂: σ₁(A) + η·u₁ᵀBv₁.
double first_order_spectral_change(const Matrix& a, const Matrix& b, double eta);

}  // namespace saspec
