#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "saspec/linalg.hpp"

namespace saspec {

/// One batch of layer inputs, one sample per row. n_features must match the
/// row count of the weight matrix the batch feeds.
struct ActivationBatch {
  Matrix rows;
  std::uint64_t step = 0;

  std::size_t n_samples() const { return rows.rows(); }
  std::size_t n_features() const { return rows.cols(); }
};

inline constexpr double kDefaultZeroBand = 1e-9;

struct SADistribution {
  std::uint64_t step = 0;
  std::vector<double> values;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  double frac_positive = 0.0;
  double frac_negative = 0.0;
  std::size_t n_skipped = 0;
  std::array<double, 5> quantiles{};  // q05, q25, q50, q75, q95

  double frac_zero() const { return 1.0 - frac_positive - frac_negative; }
};

/// Decomposition u₁ = αh + ε with ε ⟂ h.
struct AlignmentDecomposition {
  double alpha = 0.0;
  double eps_norm = 0.0;
  double pathology_ratio = 0.0;  // ‖ε‖ / (|α|·‖h‖); +inf when α = 0
  Vector residual;               // ε
};

struct CollapseConfig {
  double sign_frac_threshold = 0.9;
  double mean_abs_threshold = 0.15;
  std::size_t window = 10;
  std::size_t consecutive_required = 3;
  double zero_band = kDefaultZeroBand;

  void validate() const;
};

enum class VerdictStatus { kHealthy, kWarning, kCollapsed };
enum class Sign { kPositive, kNegative };

std::string_view to_string(VerdictStatus s);
std::string_view to_string(Sign s);
VerdictStatus verdict_status_from_string(std::string_view s);

struct DiversityVerdict {
  VerdictStatus status = VerdictStatus::kHealthy;
  std::optional<std::uint64_t> onset_step;
  std::optional<Sign> dominant_sign;
};

struct BaselineMetrics {
  double weight_sigma1 = 0.0;
  std::optional<double> grad_sigma1;
  double stable_rank = 0.0;
  double max_activation = 0.0;
};

/// Cosine between h and the unit vector u1. Throws ZeroInput when ‖h‖ = 0.
double spectral_alignment(std::span<const double> h, std::span<const double> u1);

/// Per-row SA values and summary statistics. Zero rows are skipped and
/// counted; |SA| ≤ zero_band counts as neither sign.
SADistribution sa_distribution(const ActivationBatch& batch, const SpectralTriple& spec,
                               double zero_band = kDefaultZeroBand);

AlignmentDecomposition alignment_decomposition(std::span<const double> h, std::span<const double> u1);

/// Median pathology ratio over the nonzero rows of a batch.
double median_pathology_ratio(const ActivationBatch& batch, std::span<const double> u1);

BaselineMetrics baseline_metrics(const Matrix& w, const Matrix* grad, const ActivationBatch& batch,
                                 const PowerIterationOptions& opts = {});

/// Classifies a step-ordered series of distributions; see CollapseConfig.
DiversityVerdict detect_collapse(std::span<const SADistribution> series, const CollapseConfig& cfg = {});

/// Linear-interpolation quantile of sorted data (q in [0, 1]).
double sorted_quantile(std::span<const double> sorted, double q);

/// Everything recorded for one layer at one monitoring check.
struct LayerObservation {
  SpectralTriple spec;
  SADistribution distribution;
  BaselineMetrics baselines;
  double pathology_median = 0.0;
};

/// Stateful per-layer monitor. Carries the previous u₁ forward so the sign
/// of SA stays comparable across steps, and warm-starts power iteration
/// from it.
class LayerMonitor {
 public:
  explicit LayerMonitor(PowerIterationOptions opts = {}, double zero_band = kDefaultZeroBand)
      : opts_(std::move(opts)), zero_band_(zero_band) {}

  LayerObservation observe(const Matrix& w, const ActivationBatch& batch, const Matrix* grad = nullptr);

  const std::optional<Vector>& previous_u1() const { return previous_u1_; }
  void set_previous_u1(std::optional<Vector> u1) { previous_u1_ = std::move(u1); }

 private:
  PowerIterationOptions opts_;
  double zero_band_;
  std::optional<Vector> previous_u1_;
};

}  // namespace saspec
