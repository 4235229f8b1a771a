#include "saspec/sa_metric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "saspec/error.hpp"

namespace saspec {

namespace {

// A vanishing gradient has spectral norm 0; that is a legitimate reading at
// convergence, not a ZeroMatrix failure.
double gradient_sigma1(const Matrix& w, const Matrix& grad, const PowerIterationOptions& opts) {
  if (grad.rows() != w.rows() || grad.cols() != w.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "gradient shape differs from weight shape");
  }
  if (grad.frobenius_norm() == 0.0) return 0.0;
  PowerIterationOptions plain;
  plain.tol = opts.tol;
  plain.max_iters = opts.max_iters;
  return power_iteration(grad, plain).sigma1;
}

}  // namespace

std::string_view to_string(VerdictStatus s) {
  switch (s) {
    case VerdictStatus::kHealthy: return "healthy";
    case VerdictStatus::kWarning: return "warning";
    case VerdictStatus::kCollapsed: return "collapsed";
  }
  return "healthy";
}

std::string_view to_string(Sign s) { return s == Sign::kPositive ? "positive" : "negative"; }

VerdictStatus verdict_status_from_string(std::string_view s) {
  if (s == "healthy") return VerdictStatus::kHealthy;
  if (s == "warning") return VerdictStatus::kWarning;
  if (s == "collapsed") return VerdictStatus::kCollapsed;
  throw Error(ErrorCode::kParseError, "unknown verdict status '" + std::string(s) + "'");
}

void CollapseConfig::validate() const {
  if (!(sign_frac_threshold > 0.5 && sign_frac_threshold <= 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "sign_frac_threshold must lie in (0.5, 1]");
  }
  if (!(mean_abs_threshold >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "mean_abs_threshold must be >= 0");
  if (!(zero_band >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "zero_band must be >= 0");
  if (consecutive_required < 1 || window < consecutive_required) {
    throw Error(ErrorCode::kInvalidConfig, "need window >= consecutive_required >= 1");
  }
}

double spectral_alignment(std::span<const double> h, std::span<const double> u1) {
  if (h.size() != u1.size()) {
    throw Error(ErrorCode::kShapeMismatch, "SA: input length " + std::to_string(h.size()) +
                                               " != u1 length " + std::to_string(u1.size()));
  }
  const double hn = norm2(h);
  if (hn == 0.0) throw Error(ErrorCode::kZeroInput, "SA of a zero input vector");
  const double sa = dot(h, u1) / hn;
  return std::clamp(sa, -1.0, 1.0);
}

double sorted_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

SADistribution sa_distribution(const ActivationBatch& batch, const SpectralTriple& spec, double zero_band) {
  if (batch.n_features() != spec.u1.size()) {
    throw Error(ErrorCode::kShapeMismatch, "batch has " + std::to_string(batch.n_features()) +
                                               " features but weight has " + std::to_string(spec.u1.size()) +
                                               " rows");
  }
  SADistribution d;
  d.step = batch.step;
  d.values.reserve(batch.n_samples());
  for (std::size_t i = 0; i < batch.n_samples(); ++i) {
    const auto h = batch.rows.row(i);
    if (norm2(h) == 0.0) {
      ++d.n_skipped;
      continue;
    }
    d.values.push_back(spectral_alignment(h, spec.u1));
  }
  if (d.values.empty()) throw Error(ErrorCode::kEmptyBatch, "every row of the activation batch is zero");

  const double n = static_cast<double>(d.values.size());
  double sum = 0.0;
  std::size_t pos = 0;
  std::size_t neg = 0;
  for (double v : d.values) {
    sum += v;
    if (v > zero_band) ++pos;
    else if (v < -zero_band) ++neg;
  }
  d.mean = sum / n;
  double ss = 0.0;
  for (double v : d.values) ss += (v - d.mean) * (v - d.mean);
  d.std = std::sqrt(ss / n);
  d.frac_positive = static_cast<double>(pos) / n;
  d.frac_negative = static_cast<double>(neg) / n;

  std::vector<double> sorted = d.values;
  std::sort(sorted.begin(), sorted.end());
  constexpr std::array<double, 5> kLevels{0.05, 0.25, 0.5, 0.75, 0.95};
  for (std::size_t i = 0; i < kLevels.size(); ++i) d.quantiles[i] = sorted_quantile(sorted, kLevels[i]);
  return d;
}

AlignmentDecomposition alignment_decomposition(std::span<const double> h, std::span<const double> u1) {
  if (h.size() != u1.size()) throw Error(ErrorCode::kShapeMismatch, "decomposition: length mismatch");
  const double hn = norm2(h);
  if (hn == 0.0) throw Error(ErrorCode::kZeroInput, "decomposition of a zero input vector");

  AlignmentDecomposition out;
  out.alpha = dot(u1, h) / (hn * hn);
  out.residual.resize(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) out.residual[i] = u1[i] - out.alpha * h[i];
  out.eps_norm = norm2(out.residual);
  const double proj = std::abs(out.alpha) * hn;
  out.pathology_ratio = proj == 0.0 ? std::numeric_limits<double>::infinity() : out.eps_norm / proj;
  return out;
}

double median_pathology_ratio(const ActivationBatch& batch, std::span<const double> u1) {
  std::vector<double> ratios;
  ratios.reserve(batch.n_samples());
  for (std::size_t i = 0; i < batch.n_samples(); ++i) {
    const auto h = batch.rows.row(i);
    if (norm2(h) == 0.0) continue;
    ratios.push_back(alignment_decomposition(h, u1).pathology_ratio);
  }
  if (ratios.empty()) throw Error(ErrorCode::kEmptyBatch, "every row of the activation batch is zero");
  std::sort(ratios.begin(), ratios.end());
  return sorted_quantile(ratios, 0.5);
}

BaselineMetrics baseline_metrics(const Matrix& w, const Matrix* grad, const ActivationBatch& batch,
                                 const PowerIterationOptions& opts) {
  if (batch.n_features() != w.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "batch width " + std::to_string(batch.n_features()) +
                                               " != weight rows " + std::to_string(w.rows()));
  }
  BaselineMetrics m;
  const SpectralTriple spec = power_iteration(w, opts);
  m.weight_sigma1 = spec.sigma1;
  m.stable_rank = stable_rank(w, spec);
  if (grad != nullptr) m.grad_sigma1 = gradient_sigma1(w, *grad, opts);
  m.max_activation = batch.rows.max_abs();
  return m;
}

DiversityVerdict detect_collapse(std::span<const SADistribution> series, const CollapseConfig& cfg) {
  cfg.validate();
  if (series.empty()) throw Error(ErrorCode::kEmptySeries, "collapse detection on an empty series");
  for (std::size_t i = 1; i < series.size(); ++i) {
    if (series[i].step < series[i - 1].step) {
      throw Error(ErrorCode::kOrderViolation, "series not sorted by step: " + std::to_string(series[i - 1].step) +
                                                  " then " + std::to_string(series[i].step));
    }
  }

  auto qualifies = [&](const SADistribution& d) {
    return std::max(d.frac_positive, d.frac_negative) >= cfg.sign_frac_threshold &&
           std::abs(d.mean) >= cfg.mean_abs_threshold;
  };
  auto sign_of = [](const SADistribution& d) {
    return d.frac_negative > d.frac_positive ? Sign::kNegative : Sign::kPositive;
  };

  // Earliest streak of qualifying checks long enough to count as collapse.
  std::size_t run = 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    run = qualifies(series[i]) ? run + 1 : 0;
    if (run >= cfg.consecutive_required) {
      const SADistribution& first = series[i + 1 - run];
      return {VerdictStatus::kCollapsed, first.step, sign_of(first)};
    }
  }

  const std::size_t begin = series.size() > cfg.window ? series.size() - cfg.window : 0;
  for (std::size_t i = begin; i < series.size(); ++i) {
    if (qualifies(series[i])) return {VerdictStatus::kWarning, series[i].step, sign_of(series[i])};
  }
  return {};
}

LayerObservation LayerMonitor::observe(const Matrix& w, const ActivationBatch& batch, const Matrix* grad) {
  PowerIterationOptions opts = opts_;
  if (previous_u1_ && previous_u1_->size() == w.rows()) {
    if (!opts.init) opts.init = previous_u1_;
    opts.sign_reference = previous_u1_;
  }
  LayerObservation obs;
  obs.spec = power_iteration(w, opts);
  obs.distribution = sa_distribution(batch, obs.spec, zero_band_);
  obs.baselines.weight_sigma1 = obs.spec.sigma1;
  obs.baselines.stable_rank = stable_rank(w, obs.spec);
  obs.baselines.max_activation = batch.rows.max_abs();
  if (grad != nullptr) obs.baselines.grad_sigma1 = gradient_sigma1(w, *grad, opts_);
  obs.pathology_median = median_pathology_ratio(batch, obs.spec.u1);
  previous_u1_ = obs.spec.u1;
  return obs;
}

}  // namespace saspec
