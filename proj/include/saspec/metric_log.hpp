#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "saspec/sa_metric.hpp"

namespace saspec {

/// One row of the metric log: all monitored quantities of one layer at one
/// step.
struct MetricRecord {
  std::uint64_t step = 0;
  std::string layer;
  double sa_mean = 0.0;
  double sa_frac_positive = 0.0;
  double sa_frac_negative = 0.0;
  std::array<double, 5> sa_quantiles{};
  double weight_sigma1 = 0.0;
  std::optional<double> grad_sigma1;
  double stable_rank = 0.0;
  double max_activation = 0.0;
  double pathology_median = 0.0;
  VerdictStatus verdict = VerdictStatus::kHealthy;
  std::optional<double> loss;

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

MetricRecord make_metric_record(const LayerObservation& obs, std::string layer, VerdictStatus verdict,
                                std::optional<double> loss = std::nullopt);

/// One JSON object per line, fields in declaration order. Non-finite reals
/// are written as the strings "NaN", "Infinity", "-Infinity".
std::string format_metric_line(const MetricRecord& record);
MetricRecord parse_metric_line(std::string_view line, std::size_t line_number);

/// Appends one line and flushes.
void append_metric(const std::filesystem::path& path, const MetricRecord& record);

/// Reads every record. Blank lines are skipped; malformed rows raise
/// ParseError naming the line; a step lower than its predecessor raises
/// OrderViolation naming both steps.
std::vector<MetricRecord> read_metric_log(const std::filesystem::path& path);

/// Summary statistics of a record in the shape detect_collapse consumes.
SADistribution as_distribution(const MetricRecord& record);

}  // namespace saspec
