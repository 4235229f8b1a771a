#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "saspec/metric_log.hpp"
#include "saspec/sa_metric.hpp"
#include "saspec/snapshot.hpp"

namespace saspec {

struct AnalyzeOptions {
  std::string weight;
  std::string input;
  std::optional<std::string> grad;
  CollapseConfig collapse;
  bool strict_finite = true;
};

/// Expands directories to their *.sasn files in lexicographic filename order;
/// plain paths are kept in the order given.
std::vector<std::filesystem::path> discover_snapshots(std::span<const std::string> inputs);

/// Offline analysis of one layer across a sequence of snapshots. Keeps the
/// previous u1 so that feeding two series back to back through the same
/// analyzer is the same as feeding their concatenation.
class SnapshotAnalyzer {
 public:
  explicit SnapshotAnalyzer(AnalyzeOptions opts);

  /// Observes one snapshot and returns its metric record. Steps must strictly
  /// increase. Errors name the offending tensor.
  MetricRecord add(const Snapshot& snapshot);

  DiversityVerdict verdict() const;
  const std::vector<SADistribution>& series() const { return series_; }
  const AnalyzeOptions& options() const { return opts_; }

 private:
  const NamedTensor& require(const Snapshot& snapshot, const std::string& name) const;

  AnalyzeOptions opts_;
  LayerMonitor monitor_;
  std::vector<SADistribution> series_;
  std::optional<std::uint64_t> last_step_;
};

}  // namespace saspec
