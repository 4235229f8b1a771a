#include "saspec/analyze.hpp"

#include <algorithm>

#include "saspec/error.hpp"

namespace saspec {

namespace fs = std::filesystem;

std::vector<fs::path> discover_snapshots(std::span<const std::string> inputs) {
  std::vector<fs::path> files;
  for (const std::string& in : inputs) {
    const fs::path p(in);
    std::error_code ec;
    if (fs::is_directory(p, ec)) {
      std::vector<fs::path> found;
      for (const auto& entry : fs::directory_iterator(p)) {
        if (entry.is_regular_file() && entry.path().extension() == ".sasn") found.push_back(entry.path());
      }
      std::sort(found.begin(), found.end(),
                [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::exists(p, ec)) {
      files.push_back(p);
    } else {
      throw Error(ErrorCode::kIoError, "no such file or directory: " + in);
    }
  }
  return files;
}

SnapshotAnalyzer::SnapshotAnalyzer(AnalyzeOptions opts)
    : opts_(std::move(opts)), monitor_({}, opts_.collapse.zero_band) {
  opts_.collapse.validate();
  if (opts_.weight.empty() || opts_.input.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "weight and input tensor names are required");
  }
}

const NamedTensor& SnapshotAnalyzer::require(const Snapshot& snapshot, const std::string& name) const {
  const NamedTensor* t = snapshot.find(name);
  if (t == nullptr) throw Error(ErrorCode::kBadInput, "tensor '" + name + "' not found");
  return *t;
}

MetricRecord SnapshotAnalyzer::add(const Snapshot& snapshot) {
  if (last_step_ && snapshot.step <= *last_step_) {
    throw Error(ErrorCode::kOrderViolation, "step " + std::to_string(snapshot.step) + " does not follow step " +
                                                std::to_string(*last_step_));
  }
  const NamedTensor& wt = require(snapshot, opts_.weight);
  if (wt.dims.size() != 2) {
    throw Error(ErrorCode::kShapeMismatch, "tensor '" + opts_.weight + "' must be 2-D, has " +
                                               std::to_string(wt.dims.size()) + " dims");
  }
  const Matrix w = tensor_as_rows(wt);
  const Matrix rows = tensor_as_rows(require(snapshot, opts_.input));
  if (rows.cols() != w.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "tensor '" + opts_.input + "' has " + std::to_string(rows.cols()) +
                                               " features but '" + opts_.weight + "' has " +
                                               std::to_string(w.rows()) + " rows");
  }
  std::optional<Matrix> grad;
  if (opts_.grad) {
    grad = tensor_as_rows(require(snapshot, *opts_.grad));
    if (grad->rows() != w.rows() || grad->cols() != w.cols()) {
      throw Error(ErrorCode::kShapeMismatch, "tensor '" + *opts_.grad + "' does not match the shape of '" +
                                                 opts_.weight + "'");
    }
  }

  const ActivationBatch batch{rows, snapshot.step};
  const LayerObservation obs = monitor_.observe(w, batch, grad ? &*grad : nullptr);
  series_.push_back(obs.distribution);
  last_step_ = snapshot.step;
  return make_metric_record(obs, opts_.weight, detect_collapse(series_, opts_.collapse).status);
}

DiversityVerdict SnapshotAnalyzer::verdict() const {
  if (series_.empty()) throw Error(ErrorCode::kEmptySeries, "no snapshots analyzed");
  return detect_collapse(series_, opts_.collapse);
}

}  // namespace saspec
