#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "saspec/mlp.hpp"
#include "saspec/sa_metric.hpp"

namespace saspec {

struct TrainConfig {
  double eta = 0.4;
  std::size_t steps = 1000;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  double init_scale = 1.0;
  DatasetSpec dataset;
  std::size_t log_every = 5;
  double explosion_factor = 10.0;
  CollapseConfig collapse;

  void validate() const;
};

enum class Scenario { kStable, kExplosive };

std::string_view to_string(Scenario s);
Scenario scenario_from_string(std::string_view s);

/// Shipped defaults. Both scenarios share model, data and step budget; the
/// stable one trains with a smaller η on wider batches.
TrainConfig scenario_config(Scenario s, std::uint64_t seed);
std::vector<std::size_t> scenario_dims();

/// One monitored layer at one check. `layer` is 1-based.
struct LayerCheck {
  std::size_t layer = 1;
  LayerObservation observation;
  VerdictStatus verdict = VerdictStatus::kHealthy;
};

struct TrainLogRecord {
  std::uint64_t step = 0;
  double loss = 0.0;
  std::vector<LayerCheck> layers;
};

struct TrainResult {
  std::vector<TrainLogRecord> log;
  std::optional<std::uint64_t> explosion_step;
  double initial_loss = 0.0;
  std::vector<DiversityVerdict> verdicts;  // one per monitored layer, in monitor order
  MLPState final_model;
  std::optional<std::string> stop_reason;  // set when monitoring failed mid-run

  /// Earliest collapse onset across monitored layers.
  std::optional<std::uint64_t> earliest_onset() const;
};

/// Called at every check with the model, the batch inputs of each layer
/// (inputs[l-1] feeds W_l) and the batch-mean gradients.
using CheckHook = std::function<void(std::uint64_t step, const MLPState& model, const std::vector<Matrix>& inputs,
                                     const std::vector<Matrix>& grads)>;

/// Plain minibatch SGD on the Gaussian-cluster dataset. Every log_every steps
/// (and at the explosion step) the monitored layers are observed. Training
/// stops at the first step whose batch loss is non-finite or exceeds
/// explosion_factor × the step-0 loss.
TrainResult train_scenario(MLPState model, const TrainConfig& cfg, std::span<const std::size_t> monitors,
                           const CheckHook& hook = {});

}  // namespace saspec
