#include "saspec/train.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "saspec/error.hpp"

namespace saspec {

void TrainConfig::validate() const {
  if (!(eta > 0.0)) throw Error(ErrorCode::kInvalidConfig, "eta must be positive");
  if (batch_size == 0) throw Error(ErrorCode::kInvalidConfig, "batch_size must be positive");
  if (log_every == 0) throw Error(ErrorCode::kInvalidConfig, "log_every must be positive");
  if (!(init_scale > 0.0)) throw Error(ErrorCode::kInvalidConfig, "init_scale must be positive");
  if (!(explosion_factor > 1.0)) throw Error(ErrorCode::kInvalidConfig, "explosion_factor must exceed 1");
  collapse.validate();
}

std::string_view to_string(Scenario s) { return s == Scenario::kStable ? "stable" : "explosive"; }

Scenario scenario_from_string(std::string_view s) {
  if (s == "stable") return Scenario::kStable;
  if (s == "explosive") return Scenario::kExplosive;
  throw Error(ErrorCode::kInvalidConfig, "unknown scenario '" + std::string(s) + "'");
}

std::vector<std::size_t> scenario_dims() { return {64, 64, 8}; }

TrainConfig scenario_config(Scenario s, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.steps = 800;
  if (s == Scenario::kStable) {
    // A wider batch keeps the batch-mean SA from swinging with class mix.
    cfg.eta = 0.4;
    cfg.batch_size = 256;
  } else {
    cfg.eta = 1.5;
    cfg.batch_size = 64;
  }
  cfg.seed = seed;
  cfg.dataset.seed = seed;
  return cfg;
}

std::optional<std::uint64_t> TrainResult::earliest_onset() const {
  std::optional<std::uint64_t> best;
  for (const DiversityVerdict& v : verdicts) {
    if (v.status == VerdictStatus::kCollapsed && v.onset_step && (!best || *v.onset_step < *best)) {
      best = v.onset_step;
    }
  }
  return best;
}

TrainResult train_scenario(MLPState model, const TrainConfig& cfg, std::span<const std::size_t> monitors,
                           const CheckHook& hook) {
  model.validate();
  cfg.validate();
  if (cfg.dataset.dim != model.dims.front()) {
    throw Error(ErrorCode::kInvalidConfig, "dataset dim " + std::to_string(cfg.dataset.dim) +
                                               " != input width " + std::to_string(model.dims.front()));
  }
  if (cfg.dataset.n_classes != model.dims.back()) {
    throw Error(ErrorCode::kInvalidConfig, "dataset classes " + std::to_string(cfg.dataset.n_classes) +
                                               " != output width " + std::to_string(model.dims.back()));
  }
  for (std::size_t l : monitors) {
    if (l < 1 || l > model.num_layers()) {
      throw Error(ErrorCode::kInvalidConfig, "monitored layer " + std::to_string(l) + " does not exist");
    }
  }

  TrainResult result;
  if (cfg.steps == 0) {
    result.final_model = std::move(model);
    return result;
  }

  const Dataset data = make_dataset(cfg.dataset);
  const std::size_t L = model.num_layers();
  const std::size_t bs = cfg.batch_size;
  std::vector<LayerMonitor> monitor_state(monitors.size(), LayerMonitor({}, cfg.collapse.zero_band));
  std::vector<std::vector<SADistribution>> series(monitors.size());
  result.verdicts.resize(monitors.size());

  std::vector<Matrix> inputs;
  std::vector<Matrix> grads;
  for (std::uint64_t step = 0; step < cfg.steps; ++step) {
    inputs.assign(L, Matrix());
    for (std::size_t k = 0; k < L; ++k) inputs[k] = Matrix(bs, model.dims[k]);
    grads.assign(L, Matrix());
    for (std::size_t k = 0; k < L; ++k) grads[k] = Matrix(model.dims[k], model.dims[k + 1]);

    double loss = 0.0;
    const double inv = 1.0 / static_cast<double>(bs);
    for (std::size_t i = 0; i < bs; ++i) {
      const std::size_t idx = (step * bs + i) % data.x.rows();
      const ForwardTrace tr = forward(model, data.x.row(idx));
      const LossResult lr = softmax_cross_entropy(tr.logits(), data.labels[idx]);
      loss += lr.loss * inv;
      for (std::size_t k = 0; k < L; ++k) std::copy(tr.h[k].begin(), tr.h[k].end(), inputs[k].row(i).begin());
      const std::vector<Matrix> g = backward_exact(model, tr, lr.p, data.labels[idx]);
      for (std::size_t k = 0; k < L; ++k) grads[k] += g[k] * inv;
    }
    if (step == 0) result.initial_loss = loss;
    const bool exploded = !std::isfinite(loss) || loss > cfg.explosion_factor * result.initial_loss;

    if (step % cfg.log_every == 0 || exploded) {
      TrainLogRecord rec;
      rec.step = step;
      rec.loss = loss;
      try {
        for (std::size_t m = 0; m < monitors.size(); ++m) {
          const std::size_t l = monitors[m];
          const ActivationBatch batch{inputs[l - 1], step};
          LayerCheck check;
          check.layer = l;
          check.observation = monitor_state[m].observe(model.weights[l - 1], batch, &grads[l - 1]);
          series[m].push_back(check.observation.distribution);
          result.verdicts[m] = detect_collapse(series[m], cfg.collapse);
          check.verdict = result.verdicts[m].status;
          rec.layers.push_back(std::move(check));
        }
      } catch (const Error& e) {
        // Degenerate state; keep what was logged so far.
        if (exploded) result.explosion_step = step;
        result.stop_reason = e.what();
        break;
      }
      if (hook) hook(step, model, inputs, grads);
      result.log.push_back(std::move(rec));
    }
    if (exploded) {
      result.explosion_step = step;
      break;
    }
    for (std::size_t k = 0; k < L; ++k) model.weights[k] -= grads[k] * cfg.eta;
  }
  result.final_model = std::move(model);
  return result;
}

}  // namespace saspec
