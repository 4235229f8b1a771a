#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "saspec/linalg.hpp"

namespace saspec {

/// Bias-free ReLU MLP: f⁽ˡ⁾ = h⁽ˡ⁻¹⁾W_l, h⁽ˡ⁾ = ReLU(f⁽ˡ⁾) for hidden layers
/// and linear logits at the output. weights[i] holds W_{i+1} with shape
/// dims[i] × dims[i+1].
struct MLPState {
  std::vector<std::size_t> dims;
  std::vector<Matrix> weights;

  std::size_t num_layers() const { return weights.size(); }
  void validate() const;
};

struct ForwardTrace {
  std::vector<Vector> h;                  // h⁽⁰⁾ … h⁽ᴸ⁾
  std::vector<Vector> f;                  // f⁽¹⁾ … f⁽ᴸ⁾ (f[i] is f⁽ⁱ⁺¹⁾)
  std::vector<std::vector<bool>> active;  // 1(f⁽ˡ⁾ > 0) for hidden layers l = 1 … L−1

  const Vector& logits() const { return h.back(); }
};

struct LossResult {
  double loss = 0.0;
  Vector p;
};

MLPState init_mlp(std::span<const std::size_t> dims, std::uint64_t seed, double init_scale);

ForwardTrace forward(const MLPState& model, std::span<const double> x);

/// Cross-entropy log Σ exp(z) − z_k with max-subtracted softmax.
LossResult softmax_cross_entropy(std::span<const double> logits, std::size_t target);

/// Per-layer gradients of the single-sample loss by reverse accumulation.
std::vector<Matrix> backward_exact(const MLPState& model, const ForwardTrace& trace, std::span<const double> p,
                                   std::size_t target);

/// One-hot target row.
Vector one_hot(std::size_t n, std::size_t k);

struct DatasetSpec {
  std::size_t n_classes = 8;
  std::size_t dim = 64;
  std::size_t n_samples = 16384;
  double cluster_spread = 2.0;
  /// Norm of a direction shared by every sample. Zero gives centred data.
  double offset_norm = 4.0;
  std::uint64_t seed = 7;
};

struct Dataset {
  Matrix x;
  std::vector<std::size_t> labels;
};

/// Gaussian clusters: unit-variance class centres (recentred to zero mean),
/// a shared offset of norm offset_norm, isotropic noise of std
/// cluster_spread, classes assigned round-robin then shuffled.
Dataset make_dataset(const DatasetSpec& spec);

}  // namespace saspec
