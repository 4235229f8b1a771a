#include "saspec/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "saspec/error.hpp"

namespace saspec {

void MLPState::validate() const {
  if (dims.size() < 3) throw Error(ErrorCode::kBadDims, "need at least one hidden layer (>= 3 dims)");
  for (std::size_t d : dims) {
    if (d == 0) throw Error(ErrorCode::kBadDims, "layer widths must be positive");
  }
  if (weights.size() + 1 != dims.size()) throw Error(ErrorCode::kBadDims, "weight count does not match dims");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i].rows() != dims[i] || weights[i].cols() != dims[i + 1]) {
      throw Error(ErrorCode::kBadDims, "W" + std::to_string(i + 1) + " has shape " +
                                           std::to_string(weights[i].rows()) + "x" +
                                           std::to_string(weights[i].cols()) + ", expected " +
                                           std::to_string(dims[i]) + "x" + std::to_string(dims[i + 1]));
    }
  }
}

MLPState init_mlp(std::span<const std::size_t> dims, std::uint64_t seed, double init_scale) {
  if (!(init_scale >= 0.0)) throw Error(ErrorCode::kBadDims, "init_scale must be >= 0");
  MLPState m;
  m.dims.assign(dims.begin(), dims.end());
  if (m.dims.size() < 3 || std::find(m.dims.begin(), m.dims.end(), 0) != m.dims.end()) {
    throw Error(ErrorCode::kBadDims, "dims need >= 3 positive entries");
  }
  std::mt19937_64 engine(seed);
  for (std::size_t i = 0; i + 1 < m.dims.size(); ++i) {
    Matrix w(m.dims[i], m.dims[i + 1]);
    const double std_dev = init_scale / std::sqrt(static_cast<double>(m.dims[i]));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& x : w.data()) x = std_dev * normal(engine);
    m.weights.push_back(std::move(w));
  }
  return m;
}

ForwardTrace forward(const MLPState& model, std::span<const double> x) {
  if (model.weights.empty() || x.size() != model.weights.front().rows()) {
    throw Error(ErrorCode::kShapeMismatch, "input length " + std::to_string(x.size()) + " does not match n0");
  }
  const std::size_t L = model.num_layers();
  ForwardTrace t;
  t.h.reserve(L + 1);
  t.f.reserve(L);
  t.h.emplace_back(x.begin(), x.end());
  for (std::size_t i = 0; i < L; ++i) {
    Vector f = matvec_transposed(model.weights[i], t.h.back());
    if (i + 1 < L) {
      Vector h(f.size());
      std::vector<bool> mask(f.size());
      for (std::size_t j = 0; j < f.size(); ++j) {
        mask[j] = f[j] > 0.0;
        h[j] = mask[j] ? f[j] : 0.0;
      }
      t.active.push_back(std::move(mask));
      t.h.push_back(std::move(h));
    } else {
      t.h.push_back(f);
    }
    t.f.push_back(std::move(f));
  }
  return t;
}

LossResult softmax_cross_entropy(std::span<const double> logits, std::size_t target) {
  if (target >= logits.size()) {
    throw Error(ErrorCode::kBadTarget, "target " + std::to_string(target) + " out of range for " +
                                           std::to_string(logits.size()) + " classes");
  }
  const double zmax = *std::max_element(logits.begin(), logits.end());
  LossResult r;
  r.p.resize(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    r.p[i] = std::exp(logits[i] - zmax);
    sum += r.p[i];
  }
  for (double& p : r.p) p /= sum;
  r.loss = zmax + std::log(sum) - logits[target];
  return r;
}

Vector one_hot(std::size_t n, std::size_t k) {
  if (k >= n) throw Error(ErrorCode::kBadTarget, "one-hot index out of range");
  Vector t(n, 0.0);
  t[k] = 1.0;
  return t;
}

std::vector<Matrix> backward_exact(const MLPState& model, const ForwardTrace& trace, std::span<const double> p,
                                   std::size_t target) {
  const std::size_t L = model.num_layers();
  if (trace.h.size() != L + 1 || trace.f.size() != L || trace.active.size() + 1 != L) {
    throw Error(ErrorCode::kTraceMismatch, "trace depth does not match the model");
  }
  for (std::size_t i = 0; i < L; ++i) {
    if (trace.h[i].size() != model.dims[i] || trace.f[i].size() != model.dims[i + 1]) {
      throw Error(ErrorCode::kTraceMismatch, "trace widths do not match the model at layer " + std::to_string(i + 1));
    }
  }
  if (p.size() != model.dims.back()) throw Error(ErrorCode::kTraceMismatch, "probability vector has wrong length");
  if (target >= p.size()) throw Error(ErrorCode::kBadTarget, "target out of range");

  // delta holds ∂L/∂f⁽ˡ⁾; the output layer is linear so it starts at p − t.
  Vector delta(p.begin(), p.end());
  delta[target] -= 1.0;
  std::vector<Matrix> grads(L);
  for (std::size_t i = L; i-- > 0;) {
    grads[i] = Matrix::outer(trace.h[i], delta);
    if (i == 0) break;
    Vector back = matvec(model.weights[i], delta);
    const auto& mask = trace.active[i - 1];
    for (std::size_t j = 0; j < back.size(); ++j) {
      if (!mask[j]) back[j] = 0.0;
    }
    delta = std::move(back);
  }
  return grads;
}

Dataset make_dataset(const DatasetSpec& spec) {
  if (spec.n_classes < 2) throw Error(ErrorCode::kInvalidConfig, "dataset needs at least 2 classes");
  if (spec.dim == 0 || spec.n_samples == 0) throw Error(ErrorCode::kInvalidConfig, "dataset dim and size must be positive");
  if (!(spec.cluster_spread > 0.0)) throw Error(ErrorCode::kInvalidConfig, "cluster_spread must be positive");
  if (!(spec.offset_norm >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "offset_norm must be >= 0");

  std::mt19937_64 engine(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Matrix centers(spec.n_classes, spec.dim);
  for (double& x : centers.data()) x = normal(engine);
  for (std::size_t c = 0; c < spec.dim; ++c) {
    double mean = 0.0;
    for (std::size_t k = 0; k < spec.n_classes; ++k) mean += centers(k, c);
    mean /= static_cast<double>(spec.n_classes);
    for (std::size_t k = 0; k < spec.n_classes; ++k) centers(k, c) -= mean;
  }

  Vector offset(spec.dim);
  for (double& x : offset) x = normal(engine);
  normalize(offset);
  for (double& x : offset) x *= spec.offset_norm;

  Dataset d;
  d.labels.resize(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) d.labels[i] = i % spec.n_classes;
  std::shuffle(d.labels.begin(), d.labels.end(), engine);

  d.x = Matrix(spec.n_samples, spec.dim);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    auto row = d.x.row(i);
    const auto center = centers.row(d.labels[i]);
    for (std::size_t c = 0; c < spec.dim; ++c) row[c] = center[c] + offset[c] + spec.cluster_spread * normal(engine);
  }
  return d;
}

}  // namespace saspec
