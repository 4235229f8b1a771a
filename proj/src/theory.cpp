#include "saspec/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "saspec/error.hpp"
#include "saspec/sa_metric.hpp"

namespace saspec {

namespace {

void require_layer(const MLPState& model, std::size_t layer, bool allow_last) {
  const std::size_t L = model.num_layers();
  if (layer < 1 || layer > L || (!allow_last && layer == L)) {
    throw Error(ErrorCode::kBadInput, "layer index " + std::to_string(layer) + " out of range for " +
                                          std::to_string(L) + " layers");
  }
}

void require_trace(const MLPState& model, const ForwardTrace& trace, std::span<const double> p,
                   std::size_t target) {
  const std::size_t L = model.num_layers();
  if (trace.h.size() != L + 1 || trace.f.size() != L || trace.active.size() + 1 != L) {
    throw Error(ErrorCode::kShapeMismatch, "trace depth does not match the model");
  }
  if (p.size() != model.dims.back()) throw Error(ErrorCode::kShapeMismatch, "probability vector has wrong length");
  if (target >= p.size()) throw Error(ErrorCode::kBadTarget, "target out of range");
}

Vector residual_row(std::span<const double> p, std::size_t target) {
  Vector r(p.begin(), p.end());
  r[target] -= 1.0;
  return r;
}

double sigma1_oracle(const Matrix& w) { return svd_small_oracle(w).front().sigma; }

// Batch-mean gradient of every layer plus per-sample traces and softmax outputs.
struct BatchPass {
  std::vector<ForwardTrace> traces;
  std::vector<LossResult> losses;
  std::vector<Matrix> grads;
};

BatchPass batch_pass(const MLPState& model, const Matrix& inputs, std::size_t target) {
  BatchPass out;
  const double inv = 1.0 / static_cast<double>(inputs.rows());
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    ForwardTrace t = forward(model, inputs.row(i));
    LossResult r = softmax_cross_entropy(t.logits(), target);
    std::vector<Matrix> g = backward_exact(model, t, r.p, target);
    if (out.grads.empty()) {
      for (auto& m : g) out.grads.emplace_back(m.rows(), m.cols());
    }
    for (std::size_t k = 0; k < g.size(); ++k) out.grads[k] += g[k] * inv;
    out.traces.push_back(std::move(t));
    out.losses.push_back(std::move(r));
  }
  return out;
}

double max_logit_deviation(const BatchPass& pass, std::size_t target) {
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pass.traces.size(); ++i) {
    worst = std::max(worst, logit_deviation(pass.losses[i].p, target, pass.traces[i].logits()).dot_form);
  }
  return worst;
}

Vector random_unit(std::size_t n, std::mt19937_64& engine) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(n);
  do {
    for (double& x : v) x = normal(engine);
  } while (normalize(v) == 0.0);
  return v;
}

}  // namespace

MeanFieldEstimate estimate_rho(std::span<const ForwardTrace> traces, std::size_t layer) {
  if (traces.empty()) throw Error(ErrorCode::kEmptyTraces, "estimate_rho needs at least one trace");
  const std::size_t hidden = traces.front().active.size();
  if (layer < 1 || layer > hidden) {
    throw Error(ErrorCode::kBadInput, "estimate_rho: layer " + std::to_string(layer) + " is not a hidden layer");
  }
  MeanFieldEstimate est;
  for (std::size_t k = layer; k <= hidden; ++k) {
    std::size_t on = 0;
    std::size_t total = 0;
    for (const ForwardTrace& t : traces) {
      if (t.active.size() != hidden) throw Error(ErrorCode::kShapeMismatch, "traces differ in depth");
      const auto& mask = t.active[k - 1];
      on += static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
      total += mask.size();
    }
    est.per_layer_active_fractions.push_back(static_cast<double>(on) / static_cast<double>(total));
  }
  for (double frac : est.per_layer_active_fractions) est.rho *= frac;
  return est;
}

Matrix approx_gradient(const MLPState& model, const ForwardTrace& trace, std::span<const double> p,
                       std::size_t target, double rho, std::size_t layer) {
  require_layer(model, layer, false);
  require_trace(model, trace, p, target);
  if (!(rho >= 0.0 && rho <= 1.0)) throw Error(ErrorCode::kBadInput, "rho must lie in [0, 1]");

  Vector row = residual_row(p, target);
  for (std::size_t k = model.num_layers(); k > layer; --k) row = matvec(model.weights[k - 1], row);
  const auto& mask = trace.active[layer - 1];
  for (std::size_t j = 0; j < row.size(); ++j) row[j] = mask[j] ? rho * row[j] : 0.0;
  return Matrix::outer(trace.h[layer - 1], row);
}

Matrix product_formula_gradient(const MLPState& model, const ForwardTrace& trace, std::span<const double> p,
                                std::size_t target, std::size_t layer) {
  require_layer(model, layer, true);
  require_trace(model, trace, p, target);

  const std::size_t L = model.num_layers();
  auto mask_matrix = [&](std::size_t k) {
    Vector d(trace.active[k - 1].size());
    for (std::size_t j = 0; j < d.size(); ++j) d[j] = trace.active[k - 1][j] ? 1.0 : 0.0;
    return Matrix::diagonal(d);
  };

  Matrix chain = Matrix::identity(model.dims[L]);
  for (std::size_t k = L; k > layer; --k) {
    chain = matmul(chain, model.weights[k - 1].transposed());
    chain = matmul(chain, mask_matrix(k - 1));
  }
  const Vector r = residual_row(p, target);
  const Matrix r_row(1, r.size(), r);
  const Matrix h_col(trace.h[layer - 1].size(), 1, trace.h[layer - 1]);
  return matmul(h_col, matmul(r_row, chain));
}

LogitDeviation logit_deviation(std::span<const double> p, std::size_t target, std::span<const double> z) {
  if (p.size() != z.size() || p.empty()) throw Error(ErrorCode::kBadInput, "p and z lengths differ");
  if (target >= p.size()) throw Error(ErrorCode::kBadInput, "target " + std::to_string(target) + " out of range");
  double total = 0.0;
  for (double x : p) {
    if (!(x >= 0.0 && x <= 1.0)) throw Error(ErrorCode::kBadInput, "p has an entry outside [0, 1]");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorCode::kBadInput, "p does not sum to 1");

  LogitDeviation out;
  const Vector r = residual_row(p, target);
  out.dot_form = dot(r, z);
  out.expectation_form = dot(p, z) - z[target];
  double scale = 1.0;
  for (double x : z) scale = std::max(scale, std::abs(x));
  if (std::abs(out.dot_form - out.expectation_form) > 1e-10 * scale) {
    throw Error(ErrorCode::kBadInput, "logit deviation forms disagree");
  }
  return out;
}

double predict_delta_specnorm(const Matrix& w, std::span<const double> h, std::span<const double> f, double eta,
                              double rho, std::span<const double> p, std::span<const double> t,
                              std::span<const double> h_last) {
  if (h.size() != w.rows() || f.size() != w.cols()) throw Error(ErrorCode::kShapeMismatch, "h/f do not match W");
  if (p.size() != t.size() || p.size() != h_last.size()) {
    throw Error(ErrorCode::kShapeMismatch, "p, t and logits lengths differ");
  }
  const double f_norm = norm2(f);
  if (f_norm == 0.0) throw Error(ErrorCode::kZeroInput, "zero pre-activation");
  const SpectralTriple spec = power_iteration(w);
  const AlignmentDecomposition dec = alignment_decomposition(h, spec.u1);
  double dev = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) dev += (p[i] - t[i]) * h_last[i];
  const double hn = norm2(h);
  return -eta * rho * dec.alpha * (dot(spec.v1, f) / f_norm) * hn * hn * dev;
}

ForcedAlignmentState make_forced_alignment(const ForcedAlignmentSpec& spec, double noise, std::uint64_t seed) {
  if (spec.dims.size() < 3) throw Error(ErrorCode::kBadDims, "forced alignment needs a hidden layer");
  if (spec.batch == 0) throw Error(ErrorCode::kInvalidConfig, "forced alignment batch must be positive");
  if (!(noise >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "noise must be >= 0");

  ForcedAlignmentState state;
  state.noise = noise;
  state.model = init_mlp(spec.dims, seed, 1.0);
  std::mt19937_64 engine(seed ^ 0x9E3779B97F4A7C15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::size_t n0 = spec.dims[0];
  const std::size_t n1 = spec.dims[1];
  const Vector h_dir = random_unit(n0, engine);
  Vector v = random_unit(n1, engine);
  // Every hidden unit of layer 1 being dead would leave nothing to train.
  if (std::none_of(v.begin(), v.end(), [](double x) { return x > 0.0; })) {
    for (double& x : v) x = -x;
  }
  Matrix w1 = Matrix::outer(h_dir, v) * spec.sigma;
  const double g_scale = noise * spec.sigma / std::sqrt(static_cast<double>(std::max(n0, n1)));
  for (double& x : w1.data()) x += g_scale * normal(engine);
  state.model.weights[0] = std::move(w1);

  std::uniform_real_distribution<double> magnitude(0.5, 1.5);
  state.inputs = Matrix(spec.batch, n0);
  const double xi_scale = noise / std::sqrt(static_cast<double>(n0));
  for (std::size_t i = 0; i < spec.batch; ++i) {
    const double s = magnitude(engine);
    auto row = state.inputs.row(i);
    for (std::size_t c = 0; c < n0; ++c) row[c] = s * h_dir[c] + xi_scale * normal(engine);
  }
  // Target the class the untrained network likes least, so pre-training has
  // to move the batch into the region and stops just inside it.
  Vector mean_logits(spec.dims.back(), 0.0);
  for (std::size_t i = 0; i < spec.batch; ++i) {
    const ForwardTrace t = forward(state.model, state.inputs.row(i));
    for (std::size_t k = 0; k < mean_logits.size(); ++k) mean_logits[k] += t.logits()[k];
  }
  state.target = static_cast<std::size_t>(std::min_element(mean_logits.begin(), mean_logits.end()) -
                                          mean_logits.begin());

  // Train layers 2 … L with W₁ frozen until the batch is inside the region
  // where every logit deviation is negative.
  for (;;) {
    BatchPass pass = batch_pass(state.model, state.inputs, state.target);
    if (max_logit_deviation(pass, state.target) < 0.0) break;
    if (state.pretrain_steps >= spec.pretrain_budget) {
      throw Error(ErrorCode::kRegionNotReached, "logit deviation still non-negative after " +
                                                    std::to_string(spec.pretrain_budget) + " steps (seed " +
                                                    std::to_string(seed) + ")");
    }
    for (std::size_t k = 1; k < state.model.num_layers(); ++k) {
      state.model.weights[k] -= pass.grads[k] * spec.pretrain_eta;
    }
    ++state.pretrain_steps;
  }
  return state;
}

GrowthReport growth_step(const ForcedAlignmentState& state, double eta) {
  const MLPState& model = state.model;
  const Matrix& w = model.weights[0];
  BatchPass pass = batch_pass(model, state.inputs, state.target);

  GrowthReport rep;
  rep.pretrain_steps = state.pretrain_steps;
  rep.rho = estimate_rho(pass.traces, 1).rho;
  rep.sigma1_before = sigma1_oracle(w);
  rep.actual_delta = sigma1_oracle(w - pass.grads[0] * eta) - rep.sigma1_before;

  const SpectralTriple spec = power_iteration(w);
  const Vector t = one_hot(model.dims.back(), state.target);
  const double n = static_cast<double>(pass.traces.size());
  rep.max_logit_dev = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pass.traces.size(); ++i) {
    const ForwardTrace& tr = pass.traces[i];
    const Vector& p = pass.losses[i].p;
    const AlignmentDecomposition dec = alignment_decomposition(tr.h[0], spec.u1);
    const double dev = logit_deviation(p, state.target, tr.logits()).dot_form;
    rep.predicted_delta += predict_delta_specnorm(w, tr.h[0], tr.f[0], eta, rep.rho, p, t, tr.logits()) / n;
    rep.alpha += dec.alpha / n;
    rep.proj_f_v1 += dot(spec.v1, tr.f[0]) / norm2(tr.f[0]) / n;
    rep.logit_dev += dev / n;
    rep.max_logit_dev = std::max(rep.max_logit_dev, dev);
    rep.max_pathology_ratio = std::max(rep.max_pathology_ratio, dec.pathology_ratio);
    rep.mean_preact_norm += norm2(tr.f[0]) / n;
  }
  rep.sign_agrees = (rep.predicted_delta > 0.0) == (rep.actual_delta > 0.0);
  return rep;
}

GrowthReport forced_alignment_experiment(const ForcedAlignmentSpec& spec, double eta, double noise,
                                         std::uint64_t seed) {
  return growth_step(make_forced_alignment(spec, noise, seed), eta);
}

PerturbationReport verify_perturbation_order(const Matrix& a, const Matrix& b, std::span<const double> etas) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorCode::kShapeMismatch, "A and B differ in shape");
  if (etas.size() < 3) throw Error(ErrorCode::kBadInput, "need at least three step sizes");
  for (std::size_t i = 1; i < etas.size(); ++i) {
    if (std::abs(etas[i] * 2.0 - etas[i - 1]) > 1e-12 * etas[i - 1]) {
      throw Error(ErrorCode::kBadInput, "step sizes must halve");
    }
  }
  const auto svd = svd_small_oracle(a);
  const double s1 = svd.front().sigma;
  const double s2 = svd.size() > 1 ? svd[1].sigma : 0.0;
  if (s1 == 0.0 || (s2 > 0.0 && s1 / s2 < 1.01)) {
    throw Error(ErrorCode::kDegenerateSpectrum, "sigma1/sigma2 below 1.01");
  }

  PerturbationReport rep;
  rep.gap_ratio = s2 == 0.0 ? std::numeric_limits<double>::infinity() : s1 / s2;
  rep.etas.assign(etas.begin(), etas.end());
  for (double eta : etas) {
    const double exact = sigma1_oracle(a + b * eta);
    rep.errors.push_back(std::abs(exact - first_order_spectral_change(a, b, eta)));
  }
  for (std::size_t i = 0; i + 1 < rep.errors.size(); ++i) {
    rep.ratios.push_back(rep.errors[i + 1] == 0.0 ? std::numeric_limits<double>::infinity()
                                                   : rep.errors[i] / rep.errors[i + 1]);
  }
  rep.below_floor = rep.errors.back() < kPerturbationFloor;
  rep.pass = rep.below_floor || (rep.ratios.back() >= 3.0 && rep.ratios.back() <= 5.0);
  return rep;
}

AmplificationReport amplification_check(const ForcedAlignmentState& state, double eta, std::size_t steps) {
  if (!(eta >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "eta must be >= 0");
  MLPState model = state.model;
  AmplificationReport rep;

  // ‖f‖ against β·σ₁ for every row, with β = ⟨h, u₁⟩.
  auto measure = [&](const BatchPass& pass, double& preact, double& sigma1, double& worst_path) {
    const SpectralTriple spec = power_iteration(model.weights[0]);
    sigma1 = spec.sigma1;
    preact = 0.0;
    worst_path = 0.0;
    for (const ForwardTrace& tr : pass.traces) {
      const double fn = norm2(tr.f[0]);
      const double beta = std::abs(dot(tr.h[0], spec.u1));
      preact += fn / static_cast<double>(pass.traces.size());
      rep.ratio_consistency = std::max(rep.ratio_consistency, std::abs(fn / (beta * sigma1) - 1.0));
      worst_path = std::max(worst_path, alignment_decomposition(tr.h[0], spec.u1).pathology_ratio);
    }
  };

  BatchPass pass = batch_pass(model, state.inputs, state.target);
  double path = 0.0;
  measure(pass, rep.initial_preact_norm, rep.initial_sigma1, path);
  rep.initial_grad_frob = pass.grads[0].frobenius_norm();
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t k = 0; k < model.num_layers(); ++k) model.weights[k] -= pass.grads[k] * eta;
    pass = batch_pass(model, state.inputs, state.target);
    double preact = 0.0;
    double sigma1 = 0.0;
    measure(pass, preact, sigma1, path);
    if (path > 0.5) {
      rep.pathology_lost = true;
      break;
    }
    rep.preact_norms.push_back(preact);
    rep.sigma1_series.push_back(sigma1);
    rep.grad_frob_series.push_back(pass.grads[0].frobenius_norm());
    ++rep.steps;
  }
  return rep;
}

}  // namespace saspec
