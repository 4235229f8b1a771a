#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "saspec/linalg.hpp"
#include "saspec/mlp.hpp"

namespace saspec {

// Layer indices in this header are 1-based, matching W_1 … W_L.

struct MeanFieldEstimate {
  double rho = 1.0;
  std::vector<double> per_layer_active_fractions;  // layers l … L−1
};

/// ρ as the product of mean active fractions of layers l … L−1.
MeanFieldEstimate estimate_rho(std::span<const ForwardTrace> traces, std::size_t layer);

/// (h⁽ˡ⁻¹⁾)ᵀ(p−t)·ρ·(W_Lᵀ ⋯ W_{l+1}ᵀ)·Diag(1(f⁽ˡ⁾ > 0)).
Matrix approx_gradient(const MLPState& model, const ForwardTrace& trace, std::span<const double> p,
                       std::size_t target, double rho, std::size_t layer);

/// Exact gradient of W_l built by multiplying out the full Jacobian chain
/// (p−t)·W_Lᵀ·D_{L−1}·W_{L−1}ᵀ ⋯ W_{l+1}ᵀ·D_l as explicit matrices. Slow; used
/// as an independent check of backward_exact.
Matrix product_formula_gradient(const MLPState& model, const ForwardTrace& trace, std::span<const double> p,
                                std::size_t target, std::size_t layer);

struct LogitDeviation {
  double dot_form = 0.0;          // (p − t)·z
  double expectation_form = 0.0;  // Σ pᵢzᵢ − z_k
};

/// Both forms of the expected logit deviation. Throws BadInput when p is not
/// a distribution, k is out of range, or the forms disagree.
LogitDeviation logit_deviation(std::span<const double> p, std::size_t target, std::span<const double> z);

/// −ηρα·⟨v₁, f⟩/‖f‖·‖h‖²·(p−t)·h⁽ᴸ⁾ᵀ for a single sample.
double predict_delta_specnorm(const Matrix& w, std::span<const double> h, std::span<const double> f, double eta,
                              double rho, std::span<const double> p, std::span<const double> t,
                              std::span<const double> h_last);

struct ForcedAlignmentSpec {
  std::vector<std::size_t> dims{8, 16, 16, 4};
  std::size_t batch = 16;
  double sigma = 2.0;
  double pretrain_eta = 0.2;
  std::size_t pretrain_budget = 5000;
};

/// A model whose first layer has u₁ aligned with every input row:
/// W₁ = σ·ĥvᵀ + noise·G, rows hᵢ = sᵢĥ + noise·ξᵢ. Upper layers are trained
/// (W₁ frozen) until every row has negative logit deviation.
struct ForcedAlignmentState {
  MLPState model;
  Matrix inputs;
  std::size_t target = 0;
  std::size_t pretrain_steps = 0;
  double noise = 0.0;
};

ForcedAlignmentState make_forced_alignment(const ForcedAlignmentSpec& spec, double noise, std::uint64_t seed);

struct GrowthReport {
  std::size_t layer = 1;
  double predicted_delta = 0.0;
  double actual_delta = 0.0;
  double alpha = 0.0;      // batch mean
  double proj_f_v1 = 0.0;  // batch mean of ⟨v₁, f⟩/‖f‖
  double logit_dev = 0.0;  // batch mean
  double max_logit_dev = 0.0;
  double max_pathology_ratio = 0.0;
  double rho = 0.0;
  double sigma1_before = 0.0;
  double mean_preact_norm = 0.0;
  std::size_t pretrain_steps = 0;
  bool sign_agrees = false;
};

/// One GD step on W₁ of a forced-alignment state; actual Δσ₁ from the SVD
/// oracle, prediction averaged per sample over the batch.
GrowthReport growth_step(const ForcedAlignmentState& state, double eta);

GrowthReport forced_alignment_experiment(const ForcedAlignmentSpec& spec, double eta, double noise,
                                         std::uint64_t seed);

struct PerturbationReport {
  std::vector<double> etas;
  std::vector<double> errors;
  std::vector<double> ratios;  // errors[i] / errors[i+1]
  double gap_ratio = 0.0;      // σ₁/σ₂ of A
  bool below_floor = false;
  bool pass = false;
};

inline constexpr double kPerturbationFloor = 1e-12;

/// Checks that the first-order prediction error shrinks quadratically. The
/// last ratio must lie in [3, 5] unless the last error is below the floor.
PerturbationReport verify_perturbation_order(const Matrix& a, const Matrix& b, std::span<const double> etas);

struct AmplificationReport {
  std::size_t steps = 0;
  double initial_sigma1 = 0.0;
  double initial_preact_norm = 0.0;
  double initial_grad_frob = 0.0;
  std::vector<double> preact_norms;     // batch mean ‖f⁽ˡ⁾‖
  std::vector<double> sigma1_series;    // ‖W_l‖₂
  std::vector<double> grad_frob_series; // ‖∂L/∂W_l‖_F of the batch gradient
  double ratio_consistency = 0.0;       // max |‖f‖/(β·σ₁) − 1|
  bool pathology_lost = false;
};

/// Runs full-model GD steps from a forced-alignment state, recording the
/// state after each step. Stops early, flagging pathology_lost, if any row's
/// pathology ratio exceeds 0.5.
AmplificationReport amplification_check(const ForcedAlignmentState& state, double eta, std::size_t steps);

}  // namespace saspec
