#include "saspec/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>

#include "saspec/error.hpp"
#include "saspec/theory.hpp"

namespace saspec {

namespace {

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string seed_tag(std::uint64_t seed) { return " (seed " + std::to_string(seed) + ")"; }

double loss_at(const MLPState& model, std::span<const double> x, std::size_t target) {
  const ForwardTrace t = forward(model, x);
  return softmax_cross_entropy(t.logits(), target).loss;
}

double cosine(const Matrix& a, const Matrix& b) {
  const double na = a.frobenius_norm();
  const double nb = b.frobenius_norm();
  if (na == 0.0 || nb == 0.0) return na == nb ? 1.0 : 0.0;
  return dot(a.data(), b.data()) / (na * nb);
}

Vector random_vector(std::size_t n, std::mt19937_64& engine, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vector v(n);
  for (double& x : v) x = normal(engine);
  return v;
}

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& engine) {
  Matrix m(r, c);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& x : m.data()) x = normal(engine);
  return m;
}

SuiteOutcome gradient_suite(std::size_t trials, std::uint64_t seed) {
  SuiteOutcome out{"gradient", true, {}, {}};
  double worst_fd = 0.0;
  double worst_formula = 0.0;
  double cos_sum = 0.0;
  std::size_t cos_count = 0;
  std::size_t skipped = 0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::uint64_t s = seed + trial;
    const MLPState model = random_mlp(s, 4, 16);
    std::mt19937_64 engine(s ^ 0xA5A5A5A5ULL);
    const Vector x = random_vector(model.dims.front(), engine);
    const std::size_t target = std::uniform_int_distribution<std::size_t>(0, model.dims.back() - 1)(engine);
    const ForwardTrace tr = forward(model, x);
    const LossResult lr = softmax_cross_entropy(tr.logits(), target);
    const std::vector<Matrix> grads = backward_exact(model, tr, lr.p, target);

    for (std::size_t l = 0; l < model.num_layers(); ++l) {
      const Matrix literal = product_formula_gradient(model, tr, lr.p, target, l + 1);
      for (std::size_t i = 0; i < literal.size(); ++i) {
        worst_formula = std::max(worst_formula, std::abs(literal.data()[i] - grads[l].data()[i]));
      }
      for (std::size_t r = 0; r < grads[l].rows(); ++r) {
        for (std::size_t c = 0; c < grads[l].cols(); ++c) {
          const auto fd = finite_difference(model, x, target, l, r, c);
          if (!fd) {
            ++skipped;
            continue;
          }
          const double g = grads[l](r, c);
          const double rel = std::abs(g - *fd) / std::max({std::abs(g), std::abs(*fd), 1e-3});
          worst_fd = std::max(worst_fd, rel);
          if (rel > 1e-5) {
            out.failures.push_back("finite difference W" + std::to_string(l + 1) + "[" + std::to_string(r) + "," +
                                   std::to_string(c) + "] rel err " + fmt("%.3e", rel) + seed_tag(s));
          }
        }
      }
    }
    if (worst_formula > 1e-10) out.failures.push_back("product formula " + fmt("%.3e", worst_formula) + seed_tag(s));

    // Mean-field fidelity of the approximate gradient for layer 1.
    std::vector<ForwardTrace> batch;
    for (int i = 0; i < 64; ++i) batch.push_back(forward(model, random_vector(model.dims.front(), engine)));
    const double rho = estimate_rho(batch, 1).rho;
    if (rho > 0.0) {
      cos_sum += cosine(approx_gradient(model, tr, lr.p, target, rho, 1), grads[0]);
      ++cos_count;
    }
  }
  const double mean_cos = cos_count ? cos_sum / static_cast<double>(cos_count) : 0.0;
  out.lines.push_back("max finite-difference rel err " + fmt("%.3e", worst_fd) + " (tol 1e-5), " +
                      std::to_string(skipped) + " gate-crossing entries skipped");
  out.lines.push_back("max |backward - product formula| " + fmt("%.3e", worst_formula) + " (tol 1e-10)");
  out.lines.push_back("mean cosine(approx, exact) for W1 " + fmt("%.3f", mean_cos) + " (reported)");
  out.pass = out.failures.empty();
  return out;
}

SuiteOutcome perturbation_suite(std::size_t trials, std::uint64_t seed) {
  SuiteOutcome out{"perturbation", true, {}, {}};
  const double etas[] = {1e-2, 5e-3, 2.5e-3};
  out.lines.push_back("seed      gap    e(1e-2)     e(5e-3)     e(2.5e-3)   ratio");
  std::uint64_t s = seed;
  for (std::size_t trial = 0; trial < trials; ++s) {
    std::mt19937_64 engine(s);
    const Matrix a = random_matrix(6, 6, engine);
    Matrix b = random_matrix(6, 6, engine);
    b *= 1.0 / b.frobenius_norm();
    PerturbationReport rep;
    try {
      rep = verify_perturbation_order(a, b, etas);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kDegenerateSpectrum) continue;
      throw;
    }
    ++trial;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-6llu %7.3f  %.3e   %.3e   %.3e   %.3f", static_cast<unsigned long long>(s),
                  rep.gap_ratio, rep.errors[0], rep.errors[1], rep.errors[2], rep.ratios.back());
    out.lines.push_back(buf);
    if (!rep.pass) out.failures.push_back("error ratio " + fmt("%.3f", rep.ratios.back()) + " outside [3, 5]" + seed_tag(s));
  }
  out.pass = out.failures.empty();
  return out;
}

SuiteOutcome growth_suite(std::size_t trials, std::uint64_t seed) {
  SuiteOutcome out{"growth", true, {}, {}};
  const ForcedAlignmentSpec spec;
  constexpr double kEta = 1e-2;
  constexpr double kNoise = 0.02;
  std::size_t agree = 0;
  double min_lin = 1e300;
  double max_lin = 0.0;
  double max_path = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::uint64_t s = seed + trial;
    const ForcedAlignmentState st = make_forced_alignment(spec, kNoise, s);
    const GrowthReport big = growth_step(st, kEta);
    const GrowthReport small = growth_step(st, kEta / 10.0);
    const double lin = big.actual_delta / small.actual_delta;
    min_lin = std::min(min_lin, lin);
    max_lin = std::max(max_lin, lin);
    max_path = std::max(max_path, big.max_pathology_ratio);
    if (big.max_pathology_ratio > 0.1) {
      out.failures.push_back("pathology ratio " + fmt("%.3f", big.max_pathology_ratio) + " > 0.1" + seed_tag(s));
    }
    if (!(big.max_logit_dev < 0.0)) out.failures.push_back("logit deviation not negative" + seed_tag(s));
    if (big.actual_delta > 0.0 && big.sign_agrees) {
      ++agree;
    } else {
      out.failures.push_back("actual delta " + fmt("%.3e", big.actual_delta) + ", predicted " +
                             fmt("%.3e", big.predicted_delta) + seed_tag(s));
    }
    if (!(lin >= 8.0 && lin <= 12.0)) out.failures.push_back("eta-linearity ratio " + fmt("%.3f", lin) + seed_tag(s));
  }
  out.lines.push_back(std::to_string(agree) + "/" + std::to_string(trials) + " trials with actual growth and sign agreement");
  out.lines.push_back("eta-linearity ratio range [" + fmt("%.4f", min_lin) + ", " + fmt("%.4f", max_lin) + "] (want [8, 12])");
  out.lines.push_back("max pathology ratio " + fmt("%.4f", max_path) + " (want <= 0.1)");
  out.pass = out.failures.empty();
  return out;
}

SuiteOutcome lemma_suite(std::size_t trials, std::uint64_t seed) {
  SuiteOutcome out{"lemma", true, {}, {}};
  std::mt19937_64 engine(seed);
  std::uniform_int_distribution<std::size_t> width(2, 10);
  double worst = 0.0;
  std::size_t region_neg = 0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t n = width(engine);
    const Vector z = random_vector(n, engine, 3.0);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, n - 1)(engine);
    const LossResult lr = softmax_cross_entropy(z, k);
    const LogitDeviation d = logit_deviation(lr.p, k, z);
    worst = std::max(worst, std::abs(d.dot_form - d.expectation_form));

    const auto top = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    const LossResult lt = softmax_cross_entropy(z, top);
    if (logit_deviation(lt.p, top, z).dot_form < 0.0) {
      ++region_neg;
    } else {
      out.failures.push_back("argmax target with non-negative deviation" + seed_tag(seed + trial));
    }
  }
  out.lines.push_back("max |dot form - expectation form| " + fmt("%.3e", worst) + " (tol 1e-10)");
  out.lines.push_back(std::to_string(region_neg) + "/" + std::to_string(trials) + " argmax-target draws negative");
  if (worst > 1e-10) out.failures.push_back("identity violated by " + fmt("%.3e", worst));

  // Region claim on a trained toy network.
  DatasetSpec ds;
  ds.dim = 16;
  ds.n_classes = 4;
  ds.n_samples = 64;
  ds.cluster_spread = 0.5;
  ds.offset_norm = 0.0;
  ds.seed = seed;
  const Dataset data = make_dataset(ds);
  MLPState model = init_mlp(std::vector<std::size_t>{16, 32, 4}, seed, 1.0);
  double loss = 0.0;
  std::size_t steps = 0;
  for (; steps < 20000; ++steps) {
    std::vector<Matrix> grads;
    for (const Matrix& w : model.weights) grads.emplace_back(w.rows(), w.cols());
    loss = 0.0;
    const double inv = 1.0 / static_cast<double>(data.x.rows());
    for (std::size_t i = 0; i < data.x.rows(); ++i) {
      const ForwardTrace tr = forward(model, data.x.row(i));
      const LossResult lr = softmax_cross_entropy(tr.logits(), data.labels[i]);
      loss += lr.loss * inv;
      const auto g = backward_exact(model, tr, lr.p, data.labels[i]);
      for (std::size_t k = 0; k < g.size(); ++k) grads[k] += g[k] * inv;
    }
    if (loss < 0.1) break;
    for (std::size_t k = 0; k < grads.size(); ++k) model.weights[k] -= grads[k] * 0.1;
  }
  std::size_t negative = 0;
  for (std::size_t i = 0; i < data.x.rows(); ++i) {
    const ForwardTrace tr = forward(model, data.x.row(i));
    const LossResult lr = softmax_cross_entropy(tr.logits(), data.labels[i]);
    if (logit_deviation(lr.p, data.labels[i], tr.logits()).dot_form < 0.0) ++negative;
  }
  const double frac = static_cast<double>(negative) / static_cast<double>(data.x.rows());
  out.lines.push_back("trained toy MLP: loss " + fmt("%.4f", loss) + " after " + std::to_string(steps) +
                      " steps, negative deviation on " + fmt("%.1f%%", 100.0 * frac) + " of samples");
  if (loss >= 0.1) out.failures.push_back("toy MLP did not reach loss < 0.1" + seed_tag(seed));
  if (frac < 0.95) out.failures.push_back("negative deviation on only " + fmt("%.3f", frac) + seed_tag(seed));
  out.pass = out.failures.empty();
  return out;
}

SuiteOutcome amplification_suite(std::size_t trials, std::uint64_t seed) {
  SuiteOutcome out{"amplification", true, {}, {}};
  const ForcedAlignmentSpec spec;
  constexpr std::size_t kSteps = 5;
  std::size_t grad_rising = 0;
  std::size_t amplified = 0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::uint64_t s = seed + trial;
    const ForcedAlignmentState st = make_forced_alignment(spec, 0.0, s);
    const AmplificationReport rep = amplification_check(st, 1e-2, kSteps);
    const std::size_t failures_before = out.failures.size();
    if (rep.pathology_lost || rep.steps != kSteps) {
      out.failures.push_back("pathology lost after " + std::to_string(rep.steps) + " steps" + seed_tag(s));
      continue;
    }
    double prev_sigma = rep.initial_sigma1;
    double prev_grad = rep.initial_grad_frob;
    bool sigma_up = true;
    bool grad_up = true;
    for (std::size_t i = 0; i < rep.steps; ++i) {
      sigma_up = sigma_up && rep.sigma1_series[i] > prev_sigma;
      grad_up = grad_up && rep.grad_frob_series[i] >= prev_grad;
      prev_sigma = rep.sigma1_series[i];
      prev_grad = rep.grad_frob_series[i];
    }
    if (!sigma_up) out.failures.push_back("sigma1 not strictly increasing" + seed_tag(s));
    if (grad_up) ++grad_rising;
    if (rep.ratio_consistency > 1e-6) {
      out.failures.push_back("|f|/(beta sigma1) off by " + fmt("%.3e", rep.ratio_consistency) + seed_tag(s));
    }
    if (out.failures.size() == failures_before) ++amplified;
    if (trial == 0) {
      out.lines.push_back("seed " + std::to_string(s) + ": sigma1 " + fmt("%.6f", rep.initial_sigma1) + " -> " +
                          fmt("%.6f", rep.sigma1_series.back()) + ", |grad W1|_F " +
                          fmt("%.6f", rep.initial_grad_frob) + " -> " + fmt("%.6f", rep.grad_frob_series.back()) +
                          ", ratio consistency " + fmt("%.2e", rep.ratio_consistency));
    }
  }
  out.lines.push_back(std::to_string(amplified) + "/" + std::to_string(trials) + " noise-free runs with rising sigma1 and |f| = beta sigma1");
  out.lines.push_back(std::to_string(grad_rising) + "/" + std::to_string(trials) +
                      " runs with non-decreasing |grad W1|_F (reported)");
  out.pass = out.failures.empty();
  return out;
}

}  // namespace

std::optional<double> finite_difference(const MLPState& model, std::span<const double> x, std::size_t target,
                                        std::size_t layer_index, std::size_t r, std::size_t c) {
  const double w0 = model.weights[layer_index](r, c);
  const double h = 1e-6 * std::max(1.0, std::abs(w0));
  MLPState plus = model;
  MLPState minus = model;
  plus.weights[layer_index](r, c) = w0 + h;
  minus.weights[layer_index](r, c) = w0 - h;
  const ForwardTrace base = forward(model, x);
  const ForwardTrace tp = forward(plus, x);
  const ForwardTrace tm = forward(minus, x);
  if (tp.active != base.active || tm.active != base.active) return std::nullopt;
  return (loss_at(plus, x, target) - loss_at(minus, x, target)) / (2.0 * h);
}

MLPState random_mlp(std::uint64_t seed, std::size_t max_layers, std::size_t max_width) {
  std::mt19937_64 engine(seed);
  const std::size_t layers = std::uniform_int_distribution<std::size_t>(2, std::max<std::size_t>(2, max_layers))(engine);
  std::uniform_int_distribution<std::size_t> width(2, std::max<std::size_t>(2, max_width));
  std::vector<std::size_t> dims(layers + 1);
  for (std::size_t& d : dims) d = width(engine);
  return init_mlp(dims, seed, 1.0);
}

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"gradient", "perturbation", "growth", "lemma", "amplification"};
  return names;
}

std::size_t default_trials(std::string_view suite) {
  if (suite == "gradient" || suite == "perturbation") return 20;
  if (suite == "growth") return 50;
  if (suite == "lemma") return 1000;
  if (suite == "amplification") return 10;
  throw Error(ErrorCode::kInvalidConfig, "unknown suite '" + std::string(suite) + "'");
}

SuiteOutcome run_suite(std::string_view name, std::size_t trials, std::uint64_t seed) {
  if (name == "gradient") return gradient_suite(trials, seed);
  if (name == "perturbation") return perturbation_suite(trials, seed);
  if (name == "growth") return growth_suite(trials, seed);
  if (name == "lemma") return lemma_suite(trials, seed);
  if (name == "amplification") return amplification_suite(trials, seed);
  throw Error(ErrorCode::kInvalidConfig, "unknown suite '" + std::string(name) + "'");
}

}  // namespace saspec
