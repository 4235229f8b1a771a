#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "saspec/mlp.hpp"

namespace saspec {

struct SuiteOutcome {
  std::string suite;
  bool pass = true;
  std::vector<std::string> lines;     // human-readable statistics
  std::vector<std::string> failures;  // "<invariant> (seed N): detail"
};

/// Suites: gradient, perturbation, growth, lemma, amplification.
const std::vector<std::string>& suite_names();
SuiteOutcome run_suite(std::string_view name, std::size_t trials, std::uint64_t seed);
/// Trial count used when the caller does not pick one.
std::size_t default_trials(std::string_view suite);

/// Central finite difference of the single-sample loss with respect to one
/// weight. Returns nullopt when the perturbation flips a ReLU gate, where the
/// derivative is undefined.
std::optional<double> finite_difference(const MLPState& model, std::span<const double> x, std::size_t target,
                                        std::size_t layer_index, std::size_t r, std::size_t c);

/// Random small MLP for property checks: 2–4 layers, widths in [2, max_width].
MLPState random_mlp(std::uint64_t seed, std::size_t max_layers, std::size_t max_width);

}  // namespace saspec
