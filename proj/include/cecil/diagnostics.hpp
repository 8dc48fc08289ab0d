#pragma once

// Self-checks shared by the command-line tool and the test suites: finite-difference
// gradient checks over every layer type and the full pipeline, and a Monte-Carlo
// check of the quantiser's unbiasedness.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cecil/fran_env.hpp"
#include "cecil/gradcheck.hpp"
#include "cecil/policy.hpp"

namespace cecil::diagnostics {

struct GradCheckCase {
  std::string name;
  ad::GradCheckResult result;
};

/// Layer types (linear, relu, sigmoid, tanh, scaled sigmoid, batch norm), the
/// utilities, IC, NC and CECIL under every channel model and access mode. Stochastic
/// draws are frozen: noise by reseeding, quantisation by replaying recorded offsets.
std::vector<GradCheckCase> gradcheck_suite(std::uint64_t seed = 1);

/// Mean of a policy's utility over `gains` in train mode, with batch-norm running
/// statistics restored after every evaluation and the RNG reseeded from `seed`.
ad::LossFn frozen_policy_loss(PowerPolicy& policy, const env::UtilityKind& utility, const Matrix& gains,
                              std::uint64_t seed);

/// Smallest relu pre-activation magnitude seen by any network of the policy in its
/// last forward pass.
double relu_margin(PowerPolicy& policy);
/// Combined relu on/off pattern hash of the policy's last forward pass.
std::uint64_t relu_pattern(PowerPolicy& policy);

struct QuantizerCheck {
  int levels = 0;
  double input = 0.0;
  double mean = 0.0;
  double std_error = 0.0;  // theoretical, sqrt(f(1-f)/draws) with f the fractional part
  bool pass = false;
};

struct QuantizerSelftest {
  std::vector<QuantizerCheck> checks;
  [[nodiscard]] bool passed() const;
};

/// For each level count C, `grid` inputs evenly spaced over [0, C-1], each quantised
/// `draws` times. A check passes when |mean - m| <= sigmas * std_error (exact match
/// when m is an integer).
QuantizerSelftest quantizer_selftest(std::span<const int> levels, int grid = 50, int draws = 100000,
                                     std::uint64_t seed = 1, double sigmas = 4.0);

}  // namespace cecil::diagnostics
