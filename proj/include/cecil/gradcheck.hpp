#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "cecil/autodiff.hpp"

namespace cecil::ad {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  Eigen::Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
  /// Entries whose step had to shrink because a probe crossed a relu kink.
  std::size_t entries_shrunk = 0;
};

/// Builds the scalar loss on the given tape. Must be deterministic: stochastic
/// nodes have to replay a frozen draw on every call.
using LossFn = std::function<Var(Tape&)>;

struct GradCheckOptions {
  double step = 1e-6;
  /// 2: three-point central stencil, 4: five-point central stencil.
  int order = 2;
  /// Identifies the piecewise-smooth region of the last loss evaluation (e.g. a relu
  /// pattern hash). When a probe lands in a different region the step is divided by
  /// 4, at most `max_shrinks` times.
  std::function<std::uint64_t()> region;
  int max_shrinks = 8;
};

/// Compares backprop gradients with central finite differences for every entry of
/// every parameter: max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
GradCheckResult grad_check(std::span<Parameter* const> params, const LossFn& loss, const GradCheckOptions& options);
GradCheckResult grad_check(std::span<Parameter* const> params, const LossFn& loss, double step = 1e-6);

}  // namespace cecil::ad
