#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cecil/autodiff.hpp"

namespace cecil::ad {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment accumulators for one parameter list. Moments are allocated on the first
/// step and must keep mirroring the parameter shapes afterwards.
struct AdamState {
  AdamConfig config;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t step = 0;

  AdamState() = default;
  explicit AdamState(AdamConfig c) : config(c) {}
};

/// One Adam update descending the accumulated gradients (parameters without a
/// gradient are treated as having a zero gradient).
void adam_step(std::span<Parameter* const> params, AdamState& state);

void zero_grad(std::span<Parameter* const> params);

}  // namespace cecil::ad
