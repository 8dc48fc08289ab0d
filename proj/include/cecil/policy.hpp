#pragma once

#include <string>
#include <vector>

#include "cecil/autodiff.hpp"
#include "cecil/mlp.hpp"
#include "cecil/random.hpp"

namespace cecil {

using ad::Matrix;

/// Anything that maps a batch of gain matrices (B x N^2) to powers (B x N) through a
/// differentiable graph: CECIL itself and the learned baselines.
class PowerPolicy {
 public:
  virtual ~PowerPolicy() = default;

  [[nodiscard]] virtual int network_size() const = 0;
  [[nodiscard]] virtual double power_budget() const = 0;
  [[nodiscard]] virtual std::string label() const = 0;
  /// True when inference draws channel noise or quantisation randomness.
  [[nodiscard]] virtual bool stochastic() const { return false; }

  virtual ad::Var forward(ad::Tape& tape, const Matrix& gains, Rng& rng, ad::Mode mode) = 0;
  virtual std::vector<ad::Parameter*> parameters() = 0;
  /// Parameters and buffers, in a stable order, for checkpoints.
  virtual std::vector<ad::NamedTensor> state() = 0;

  /// Inference without recording a graph.
  Matrix infer(const Matrix& gains, Rng& rng, ad::Mode mode = ad::Mode::Eval);
};

/// Copy of all state tensors, used for best-validation checkpointing.
std::vector<Matrix> snapshot(PowerPolicy& policy);
void restore(PowerPolicy& policy, const std::vector<Matrix>& saved);

}  // namespace cecil
