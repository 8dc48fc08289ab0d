#include "cecil/adam.hpp"

#include <cmath>
#include <string>

#include "cecil/errors.hpp"

namespace cecil::ad {

void adam_step(std::span<Parameter* const> params, AdamState& state) {
  if (state.first_moment.empty() && state.step == 0) {
    for (const Parameter* p : params) {
      state.first_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      state.second_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw UsageError("adam_step: state tracks " + std::to_string(state.first_moment.size()) + " parameters, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Parameter& p = *params[k];
    const Matrix& m = state.first_moment[k];
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
      throw UsageError("adam_step: moment shape mismatch for " + p.name);
    }
    if (p.has_grad() && (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols())) {
      throw UsageError("adam_step: gradient shape mismatch for " + p.name);
    }
  }

  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Matrix& m = state.first_moment[k];
    Matrix& v = state.second_moment[k];
    if (p.has_grad()) {
      m = c.beta1 * m + (1.0 - c.beta1) * p.grad;
      v = c.beta2 * v + (1.0 - c.beta2) * p.grad.cwiseAbs2();
    } else {
      m *= c.beta1;
      v *= c.beta2;
    }
    p.value.array() -= c.learning_rate * (m.array() / bias1) / ((v.array() / bias2).sqrt() + c.epsilon);
    if (!p.value.allFinite()) throw NumericError("adam_step: non-finite parameter " + p.name);
  }
}

void zero_grad(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace cecil::ad
