#include "cecil/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cecil/errors.hpp"

namespace cecil::ad {

namespace {

double loss_value(const LossFn& loss) {
  Tape tape(false);
  return loss(tape).value()(0, 0);
}

}  // namespace

GradCheckResult grad_check(std::span<Parameter* const> params, const LossFn& loss, const GradCheckOptions& options) {
  if (options.order != 2 && options.order != 4) throw UsageError("grad_check: order must be 2 or 4");
  if (!(options.step > 0)) throw UsageError("grad_check: step must be positive");
  for (Parameter* p : params) p->grad = Matrix::Zero(p->value.rows(), p->value.cols());
  {
    Tape tape;
    Var l = loss(tape);
    tape.backward(l);
  }
  const std::uint64_t home = options.region ? options.region() : 0;

  GradCheckResult result;
  for (Parameter* p : params) {
    for (Eigen::Index k = 0; k < p->value.size(); ++k) {
      double& entry = p->value.data()[k];
      const double saved = entry;
      bool crossed = false;
      auto at = [&](double offset) {
        entry = saved + offset;
        const double v = loss_value(loss);
        if (options.region && options.region() != home) crossed = true;
        return v;
      };

      double h = options.step;
      double numeric = 0;
      for (int attempt = 0;; ++attempt) {
        crossed = false;
        numeric = (at(h) - at(-h)) / (2.0 * h);
        if (options.order == 4) numeric = (4.0 * numeric - (at(2 * h) - at(-2 * h)) / (4.0 * h)) / 3.0;
        if (!crossed || attempt == options.max_shrinks) break;
        if (attempt == 0) ++result.entries_shrunk;
        h /= 4.0;
      }
      entry = saved;

      const double analytic = p->grad.data()[k];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double err = std::abs(analytic - numeric) / denom;
      ++result.entries_checked;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = p->name;
        result.worst_index = k;
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

GradCheckResult grad_check(std::span<Parameter* const> params, const LossFn& loss, double step) {
  return grad_check(params, loss, GradCheckOptions{step});
}

}  // namespace cecil::ad
