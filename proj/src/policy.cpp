#include "cecil/policy.hpp"

#include "cecil/errors.hpp"

namespace cecil {

Matrix PowerPolicy::infer(const Matrix& gains, Rng& rng, ad::Mode mode) {
  ad::Tape tape(false);
  return forward(tape, gains, rng, mode).value();
}

std::vector<Matrix> snapshot(PowerPolicy& policy) {
  std::vector<Matrix> out;
  for (const ad::NamedTensor& t : policy.state()) out.push_back(*t.value);
  return out;
}

void restore(PowerPolicy& policy, const std::vector<Matrix>& saved) {
  auto slots = policy.state();
  if (slots.size() != saved.size()) throw UsageError("restore: snapshot does not match the model");
  for (std::size_t k = 0; k < slots.size(); ++k) *slots[k].value = saved[k];
}

}  // namespace cecil
