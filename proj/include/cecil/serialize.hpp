#pragma once

#include <iosfwd>
#include <span>
#include <string>

#include "cecil/mlp.hpp"

namespace cecil::ad {

// Text container: a magic/version line, a count, then for each tensor a
// "tensor <name> <rows> <cols>" line followed by its row-major values.
inline constexpr const char* kTensorMagic = "CECIL-TENSORS";
inline constexpr int kTensorFormatVersion = 1;

void save_tensors(std::ostream& out, std::span<const NamedTensor> tensors);

/// Loads into the given slots. Names, order and shapes must match exactly.
void load_tensors(std::istream& in, std::span<const NamedTensor> tensors);

void save_tensors(const std::string& path, std::span<const NamedTensor> tensors);
void load_tensors(const std::string& path, std::span<const NamedTensor> tensors);

}  // namespace cecil::ad
