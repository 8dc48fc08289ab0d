#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cecil/autodiff.hpp"
#include "cecil/random.hpp"

namespace cecil::ad {

enum class Activation { Relu, Sigmoid, Tanh, Linear, ScaledSigmoid };

std::string to_string(Activation a);

struct LayerSpec {
  int width = 1;
  Activation activation = Activation::Relu;
  double scale = 1.0;  // only used by ScaledSigmoid
  bool batch_norm = false;
  /// Ignored on batch-normalised layers, which never carry a bias.
  bool bias = true;
};

/// Fully-connected network shape: input width followed by the layer list.
struct MlpSpec {
  int input_width = 1;
  std::vector<LayerSpec> layers;

  /// `depth` weight layers: depth-1 hidden relu layers of `hidden` units (batch-normalised
  /// when `batch_norm`), then an output layer of `output` units with activation `head`.
  static MlpSpec stack(int input, int hidden, int depth, int output, Activation head, double head_scale = 1.0,
                       bool batch_norm = true);

  void validate() const;
};

struct DenseLayer {
  Parameter weight;               // out x in
  std::optional<Parameter> bias;  // 1 x out; absent before batch normalisation
};

struct BatchNormLayer {
  Parameter gamma;  // 1 x width
  Parameter beta;   // 1 x width
  BatchNormState state;
};

/// A named tensor slot for serialisation (parameters and non-trainable buffers alike).
struct NamedTensor {
  std::string name;
  Matrix* value;
};

class Mlp {
 public:
  Mlp() = default;
  /// He initialisation for relu layers, Xavier for the rest; biases zero. Batch-normalised
  /// layers carry no bias (the normalisation shift replaces it).
  Mlp(std::string name, MlpSpec spec, Rng& rng);

  [[nodiscard]] const MlpSpec& spec() const { return spec_; }
  [[nodiscard]] const std::string& name() const { return name_; }
  [[nodiscard]] int input_width() const { return spec_.input_width; }
  [[nodiscard]] int output_width() const { return spec_.layers.back().width; }

  /// Records the forward pass on `tape`. Throws NumericError naming the layer when an
  /// activation becomes non-finite.
  Var forward(Tape& tape, Var input, Mode mode);

  /// Eval-mode forward on a throwaway tape.
  Matrix evaluate(const Matrix& input);

  std::vector<Parameter*> parameters();
  /// Parameters followed by batch-norm running statistics.
  std::vector<NamedTensor> state();

  /// Record relu statistics on every forward pass (off by default).
  void track_relu(bool on) { track_relu_ = on; }
  /// Smallest |pre-activation| at any relu input during the last tracked forward pass
  /// (infinity when the network has no relu layer).
  [[nodiscard]] double last_relu_margin() const { return relu_margin_; }
  /// Hash of the on/off pattern of every relu unit during the last forward pass.
  [[nodiscard]] std::uint64_t last_relu_pattern() const { return relu_pattern_; }

  std::vector<DenseLayer>& dense() { return dense_; }
  std::vector<std::optional<BatchNormLayer>>& norms() { return norms_; }

 private:
  std::string name_;
  MlpSpec spec_;
  std::vector<DenseLayer> dense_;
  std::vector<std::optional<BatchNormLayer>> norms_;
  double relu_margin_ = std::numeric_limits<double>::infinity();
  std::uint64_t relu_pattern_ = 0;
  bool track_relu_ = false;
};

}  // namespace cecil::ad
