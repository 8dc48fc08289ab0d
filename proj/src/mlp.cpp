#include "cecil/mlp.hpp"

#include <algorithm>
#include <cmath>

#include "cecil/errors.hpp"

namespace cecil::ad {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
    case Activation::Linear: return "linear";
    case Activation::ScaledSigmoid: return "scaled-sigmoid";
  }
  return "?";
}

MlpSpec MlpSpec::stack(int input, int hidden, int depth, int output, Activation head, double head_scale,
                       bool batch_norm) {
  MlpSpec s;
  s.input_width = input;
  for (int k = 0; k + 1 < depth; ++k) s.layers.push_back({hidden, Activation::Relu, 1.0, batch_norm});
  s.layers.push_back({output, head, head_scale, false});
  return s;
}

void MlpSpec::validate() const {
  if (input_width < 1) throw ConfigError("mlp: input width must be >= 1");
  if (layers.empty()) throw ConfigError("mlp: at least one layer required");
  for (const LayerSpec& l : layers) {
    if (l.width < 1) throw ConfigError("mlp: layer widths must be >= 1");
    if (l.activation == Activation::ScaledSigmoid && !(l.scale > 0)) {
      throw ConfigError("mlp: scaled-sigmoid scale must be positive");
    }
  }
}

Mlp::Mlp(std::string name, MlpSpec spec, Rng& rng) : name_(std::move(name)), spec_(std::move(spec)) {
  spec_.validate();
  int in = spec_.input_width;
  for (std::size_t k = 0; k < spec_.layers.size(); ++k) {
    const LayerSpec& l = spec_.layers[k];
    const std::string prefix = name_ + ".l" + std::to_string(k);
    const double stddev = l.activation == Activation::Relu ? std::sqrt(2.0 / in) : std::sqrt(2.0 / (in + l.width));
    std::normal_distribution<double> init(0.0, stddev);
    Matrix w(l.width, in);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = init(rng);
    }
    DenseLayer layer{Parameter(prefix + ".weight", std::move(w)), std::nullopt};
    if (l.bias && !l.batch_norm) layer.bias.emplace(prefix + ".bias", Matrix::Zero(1, l.width));
    dense_.push_back(std::move(layer));
    if (l.batch_norm) {
      BatchNormLayer bn{Parameter(prefix + ".bn.gamma", Matrix::Ones(1, l.width)),
                        Parameter(prefix + ".bn.beta", Matrix::Zero(1, l.width)), BatchNormState{}};
      bn.state.running_mean = Matrix::Zero(1, l.width);
      bn.state.running_var = Matrix::Ones(1, l.width);
      norms_.emplace_back(std::move(bn));
    } else {
      norms_.emplace_back(std::nullopt);
    }
    in = l.width;
  }
}

Var Mlp::forward(Tape& tape, Var input, Mode mode) {
  if (input.cols() != spec_.input_width) {
    throw ConfigError(name_ + ": input width " + std::to_string(input.cols()) + " != expected " +
                      std::to_string(spec_.input_width));
  }
  Var h = input;
  relu_margin_ = std::numeric_limits<double>::infinity();
  relu_pattern_ = 14695981039346656037ULL;
  for (std::size_t k = 0; k < dense_.size(); ++k) {
    const LayerSpec& l = spec_.layers[k];
    DenseLayer& d = dense_[k];
    h = d.bias ? affine(h, tape.parameter(d.weight), tape.parameter(*d.bias)) : linear(h, tape.parameter(d.weight));
    if (norms_[k]) {
      BatchNormLayer& bn = *norms_[k];
      h = batch_norm(h, tape.parameter(bn.gamma), tape.parameter(bn.beta), bn.state, mode);
    }
    switch (l.activation) {
      case Activation::Relu:
        if (track_relu_ && h.value().size() > 0) {
          relu_margin_ = std::min(relu_margin_, h.value().cwiseAbs().minCoeff());
          for (Eigen::Index i = 0; i < h.value().size(); ++i) {
            relu_pattern_ = (relu_pattern_ ^ (h.value().data()[i] > 0 ? 1U : 0U)) * 1099511628211ULL;
          }
        }
        h = relu(h);
        break;
      case Activation::Sigmoid: h = sigmoid(h); break;
      case Activation::Tanh: h = tanh(h); break;
      case Activation::Linear: break;
      case Activation::ScaledSigmoid: h = scaled_sigmoid(h, l.scale); break;
    }
    if (!h.value().allFinite()) {
      throw NumericError(name_ + ".l" + std::to_string(k) + ": non-finite activation");
    }
  }
  return h;
}

Matrix Mlp::evaluate(const Matrix& input) {
  Tape tape(false);
  return forward(tape, tape.constant(input), Mode::Eval).value();
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> out;
  for (std::size_t k = 0; k < dense_.size(); ++k) {
    out.push_back(&dense_[k].weight);
    if (dense_[k].bias) out.push_back(&*dense_[k].bias);
    if (norms_[k]) {
      out.push_back(&norms_[k]->gamma);
      out.push_back(&norms_[k]->beta);
    }
  }
  return out;
}

std::vector<NamedTensor> Mlp::state() {
  std::vector<NamedTensor> out;
  for (Parameter* p : parameters()) out.push_back({p->name, &p->value});
  for (std::size_t k = 0; k < norms_.size(); ++k) {
    if (!norms_[k]) continue;
    const std::string prefix = name_ + ".l" + std::to_string(k) + ".bn.";
    out.push_back({prefix + "running_mean", &norms_[k]->state.running_mean});
    out.push_back({prefix + "running_var", &norms_[k]->state.running_var});
  }
  return out;
}

}  // namespace cecil::ad
