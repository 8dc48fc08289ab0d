#pragma once

// Reverse-mode automatic differentiation over dense batched matrices.
//
// Every value is a (batch x features) matrix. A Tape records operations in
// evaluation order, so walking it backwards is a valid topological order.
// Operations are free functions taking and returning Var handles; custom
// operations register a forward value together with a backward rule.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cecil::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;  // empty until the first backward pass reaches this parameter

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {}

  void zero_grad() {
    if (grad.size() != 0) grad.setZero();
  }
  [[nodiscard]] bool has_grad() const { return grad.size() != 0; }
};

enum class Mode { Train, Eval };

class Tape;

/// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;

  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  [[nodiscard]] Tape& tape() const;
  [[nodiscard]] std::size_t id() const { return id_; }
  [[nodiscard]] bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// What a backward rule sees. `in_grads[k]` is null when input k needs no gradient;
/// otherwise it is a zero-initialised (or partially accumulated) buffer to add into.
struct BackwardContext {
  const Matrix& out_value;
  const Matrix& out_grad;
  std::span<const Matrix* const> in_values;
  std::span<Matrix* const> in_grads;
};

using BackwardRule = std::function<void(const BackwardContext&)>;

class Tape {
 public:
  /// A non-recording tape keeps values but drops backward rules (eval-mode inference).
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  [[nodiscard]] bool recording() const { return recording_; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  Var constant(Matrix value);
  Var parameter(Parameter& p);

  /// Records an operation with an explicit forward value and backward rule.
  Var custom(std::span<const Var> inputs, Matrix value, BackwardRule rule);
  Var custom(std::initializer_list<Var> inputs, Matrix value, BackwardRule rule) {
    return custom(std::span<const Var>(inputs.begin(), inputs.size()), std::move(value), std::move(rule));
  }

  /// Back-propagates from a 1x1 value, accumulating into every reachable Parameter::grad.
  void backward(Var loss);

  [[nodiscard]] const Matrix& value_of(std::size_t id) const { return nodes_[id].value; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> inputs;
    BackwardRule rule;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  void check_owner(const Var& v) const;

  std::deque<Node> nodes_;  // deque: values stay addressable while the tape grows
  bool recording_;
};

// ---- operations -----------------------------------------------------------

/// x * w^T + b, with w (out x in) and b (1 x out) broadcast over the batch.
Var affine(Var x, Var w, Var b);
/// x * w^T.
Var linear(Var x, Var w);

Var relu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
/// scale * sigmoid(x); output in (0, scale).
Var scaled_sigmoid(Var x, double scale);
Var scale(Var x, double factor);

/// Elementwise sum of equally-shaped values.
Var sum(std::span<const Var> xs);
Var add(Var a, Var b);
/// Column-wise concatenation (feature axis).
Var concat_cols(std::span<const Var> xs);
Var slice_cols(Var x, Eigen::Index start, Eigen::Index count);

/// x + c with c a constant of the same shape (gradient passes unchanged).
Var add_constant(Var x, const Matrix& c);
/// x .* c with c a constant of the same shape.
Var mul_constant(Var x, const Matrix& c);

/// Mean of all entries, as a 1x1 value.
Var mean(Var x);

/// Forward value replaced by `forward_value`, backward is the identity.
Var straight_through(Var x, Matrix forward_value);

/// Running statistics and hyper-parameters of a batch-normalisation layer.
struct BatchNormState {
  Matrix running_mean;  // 1 x width
  Matrix running_var;   // 1 x width
  double momentum = 0.99;
  double epsilon = 1e-5;
};

/// Per-feature normalisation. Train mode normalises with batch statistics and
/// updates the running averages; eval mode uses the running averages only.
Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode);

}  // namespace cecil::ad
