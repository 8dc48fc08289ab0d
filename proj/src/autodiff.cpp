#include "cecil/autodiff.hpp"

#include <cmath>
#include <string>

#include "cecil/errors.hpp"

namespace cecil::ad {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

Tape& common_tape(std::span<const Var> xs, const char* op) {
  if (xs.empty()) throw ConfigError(std::string(op) + ": no inputs");
  Tape& t = xs.front().tape();
  for (const Var& v : xs) {
    if (&v.tape() != &t) throw UsageError(std::string(op) + ": inputs live on different tapes");
  }
  return t;
}

}  // namespace

const Matrix& Var::value() const { return tape().value_of(id_); }

Tape& Var::tape() const {
  if (tape_ == nullptr) throw UsageError("use of an unbound Var");
  return *tape_;
}

void Tape::check_owner(const Var& v) const {
  if (!v.valid() || &v.tape() != this || v.id() >= nodes_.size()) {
    throw UsageError("Var does not belong to this tape");
  }
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& p) {
  Node n;
  n.value = p.value;
  n.param = &p;
  n.needs_grad = recording_;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::custom(std::span<const Var> inputs, Matrix value, BackwardRule rule) {
  Node n;
  n.value = std::move(value);
  if (recording_) {
    n.inputs.reserve(inputs.size());
    for (const Var& v : inputs) {
      check_owner(v);
      n.inputs.push_back(v.id());
      n.needs_grad = n.needs_grad || nodes_[v.id()].needs_grad;
    }
    if (n.needs_grad) n.rule = std::move(rule);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  if (!recording_) throw UsageError("backward on a non-recording tape");
  if (nodes_.empty()) throw UsageError("backward without a recorded forward graph");
  check_owner(loss);
  Node& root = nodes_[loss.id()];
  if (root.value.rows() != 1 || root.value.cols() != 1) {
    throw UsageError("backward needs a scalar loss, got " + shape_str(root.value));
  }
  if (!root.needs_grad) throw UsageError("loss does not depend on any parameter");

  for (Node& n : nodes_) n.grad.resize(0, 0);
  root.grad = Matrix::Ones(1, 1);

  std::vector<const Matrix*> in_values;
  std::vector<Matrix*> in_grads;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.param != nullptr) {
      if (n.param->grad.rows() != n.grad.rows() || n.param->grad.cols() != n.grad.cols()) {
        n.param->grad = Matrix::Zero(n.grad.rows(), n.grad.cols());
      }
      n.param->grad += n.grad;
    } else if (n.rule) {
      in_values.clear();
      in_grads.clear();
      for (std::size_t in : n.inputs) {
        Node& src = nodes_[in];
        in_values.push_back(&src.value);
        if (src.needs_grad) {
          if (src.grad.size() == 0) src.grad = Matrix::Zero(src.value.rows(), src.value.cols());
          in_grads.push_back(&src.grad);
        } else {
          in_grads.push_back(nullptr);
        }
      }
      n.rule(BackwardContext{n.value, n.grad, in_values, in_grads});
    }
    n.grad.resize(0, 0);
  }
}

// ---- operations -----------------------------------------------------------

Var affine(Var x, Var w, Var b) {
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  const Matrix& bv = b.value();
  if (xv.cols() != wv.cols()) {
    throw ConfigError("affine: input width " + std::to_string(xv.cols()) + " does not match weight " +
                      shape_str(wv));
  }
  if (bv.rows() != 1 || bv.cols() != wv.rows()) {
    throw ConfigError("affine: bias " + shape_str(bv) + " does not match weight " + shape_str(wv));
  }
  Matrix out(xv.rows(), wv.rows());
  out.noalias() = xv * wv.transpose();
  out.rowwise() += bv.row(0);
  return x.tape().custom({x, w, b}, std::move(out), [](const BackwardContext& c) {
    const Matrix& g = c.out_grad;
    if (c.in_grads[0]) c.in_grads[0]->noalias() += g * *c.in_values[1];
    if (c.in_grads[1]) c.in_grads[1]->noalias() += g.transpose() * *c.in_values[0];
    if (c.in_grads[2]) *c.in_grads[2] += g.colwise().sum();
  });
}

Var linear(Var x, Var w) {
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  if (xv.cols() != wv.cols()) {
    throw ConfigError("linear: input width " + std::to_string(xv.cols()) + " does not match weight " +
                      shape_str(wv));
  }
  Matrix out(xv.rows(), wv.rows());
  out.noalias() = xv * wv.transpose();
  return x.tape().custom({x, w}, std::move(out), [](const BackwardContext& c) {
    const Matrix& g = c.out_grad;
    if (c.in_grads[0]) c.in_grads[0]->noalias() += g * *c.in_values[1];
    if (c.in_grads[1]) c.in_grads[1]->noalias() += g.transpose() * *c.in_values[0];
  });
}

Var relu(Var x) {
  Matrix out = x.value().cwiseMax(0.0);
  return x.tape().custom({x}, std::move(out), [](const BackwardContext& c) {
    *c.in_grads[0] += (c.out_value.array() > 0.0).select(c.out_grad, 0.0);
  });
}

Var sigmoid(Var x) { return scaled_sigmoid(x, 1.0); }

Var scaled_sigmoid(Var x, double scale) {
  // Numerically stable logistic for large |x|.
  Matrix s = x.value().unaryExpr([](double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  });
  Matrix out = scale * s;
  return x.tape().custom({x}, std::move(out), [s = std::move(s), scale](const BackwardContext& c) {
    *c.in_grads[0] += (scale * c.out_grad.array() * s.array() * (1.0 - s.array())).matrix();
  });
}

Var tanh(Var x) {
  Matrix out = x.value().array().tanh().matrix();
  return x.tape().custom({x}, std::move(out), [](const BackwardContext& c) {
    *c.in_grads[0] += (c.out_grad.array() * (1.0 - c.out_value.array().square())).matrix();
  });
}

Var scale(Var x, double factor) {
  Matrix out = factor * x.value();
  return x.tape().custom({x}, std::move(out),
                         [factor](const BackwardContext& c) { *c.in_grads[0] += factor * c.out_grad; });
}

Var sum(std::span<const Var> xs) {
  Tape& t = common_tape(xs, "sum");
  Matrix out = xs.front().value();
  for (std::size_t k = 1; k < xs.size(); ++k) {
    require_same_shape(out, xs[k].value(), "sum");
    out += xs[k].value();
  }
  return t.custom(xs, std::move(out), [](const BackwardContext& c) {
    for (Matrix* g : c.in_grads) {
      if (g) *g += c.out_grad;
    }
  });
}

Var add(Var a, Var b) {
  const Var xs[] = {a, b};
  return sum(xs);
}

Var concat_cols(std::span<const Var> xs) {
  Tape& t = common_tape(xs, "concat_cols");
  const Eigen::Index rows = xs.front().rows();
  Eigen::Index cols = 0;
  for (const Var& v : xs) {
    if (v.rows() != rows) throw ConfigError("concat_cols: batch size mismatch");
    cols += v.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& v : xs) {
    out.middleCols(at, v.cols()) = v.value();
    at += v.cols();
  }
  return t.custom(xs, std::move(out), [](const BackwardContext& c) {
    Eigen::Index off = 0;
    for (std::size_t k = 0; k < c.in_values.size(); ++k) {
      const Eigen::Index w = c.in_values[k]->cols();
      if (c.in_grads[k]) *c.in_grads[k] += c.out_grad.middleCols(off, w);
      off += w;
    }
  });
}

Var slice_cols(Var x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) {
    throw ConfigError("slice_cols: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                      ") outside width " + std::to_string(x.cols()));
  }
  Matrix out = x.value().middleCols(start, count);
  return x.tape().custom({x}, std::move(out), [start, count](const BackwardContext& c) {
    c.in_grads[0]->middleCols(start, count) += c.out_grad;
  });
}

Var add_constant(Var x, const Matrix& k) {
  require_same_shape(x.value(), k, "add_constant");
  Matrix out = x.value() + k;
  return x.tape().custom({x}, std::move(out), [](const BackwardContext& c) { *c.in_grads[0] += c.out_grad; });
}

Var mul_constant(Var x, const Matrix& k) {
  require_same_shape(x.value(), k, "mul_constant");
  Matrix out = x.value().cwiseProduct(k);
  return x.tape().custom({x}, std::move(out), [k](const BackwardContext& c) {
    *c.in_grads[0] += c.out_grad.cwiseProduct(k);
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw ConfigError("mean of an empty value");
  Matrix out(1, 1);
  out(0, 0) = x.value().sum() / n;
  return x.tape().custom({x}, std::move(out), [n](const BackwardContext& c) {
    c.in_grads[0]->array() += c.out_grad(0, 0) / n;
  });
}

Var straight_through(Var x, Matrix forward_value) {
  require_same_shape(x.value(), forward_value, "straight_through");
  return x.tape().custom({x}, std::move(forward_value),
                         [](const BackwardContext& c) { *c.in_grads[0] += c.out_grad; });
}

Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode) {
  const Matrix& xv = x.value();
  const Eigen::Index width = xv.cols();
  if (gamma.rows() != 1 || gamma.cols() != width || beta.rows() != 1 || beta.cols() != width) {
    throw ConfigError("batch_norm: scale/shift width does not match input width " + std::to_string(width));
  }
  if (state.running_mean.cols() != width || state.running_var.cols() != width) {
    state.running_mean = Matrix::Zero(1, width);
    state.running_var = Matrix::Ones(1, width);
  }
  const RowVector g = gamma.value().row(0);
  const RowVector b = beta.value().row(0);

  if (mode == Mode::Eval) {
    const RowVector inv_std = (state.running_var.row(0).array() + state.epsilon).rsqrt().matrix();
    if (!x.tape().recording()) {
      const RowVector scale = g.cwiseProduct(inv_std);
      const RowVector shift = b - state.running_mean.row(0).cwiseProduct(scale);
      Matrix out(xv.rows(), width);
      for (Eigen::Index j = 0; j < width; ++j) out.col(j) = (xv.col(j).array() * scale(j) + shift(j)).matrix();
      return x.tape().constant(std::move(out));
    }
    Matrix xhat = (xv.rowwise() - RowVector(state.running_mean.row(0))).array().rowwise() * inv_std.array();
    Matrix out = (xhat.array().rowwise() * g.array()).rowwise() + b.array();
    return x.tape().custom({x, gamma, beta}, std::move(out),
                           [xhat = std::move(xhat), inv_std](const BackwardContext& c) {
                             const RowVector gv = c.in_values[1]->row(0);
                             if (c.in_grads[0]) {
                               *c.in_grads[0] += (c.out_grad.array().rowwise() * (gv.array() * inv_std.array())).matrix();
                             }
                             if (c.in_grads[1]) *c.in_grads[1] += c.out_grad.cwiseProduct(xhat).colwise().sum();
                             if (c.in_grads[2]) *c.in_grads[2] += c.out_grad.colwise().sum();
                           });
  }

  const Eigen::Index batch = xv.rows();
  if (batch < 2) throw ConfigError("batch_norm: train mode needs a batch of at least 2");
  const double n = static_cast<double>(batch);
  const RowVector mu = xv.colwise().mean();
  Matrix centered = xv.rowwise() - mu;
  const RowVector var = centered.array().square().colwise().sum() / n;
  const RowVector inv_std = (var.array() + state.epsilon).rsqrt().matrix();
  Matrix xhat = centered.array().rowwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * g.array()).rowwise() + b.array();

  const double keep = state.momentum;
  state.running_mean = keep * state.running_mean + (1.0 - keep) * mu;
  state.running_var = keep * state.running_var + (1.0 - keep) * (var * (n / (n - 1.0)));

  return x.tape().custom({x, gamma, beta}, std::move(out),
                         [xhat = std::move(xhat), inv_std, n](const BackwardContext& c) {
                           const Matrix& go = c.out_grad;
                           if (c.in_grads[1]) *c.in_grads[1] += go.cwiseProduct(xhat).colwise().sum();
                           if (c.in_grads[2]) *c.in_grads[2] += go.colwise().sum();
                           if (c.in_grads[0]) {
                             const RowVector gv = c.in_values[1]->row(0);
                             const Matrix dxhat = go.array().rowwise() * gv.array();
                             const RowVector s1 = dxhat.colwise().sum();
                             const RowVector s2 = dxhat.cwiseProduct(xhat).colwise().sum();
                             Matrix dx = (n * dxhat).rowwise() - s1;
                             dx -= (xhat.array().rowwise() * s2.array()).matrix();
                             *c.in_grads[0] += (dx.array().rowwise() * (inv_std.array() / n)).matrix();
                           }
                         });
}

}  // namespace cecil::ad
