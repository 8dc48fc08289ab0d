#include "doctest.h"

#include <cmath>

#include "cecil/adam.hpp"
#include "cecil/autodiff.hpp"
#include "cecil/errors.hpp"
#include "cecil/gradcheck.hpp"
#include "cecil/mlp.hpp"
#include "cecil/serialize.hpp"

#include <sstream>

using namespace cecil;
using namespace cecil::ad;

namespace {

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) m(0, k++) = x;
  return m;
}

Mlp single_layer(Activation act) {
  Rng rng(1);
  MlpSpec spec;
  spec.input_width = 2;
  spec.layers.push_back({2, act, 1.0, false});
  Mlp net("one", spec, rng);
  net.dense()[0].weight.value = Matrix::Identity(2, 2);
  net.dense()[0].bias->value.setZero();
  return net;
}

// Independent evaluation of a batch-norm-free MLP, one sample and one unit at a time.
Matrix loop_forward(Mlp& net, const Matrix& x) {
  Matrix out(x.rows(), net.output_width());
  for (Eigen::Index b = 0; b < x.rows(); ++b) {
    std::vector<double> h(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) h[c] = x(b, c);
    for (std::size_t k = 0; k < net.dense().size(); ++k) {
      const auto& layer = net.spec().layers[k];
      const Matrix& w = net.dense()[k].weight.value;
      const Matrix& bias = net.dense()[k].bias->value;
      std::vector<double> next(layer.width);
      for (int o = 0; o < layer.width; ++o) {
        double z = bias(0, o);
        for (std::size_t i = 0; i < h.size(); ++i) z += w(o, static_cast<Eigen::Index>(i)) * h[i];
        switch (layer.activation) {
          case Activation::Relu: z = z > 0 ? z : 0; break;
          case Activation::Sigmoid: z = 1 / (1 + std::exp(-z)); break;
          case Activation::Tanh: z = std::tanh(z); break;
          case Activation::Linear: break;
          case Activation::ScaledSigmoid: z = layer.scale / (1 + std::exp(-z)); break;
        }
        next[o] = z;
      }
      h = next;
    }
    for (std::size_t o = 0; o < h.size(); ++o) out(b, static_cast<Eigen::Index>(o)) = h[o];
  }
  return out;
}

Matrix gaussian(Eigen::Index r, Eigen::Index c, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Rejects inputs whose relu pre-activations come within 1e-3 of the kink.
bool away_from_kinks(Mlp& net, const Matrix& x) {
  Matrix h = x;
  for (std::size_t k = 0; k < net.dense().size(); ++k) {
    Matrix z = h * net.dense()[k].weight.value.transpose();
    if (net.dense()[k].bias) z.rowwise() += net.dense()[k].bias->value.row(0);
    if (net.spec().layers[k].activation == Activation::Relu) {
      if ((z.array().abs() < 1e-3).any()) return false;
      h = z.cwiseMax(0.0);
    } else {
      h = z;
    }
  }
  return true;
}

// Full-batch train-mode loss that leaves running statistics untouched between calls.
// Loss is mean(y .* weights), weights fixed.
LossFn frozen_stats_loss(Mlp& net, const Matrix& x, const Matrix& weights) {
  return [&net, x, weights](Tape& t) {
    std::vector<BatchNormState> saved;
    for (auto& bn : net.norms()) {
      if (bn) saved.push_back(bn->state);
    }
    Var y = net.forward(t, t.constant(x), Mode::Train);
    std::size_t k = 0;
    for (auto& bn : net.norms()) {
      if (bn) bn->state = saved[k++];
    }
    return mean(mul_constant(y, weights));
  };
}

}  // namespace

TEST_CASE("forward: identity linear layer") {
  Mlp net = single_layer(Activation::Linear);
  CHECK(net.evaluate(row({1, 2})) == row({1, 2}));
}

TEST_CASE("forward: identity relu layer clips negatives") {
  Mlp net = single_layer(Activation::Relu);
  CHECK(net.evaluate(row({-1, 2})) == row({0, 2}));
}

TEST_CASE("forward: matches loop evaluation for every activation") {
  Rng rng(7);
  for (Activation head : {Activation::Linear, Activation::Sigmoid, Activation::Tanh, Activation::ScaledSigmoid}) {
    Mlp net("net", MlpSpec::stack(4, 6, 2, 3, head, 10.0, false), rng);
    const Matrix x = gaussian(5, 4, rng);
    const Matrix a = net.evaluate(x);
    const Matrix b = loop_forward(net, x);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("forward: dimension mismatch is a config error") {
  Rng rng(1);
  Mlp net("net", MlpSpec::stack(3, 4, 2, 1, Activation::Linear), rng);
  CHECK_THROWS_AS(net.evaluate(Matrix::Zero(2, 4)), ConfigError);
}

TEST_CASE("forward: non-finite activation names the layer") {
  Rng rng(1);
  Mlp net("probe", MlpSpec::stack(2, 3, 2, 1, Activation::Linear, 1.0, false), rng);
  Matrix x = Matrix::Zero(2, 2);
  x(0, 0) = std::numeric_limits<double>::infinity();
  try {
    net.evaluate(x);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("probe.l0") != std::string::npos);
  }
}

TEST_CASE("backward: linear map gradient is ones times input") {
  Parameter w("w", Matrix::Zero(1, 3));
  Tape t;
  const Matrix u = row({1.5, -2, 4});
  Var y = linear(t.constant(u), t.parameter(w));
  t.backward(mean(y));
  CHECK(w.grad.isApprox(u));
}

TEST_CASE("backward: sigmoid slope at zero is a quarter") {
  Parameter p("p", Matrix::Zero(1, 1));
  Tape t;
  t.backward(mean(sigmoid(t.parameter(p))));
  CHECK(p.grad(0, 0) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("backward: usage errors") {
  Tape empty;
  Parameter p("p", Matrix::Ones(1, 1));
  {
    Tape t;
    Var c = t.constant(Matrix::Ones(1, 1));
    CHECK_THROWS_AS(t.backward(c), UsageError);
  }
  {
    Tape t(false);
    Var y = t.parameter(p);
    CHECK_THROWS_AS(t.backward(y), UsageError);
  }
  {
    Tape t;
    Var y = t.parameter(p);
    CHECK_THROWS_AS(empty.backward(y), UsageError);
  }
}

TEST_CASE("grad_check: linear net") {
  Rng rng(3);
  MlpSpec spec;
  spec.input_width = 3;
  spec.layers = {{4, Activation::Linear, 1, false}, {2, Activation::Linear, 1, false}};
  Mlp lin("lin", spec, rng);
  for (auto& d : lin.dense()) d.bias->value = gaussian(1, d.bias->value.cols(), rng);
  const Matrix x = gaussian(6, 3, rng);
  const Matrix target = gaussian(6, 2, rng);
  auto params = lin.parameters();
  // The loss is linear in each single entry, so a wide step is exact and avoids roundoff.
  CHECK(grad_check(params, frozen_stats_loss(lin, x, target), 1e-2).max_relative_error < 1e-9);
}

TEST_CASE("grad_check: relu net away from kinks") {
  Rng rng(11);
  Mlp net("relu", MlpSpec::stack(4, 8, 3, 2, Activation::Tanh, 1.0, false), rng);
  for (auto& d : net.dense()) d.bias->value = 0.1 * gaussian(1, d.bias->value.cols(), rng);
  Matrix x;
  do {
    x = gaussian(5, 4, rng);
  } while (!away_from_kinks(net, x));
  auto params = net.parameters();
  CHECK(grad_check(params, frozen_stats_loss(net, x, gaussian(5, 2, rng))).max_relative_error < 1e-5);
}

TEST_CASE("grad_check: every head activation") {
  Rng rng(5);
  for (Activation head : {Activation::Sigmoid, Activation::Tanh, Activation::ScaledSigmoid, Activation::Linear}) {
    Mlp net("h", MlpSpec::stack(3, 5, 2, 2, head, 4.0, false), rng);
    Matrix x;
    do {
      x = gaussian(4, 3, rng);
    } while (!away_from_kinks(net, x));
    auto params = net.parameters();
    CHECK(grad_check(params, frozen_stats_loss(net, x, gaussian(4, 2, rng))).max_relative_error < 1e-5);
  }
}

TEST_CASE("grad_check: batch-normalised net in train mode") {
  Rng rng(21);
  Mlp net("bn", MlpSpec::stack(4, 6, 3, 2, Activation::Sigmoid, 1.0, true), rng);
  for (auto& bn : net.norms()) {
    if (bn) {
      bn->gamma.value = Matrix::Ones(1, bn->gamma.value.cols()) + 0.3 * gaussian(1, bn->gamma.value.cols(), rng);
      bn->beta.value = 0.3 * gaussian(1, bn->beta.value.cols(), rng);
    }
  }
  const Matrix x = gaussian(8, 4, rng);
  auto params = net.parameters();
  const GradCheckResult r = grad_check(params, frozen_stats_loss(net, x, gaussian(8, 2, rng)));
  CHECK(r.entries_checked > 0);
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("batch norm: running statistics and eval idempotence") {
  Rng rng(2);
  Mlp net("bn", MlpSpec::stack(3, 4, 2, 1, Activation::Linear, 1.0, true), rng);
  const Matrix x = gaussian(16, 3, rng);
  {
    Tape t;
    net.forward(t, t.constant(x), Mode::Train);
  }
  const auto& st = net.norms()[0]->state;
  CHECK((st.running_var.array() >= 0).all());
  CHECK_FALSE(st.running_mean.isZero());
  const Matrix a = net.evaluate(x);
  const Matrix b = net.evaluate(x);
  CHECK(a == b);
  CHECK(net.norms()[0]->state.running_mean == st.running_mean);
}

TEST_CASE("batch norm: train mode needs two samples") {
  Rng rng(2);
  Mlp net("bn", MlpSpec::stack(3, 4, 2, 1, Activation::Linear, 1.0, true), rng);
  Tape t;
  CHECK_THROWS_AS(net.forward(t, t.constant(Matrix::Ones(1, 3)), Mode::Train), ConfigError);
}

TEST_CASE("scaled sigmoid stays strictly inside its range") {
  Tape t(false);
  Matrix x(1, 5);
  x << -1e3, -30, 0, 30, 1e3;
  const Matrix y = scaled_sigmoid(t.constant(x), 10.0).value();
  CHECK((y.array() >= 0).all());
  CHECK((y.array() <= 10).all());
  Matrix z(1, 3);
  z << -20, 0, 20;
  const Matrix w = scaled_sigmoid(t.constant(z), 10.0).value();
  CHECK((w.array() > 0).all());
  CHECK((w.array() < 10).all());
}

TEST_CASE("straight-through: forward replaced, backward identity") {
  Parameter p("p", row({0.2, 1.7}));
  Tape t;
  Var q = straight_through(t.parameter(p), row({0, 2}));
  CHECK(q.value() == row({0, 2}));
  t.backward(mean(mul_constant(q, row({3, -1}))));
  CHECK(p.grad.isApprox(row({1.5, -0.5})));
}

TEST_CASE("tape ops: concat, slice, sum") {
  Parameter a("a", row({1, 2}));
  Parameter b("b", row({3}));
  Tape t;
  Var va = t.parameter(a);
  Var vb = t.parameter(b);
  const std::vector<Var> parts{va, vb};
  Var c = concat_cols(parts);
  CHECK(c.value() == row({1, 2, 3}));
  Var s = slice_cols(c, 1, 2);
  CHECK(s.value() == row({2, 3}));
  const std::vector<Var> terms{s, s};
  Var total = sum(terms);
  t.backward(mean(total));
  CHECK(a.grad.isApprox(row({0, 1})));
  CHECK(b.grad.isApprox(row({1})));
}

TEST_CASE("adam: zero gradient leaves parameters and advances the step") {
  Parameter p("p", row({1, -2}));
  p.grad = Matrix::Zero(1, 2);
  AdamState st(AdamConfig{0.1});
  std::vector<Parameter*> ps{&p};
  adam_step(ps, st);
  CHECK(p.value == row({1, -2}));
  CHECK(st.step == 1);
}

TEST_CASE("adam: first step moves each entry by lr against the gradient") {
  Parameter p("p", row({1, -2, 0.5}));
  p.grad = row({0.3, -4, 1e-3});
  AdamState st(AdamConfig{0.01});
  std::vector<Parameter*> ps{&p};
  adam_step(ps, st);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
  const Matrix g = row({0.3, -4, 1e-3});
  for (Eigen::Index k = 0; k < 3; ++k) {
    const double expected = -0.01 * g(0, k) / (std::abs(g(0, k)) + 1e-8);
    CHECK(p.value(0, k) - row({1, -2, 0.5})(0, k) == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("adam: shape mismatch is a usage error") {
  Parameter p("p", row({1, 2}));
  p.grad = row({1, 1});
  AdamState st;
  std::vector<Parameter*> ps{&p};
  adam_step(ps, st);
  p.value = row({1, 2, 3});
  p.grad = row({1, 1, 1});
  CHECK_THROWS_AS(adam_step(ps, st), UsageError);
}

TEST_CASE("adam: quadratic bowl decreases monotonically after warm-up") {
  Rng rng(4);
  Parameter p("theta", gaussian(1, 6, rng));
  AdamState st(AdamConfig{0.01});
  std::vector<Parameter*> ps{&p};
  std::vector<double> norms;
  for (int k = 0; k < 500; ++k) {
    zero_grad(ps);
    Tape t;
    Var th = t.parameter(p);
    t.backward(mean(mul_constant(th, th.value())));
    adam_step(ps, st);
    norms.push_back(p.value.norm());
  }
  for (std::size_t k = 20; k < 200; ++k) CHECK(norms[k] < norms[k - 1]);
  CHECK(norms.back() < 0.1 * norms.front());
}

TEST_CASE("determinism: equal seeds give bit-identical parameters after training steps") {
  auto run = [] {
    Rng rng(9);
    Mlp net("d", MlpSpec::stack(3, 8, 3, 2, Activation::Tanh), rng);
    AdamState st(AdamConfig{1e-2});
    auto ps = net.parameters();
    for (int k = 0; k < 20; ++k) {
      const Matrix x = gaussian(10, 3, rng);
      zero_grad(ps);
      Tape t;
      Var y = net.forward(t, t.constant(x), Mode::Train);
      t.backward(mean(mul_constant(y, y.value())));
      adam_step(ps, st);
    }
    std::vector<Matrix> out;
    for (auto* p : ps) out.push_back(p->value);
    return out;
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == b[k]);
}

TEST_CASE("serialize: round trip and mismatch detection") {
  Rng rng(6);
  Mlp src("s", MlpSpec::stack(3, 4, 3, 2, Activation::Tanh), rng);
  {
    Tape t;
    src.forward(t, t.constant(gaussian(8, 3, rng)), Mode::Train);
  }
  std::stringstream buf;
  auto st = src.state();
  save_tensors(buf, st);
  Rng other(99);
  Mlp dst("s", MlpSpec::stack(3, 4, 3, 2, Activation::Tanh), other);
  auto dt = dst.state();
  load_tensors(buf, dt);
  for (std::size_t k = 0; k < st.size(); ++k) CHECK(*st[k].value == *dt[k].value);

  std::stringstream buf2;
  save_tensors(buf2, st);
  Mlp wrong("s", MlpSpec::stack(3, 5, 3, 2, Activation::Tanh), other);
  auto wt = wrong.state();
  CHECK_THROWS_AS(load_tensors(buf2, wt), ConfigError);

  std::stringstream bad("NOT-TENSORS 1\n");
  CHECK_THROWS_AS(load_tensors(bad, dt), ConfigError);
}
