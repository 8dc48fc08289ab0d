#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "cecil/errors.hpp"
#include "cecil/fronthaul.hpp"

using namespace cecil;
using namespace cecil::fronthaul;

namespace {

MessageVector vec(std::initializer_list<double> v) {
  MessageVector x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double e : v) x(k++) = e;
  return x;
}

}  // namespace

TEST_CASE("resource plans") {
  const auto oma = ResourcePlan::oma(5, 25, 5);
  CHECK(oma.mode() == AccessMode::Oma);
  CHECK(oma.total() == 30);
  CHECK(oma.cloud_input_width() == 25);
  for (int i = 0; i < 5; ++i) {
    CHECK(oma.uplink_width(i) == 5);
    CHECK(oma.downlink_width(i) == 1);
    CHECK(oma.downlink_offset(i) == i);
  }
  const auto uneven = ResourcePlan::oma(3, 7, 4);
  CHECK(uneven.uplink_split() == std::vector<int>{3, 2, 2});
  CHECK(uneven.downlink_split() == std::vector<int>{2, 1, 1});
  const auto noma = ResourcePlan::noma(5, 15, 5);
  CHECK(noma.cloud_input_width() == 15);
  for (int i = 0; i < 5; ++i) {
    CHECK(noma.uplink_width(i) == 15);
    CHECK(noma.downlink_width(i) == 5);
  }
  CHECK_THROWS_AS(ResourcePlan::oma(5, 4, 5), ConfigError);
  CHECK_THROWS_AS(ResourcePlan::noma(5, 0, 5), ConfigError);
  CHECK_THROWS_AS(noma.uplink_width(5), ConfigError);
}

TEST_CASE("channel models: validation and descriptors") {
  CHECK_THROWS_AS(validate(AdditiveNoise{-1}), ConfigError);
  CHECK_THROWS_AS(validate(AsymmetricNoisy{1, 0.0, 1}), ConfigError);
  CHECK_THROWS_AS(validate(AsymmetricNoisy{1, 0.5, 0.4}), ConfigError);
  CHECK_THROWS_AS(validate(Quantized{1}), ConfigError);
  CHECK(noise_variance_from_snr_db(0) == doctest::Approx(1.0));
  CHECK(noise_variance_from_snr_db(10) == doctest::Approx(0.1));
  for (const FronthaulModel& m :
       {FronthaulModel(Perfect{}), FronthaulModel(AdditiveNoise{noise_variance_from_snr_db(15)}),
        FronthaulModel(AsymmetricNoisy{noise_variance_from_snr_db(5)}), FronthaulModel(Quantized{4}),
        FronthaulModel(Quantized{8, Rounding::Nearest})}) {
    const FronthaulModel back = parse_fronthaul_model(describe(m));
    CHECK(describe(back) == describe(m));
  }
  CHECK(describe(Quantized{16}) == "B=4");
  CHECK(describe(AdditiveNoise{1.0}) == "snr=0dB");
  CHECK_THROWS_AS(parse_fronthaul_model("snr=abc"), ConfigError);
  CHECK_THROWS_AS(parse_fronthaul_model("B=1.5"), ConfigError);
  CHECK_THROWS_AS(parse_fronthaul_model("fiber"), ConfigError);
}

TEST_CASE("apply_channel examples") {
  Rng rng(1);
  const MessageVector v = vec({0.5, -1, 3});
  CHECK(apply_channel(v, Perfect{}, rng) == v);
  CHECK(apply_channel(v, AdditiveNoise{0.0}, rng) == v);
  CHECK(apply_channel(v, Quantized{4}, rng) == v);
  const MessageVector g = apply_channel(vec({1, 1, 1}), AsymmetricNoisy{0.0}, rng);
  CHECK((g.array() >= 0.1).all());
  CHECK((g.array() <= 1.0).all());
}

TEST_CASE("apply_channel: unit-variance noise moments") {
  Rng rng(77);
  const int draws = 1000000;
  double s = 0, s2 = 0;
  const MessageVector zero = MessageVector::Zero(1);
  for (int k = 0; k < draws; ++k) {
    const double e = apply_channel(zero, AdditiveNoise{1.0}, rng)(0);
    s += e;
    s2 += e * e;
  }
  const double mean = s / draws;
  CHECK(std::abs(s2 / draws - mean * mean - 1.0) < 0.01);
}

TEST_CASE("uplink_combine examples") {
  Rng rng(1);
  const std::vector<MessageVector> oma_msgs{vec({1}), vec({2})};
  CHECK(uplink_combine(oma_msgs, ResourcePlan::oma(2, 2, 2), Perfect{}, rng) == vec({1, 2}));
  const std::vector<MessageVector> noma_msgs{vec({1, 0}), vec({2, 5})};
  CHECK(uplink_combine(noma_msgs, ResourcePlan::noma(2, 2, 1), Perfect{}, rng) == vec({3, 5}));
  const std::vector<MessageVector> wrong{vec({1}), vec({2, 5})};
  CHECK_THROWS_AS(uplink_combine(wrong, ResourcePlan::noma(2, 2, 1), Perfect{}, rng), ConfigError);
}

TEST_CASE("uplink_combine: NOMA is invariant to EN permutation") {
  Rng rng(3);
  std::normal_distribution<double> nd;
  std::vector<MessageVector> msgs(4, MessageVector(3));
  for (auto& m : msgs) {
    for (Eigen::Index k = 0; k < 3; ++k) m(k) = nd(rng);
  }
  const auto plan = ResourcePlan::noma(4, 3, 2);
  const MessageVector base = uplink_combine(msgs, plan, Perfect{}, rng);
  std::vector<int> order{0, 1, 2, 3};
  while (std::next_permutation(order.begin(), order.end())) {
    std::vector<MessageVector> shuffled;
    for (int k : order) shuffled.push_back(msgs[k]);
    CHECK((uplink_combine(shuffled, plan, Perfect{}, rng) - base).cwiseAbs().maxCoeff() < 1e-12);
  }
  // With noise, equal seeds give equal outputs regardless of order.
  Rng r1(9), r2(9);
  std::vector<MessageVector> rev(msgs.rbegin(), msgs.rend());
  CHECK((uplink_combine(msgs, plan, AdditiveNoise{0.5}, r1) - uplink_combine(rev, plan, AdditiveNoise{0.5}, r2))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
}

TEST_CASE("uplink_combine: NOMA adds a single receiver noise draw") {
  Rng rng(31);
  const auto plan = ResourcePlan::noma(5, 1, 1);
  const std::vector<MessageVector> zeros(5, MessageVector::Zero(1));
  const int draws = 200000;
  double s2 = 0;
  for (int k = 0; k < draws; ++k) {
    const double y = uplink_combine(zeros, plan, AdditiveNoise{1.0}, rng)(0);
    s2 += y * y;
  }
  // Per-transmitter noise would give variance 5.
  CHECK(std::abs(s2 / draws - 1.0) < 0.02);
}

TEST_CASE("downlink_dispatch examples") {
  Rng rng(2);
  const auto oma = ResourcePlan::oma({1, 1}, {1, 2});
  CHECK(downlink_dispatch(vec({7, 8, 9}), oma, Perfect{}, rng, 1) == vec({8, 9}));
  CHECK(downlink_dispatch(vec({7, 8, 9}), oma, Perfect{}, rng, 0) == vec({7}));
  const auto noma = ResourcePlan::noma(3, 2, 3);
  for (int i = 0; i < 3; ++i) CHECK(downlink_dispatch(vec({7, 8, 9}), noma, Perfect{}, rng, i) == vec({7, 8, 9}));
  const MessageVector a = downlink_dispatch(vec({7, 8, 9}), noma, AdditiveNoise{0.1}, rng, 0);
  const MessageVector b = downlink_dispatch(vec({7, 8, 9}), noma, AdditiveNoise{0.1}, rng, 1);
  CHECK(a != b);
  CHECK_THROWS_AS(downlink_dispatch(vec({7, 8}), noma, Perfect{}, rng, 0), ConfigError);
  CHECK_THROWS_AS(downlink_dispatch(vec({7, 8, 9}), noma, Perfect{}, rng, 3), ConfigError);
}

TEST_CASE("quantize: deterministic integer inputs and top level") {
  Rng rng(4);
  for (int k = 0; k < 1000; ++k) {
    CHECK(quantize(2.0, 3, rng) == 2);
    CHECK(quantize(2.0, 5, rng) == 2);
    CHECK(quantize(0.0, 2, rng) == 0);
    CHECK(quantize(1.0, 2, rng) == 1);
  }
  const std::vector<int> q = quantize_vector(vec({0, 1, 3}), 4, rng);
  CHECK(q == std::vector<int>{0, 1, 3});
  for (int k = 0; k < 1000; ++k) CHECK(quantize_vector(vec({0.5, 2.0}), 3, rng)[1] == 2);
}

TEST_CASE("quantize: probabilities for m = 1.3, C = 4") {
  Rng rng(5);
  const int draws = 100000;
  int ones = 0, twos = 0;
  double sum = 0;
  for (int k = 0; k < draws; ++k) {
    const int q = quantize(1.3, 4, rng);
    ones += q == 1;
    twos += q == 2;
    sum += q;
  }
  CHECK(ones + twos == draws);
  const double p2 = static_cast<double>(twos) / draws;
  CHECK(std::abs(p2 - 0.3) < 4 * std::sqrt(0.21 / draws));
  CHECK(std::abs(sum / draws - 1.3) < 3 * std::sqrt(0.21 / draws));
}

TEST_CASE("quantize: unbiased and supported on the neighbouring levels") {
  Rng rng(6);
  const int levels = 4;
  const int draws = 100000;
  for (int g = 0; g <= 30; ++g) {
    const double m = 0.1 * g;
    double sum = 0;
    bool supported = true;
    for (int k = 0; k < draws; ++k) {
      const int q = quantize(m, levels, rng);
      supported = supported && q >= static_cast<int>(std::floor(m)) && q <= static_cast<int>(std::ceil(m - 1e-12));
      sum += q;
    }
    CHECK(supported);
    const double frac = m - std::floor(m);
    const double se = std::sqrt(std::max(frac * (1 - frac), 1e-12) / draws);
    CHECK(std::abs(sum / draws - m) <= 4 * se + 1e-12);
  }
}

TEST_CASE("quantize_vector: per-element levels and empirical means") {
  Rng rng(7);
  const MessageVector m = vec({0.25, 1.5, 6.75});
  const std::vector<int> levels{2, 3, 8};
  Eigen::Vector3d acc = Eigen::Vector3d::Zero();
  const int draws = 50000;
  for (int k = 0; k < draws; ++k) {
    const auto q = quantize_vector(m, levels, rng);
    for (int e = 0; e < 3; ++e) acc(e) += q[e];
  }
  acc /= draws;
  for (int e = 0; e < 3; ++e) CHECK(std::abs(acc(e) - m(e)) < 0.02);
  const std::vector<int> short_levels{2};
  CHECK_THROWS_AS(quantize_vector(m, short_levels, rng), ConfigError);
}

TEST_CASE("quantize: out-of-range inputs are clamped") {
  Rng rng(8);
  CHECK(quantize(-1e-12, 4, rng) == 0);
  CHECK(quantize(3 + 1e-12, 4, rng) == 3);
  CHECK(quantize(-5.0, 4, rng) == 0);
  CHECK(quantize(9.0, 4, rng) == 3);
  CHECK_THROWS_AS(quantize(0.5, 1, rng), ConfigError);
  CHECK(round_to_level(1.49, 4) == 1);
  CHECK(round_to_level(1.51, 4) == 2);
}

TEST_CASE("batched quantize: straight-through Jacobian is the identity") {
  Rng rng(9);
  ad::Parameter p("m", Matrix::Constant(3, 4, 1.3));
  ad::Tape t;
  ad::Var q = quantize(t.parameter(p), 4, Rounding::Stochastic, rng);
  CHECK(((q.value().array() == 1.0) || (q.value().array() == 2.0)).all());
  Matrix w(3, 4);
  for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = 0.5 + k;
  t.backward(ad::mean(ad::mul_constant(q, w)));
  CHECK(p.grad.isApprox(w / 12.0));
}

TEST_CASE("batched ops agree with single-vector ops on a batch of one") {
  const auto plan = ResourcePlan::noma(3, 2, 2);
  const FronthaulModel model = AsymmetricNoisy{0.2};
  std::vector<MessageVector> msgs{vec({1, 2}), vec({-1, 0.5}), vec({0.3, 0.3})};
  Rng r1(10), r2(10);
  const MessageVector single = uplink_combine(msgs, plan, model, r1);
  ad::Tape t(false);
  std::vector<ad::Var> vars;
  for (const auto& m : msgs) vars.push_back(t.constant(m.transpose()));
  const Matrix batched = uplink_combine(vars, plan, model, r2).value();
  CHECK((batched.row(0).transpose() - single).cwiseAbs().maxCoeff() < 1e-12);

  Rng r3(11), r4(11);
  const MessageVector m = vec({0.2, 1.7, 2.5});
  const std::vector<int> qs = quantize_vector(m, 4, r3);
  const Matrix qb = quantize(t.constant(m.transpose()), 4, Rounding::Stochastic, r4).value();
  for (int k = 0; k < 3; ++k) CHECK(qb(0, k) == qs[k]);
}

TEST_CASE("draw trace replays quantisation offsets") {
  Rng rng(12);
  DrawTrace trace;
  ad::Tape t(false);
  const Matrix m = Matrix::Constant(2, 3, 0.6);
  trace.start_recording();
  const Matrix q1 = quantize(t.constant(m), 2, Rounding::Stochastic, rng, &trace).value();
  trace.start_replay();
  const Matrix shifted = m.array() + 0.01;
  const Matrix q2 = quantize(t.constant(shifted), 2, Rounding::Stochastic, rng, &trace).value();
  CHECK((q2 - (q1.array() + 0.01).matrix()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(quantize(t.constant(m), 2, Rounding::Stochastic, rng, &trace), UsageError);
}
