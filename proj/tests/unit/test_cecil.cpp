#include "doctest.h"

#include <numeric>

#include "cecil/cecil_model.hpp"
#include "cecil/diagnostics.hpp"
#include "cecil/errors.hpp"
#include "cecil/fran_env.hpp"
#include "cecil/training.hpp"

using namespace cecil;

namespace {

CecilConfig small_config(fronthaul::AccessMode mode, int n, int mu, int md,
                         fronthaul::FronthaulModel channel = fronthaul::Perfect{}) {
  CecilConfig c;
  c.plan = fronthaul::ResourcePlan::make(mode, n, mu, md);
  c.channel = channel;
  c.encoder = {12, 3};
  c.cloud = {16, 3};
  c.decision = {12, 3};
  c.seed = 3;
  return c;
}

// EN p[i] receives the observation EN i had: a'(j, p[i]) = a(j, i).
Matrix permute_observations(const Matrix& gains, int n, const std::vector<int>& p) {
  Matrix out(gains.rows(), gains.cols());
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) out.col(j * n + p[i]) = gains.col(j * n + i);
  }
  return out;
}

class ZeroPolicy final : public PowerPolicy {
 public:
  explicit ZeroPolicy(int n) : n_(n) {}
  [[nodiscard]] int network_size() const override { return n_; }
  [[nodiscard]] double power_budget() const override { return 10; }
  [[nodiscard]] std::string label() const override { return "zero"; }
  ad::Var forward(ad::Tape& tape, const Matrix& gains, Rng&, ad::Mode) override {
    return tape.constant(Matrix::Zero(gains.rows(), n_));
  }
  std::vector<ad::Parameter*> parameters() override { return {}; }
  std::vector<ad::NamedTensor> state() override { return {}; }

 private:
  int n_;
};

TrainConfig quick_train(int epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batches_per_epoch = 10;
  t.batch_size = 200;
  t.learning_rate = 3e-2;
  t.validation_size = 500;
  t.seed = 11;
  return t;
}

}  // namespace

TEST_CASE("cecil: head policy per channel") {
  CHECK(HeadPolicy::for_channel(fronthaul::Perfect{}).uplink == MessageHead::Linear);
  CHECK(HeadPolicy::for_channel(fronthaul::AdditiveNoise{0.1}).downlink == MessageHead::Tanh);
  const HeadPolicy q = HeadPolicy::for_channel(fronthaul::Quantized{8});
  CHECK(q.uplink == MessageHead::Bounded);
  CHECK(q.bound == 7.0);
  CHECK(parse_message_head("tanh") == MessageHead::Tanh);
  CHECK_THROWS_AS(parse_message_head("relu"), ConfigError);
}

TEST_CASE("cecil: untrained powers lie strictly inside (0, P)") {
  Rng rng(4);
  const Matrix gains = env::sample_gain_matrix(300, 4, rng);
  for (auto mode : {fronthaul::AccessMode::Noma, fronthaul::AccessMode::Oma}) {
    for (const fronthaul::FronthaulModel& ch :
         {fronthaul::FronthaulModel{fronthaul::Perfect{}}, fronthaul::FronthaulModel{fronthaul::AdditiveNoise{1.0}},
          fronthaul::FronthaulModel{fronthaul::Quantized{4}}}) {
      CecilModel m(small_config(mode, 4, 8, 4, ch));
      for (auto md : {ad::Mode::Train, ad::Mode::Eval}) {
        const Matrix x = m.infer(gains, rng, md);
        REQUIRE(x.rows() == 300);
        REQUIRE(x.cols() == 4);
        CHECK(x.allFinite());
        CHECK(x.minCoeff() > 0);
        CHECK(x.maxCoeff() < 10);
      }
    }
  }
}

TEST_CASE("cecil: eval mode is deterministic on perfect links") {
  CecilModel m(small_config(fronthaul::AccessMode::Noma, 3, 6, 3));
  CHECK_FALSE(m.stochastic());
  Rng rng(8);
  const Matrix gains = env::sample_gain_matrix(50, 3, rng);
  Rng r1(1), r2(2);
  CHECK(m.infer(gains, r1) == m.infer(gains, r2));
}

TEST_CASE("cecil: tied NOMA model is permutation equivariant") {
  CecilConfig c = small_config(fronthaul::AccessMode::Noma, 4, 6, 3);
  c.tied = true;
  CecilModel m(c);
  Rng rng(21);
  const Matrix gains = env::sample_gain_matrix(40, 4, rng);
  for (const std::vector<int>& p : {std::vector<int>{2, 0, 3, 1}, std::vector<int>{1, 0, 2, 3}}) {
    const Matrix x = m.infer(gains, rng);
    const Matrix xp = m.infer(permute_observations(gains, 4, p), rng);
    for (int i = 0; i < 4; ++i) CHECK((xp.col(p[i]) - x.col(i)).cwiseAbs().maxCoeff() < 1e-12);
  }

  // Untied networks differ per EN, so the same relabelling changes the decisions.
  CecilModel untied(small_config(fronthaul::AccessMode::Noma, 4, 6, 3));
  const Matrix x = untied.infer(gains, rng);
  const Matrix xp = untied.infer(permute_observations(gains, 4, {2, 0, 3, 1}), rng);
  CHECK((xp.col(2) - x.col(0)).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("cecil: tied OMA needs uniform splits") {
  CecilConfig c = small_config(fronthaul::AccessMode::Oma, 3, 4, 3);
  c.tied = true;
  CHECK_THROWS_AS(CecilModel{c}, ConfigError);
}

TEST_CASE("cecil: network widths follow the plan") {
  CecilModel noma(small_config(fronthaul::AccessMode::Noma, 5, 15, 5));
  CHECK(noma.encoder(0).output_width() == 15);
  CHECK(noma.cloud().input_width() == 15);
  CHECK(noma.cloud().output_width() == 5);
  CHECK(noma.decision(2).input_width() == 10);

  CecilModel oma(small_config(fronthaul::AccessMode::Oma, 3, 7, 4));
  CHECK(oma.encoder(0).output_width() == 3);
  CHECK(oma.encoder(2).output_width() == 2);
  CHECK(oma.cloud().input_width() == 7);
  CHECK(oma.cloud().output_width() == 4);
  CHECK(oma.decision(0).input_width() == 3 + 2);
  CHECK(oma.decision(1).input_width() == 3 + 1);

  Rng rng(1);
  CHECK_THROWS_AS(noma.infer(env::sample_gain_matrix(4, 3, rng), rng), ConfigError);
}

TEST_CASE("cecil: default architecture") {
  CecilConfig c;
  c.plan = fronthaul::ResourcePlan::noma(5, 25, 5);
  CecilModel m(c);
  CHECK(m.encoder(0).dense().size() == 3);
  CHECK(m.cloud().dense().size() == 5);
  CHECK(m.decision(0).dense().size() == 3);
  CHECK(m.cloud().dense()[0].weight.value.rows() == 100);
  CHECK(m.encoder(0).dense()[0].weight.value.rows() == 50);
}

TEST_CASE("cecil: full-pipeline gradient check") {
  for (const auto& c : diagnostics::gradcheck_suite(5)) {
    INFO(c.name);
    CHECK(c.result.max_relative_error < 1e-4);
  }
}

TEST_CASE("train: N=1 learns full power") {
  CecilModel m(small_config(fronthaul::AccessMode::Noma, 1, 1, 1));
  const auto curve = train(m, env::UtilityKind::sum_rate(), quick_train(30));
  Rng rng(5);
  const Matrix test = env::sample_gain_matrix(2000, 1, rng);
  const Matrix x = m.infer(test, rng);
  CHECK(x.mean() >= 0.99 * 10);
  CHECK(curve.best() > curve.validation.front());
}

TEST_CASE("train: curve improves and is reproducible") {
  const auto u = env::UtilityKind::sum_rate();
  TrainConfig cfg = quick_train(4);
  cfg.learning_rate = 3e-3;
  CecilModel a(small_config(fronthaul::AccessMode::Noma, 5, 15, 5));
  CecilModel b(small_config(fronthaul::AccessMode::Noma, 5, 15, 5));
  const auto ca = train(a, u, cfg);
  const auto cb = train(b, u, cfg);
  REQUIRE(ca.validation.size() == 5);
  CHECK(ca.validation == cb.validation);
  CHECK(ca.validation.back() >= ca.validation.front());
  const auto sa = a.state();
  const auto sb = b.state();
  for (std::size_t k = 0; k < sa.size(); ++k) CHECK(*sa[k].value == *sb[k].value);
}

TEST_CASE("train: validation metric matches evaluate on the same batch") {
  TrainConfig cfg = quick_train(2);
  cfg.keep_best = false;
  CecilModel m(small_config(fronthaul::AccessMode::Noma, 3, 6, 3, fronthaul::AdditiveNoise{0.5}));
  const auto u = env::UtilityKind::sum_rate();
  const auto curve = train(m, u, cfg);
  Rng vdata(validation_data_seed(cfg, cfg.epochs));
  Rng vchan(validation_channel_seed(cfg, cfg.epochs));
  const Matrix batch = env::sample_gain_matrix(cfg.validation_size, 3, vdata);
  CHECK(evaluate(m, u, batch, vchan).mean == curve.validation.back());
}

TEST_CASE("train: learning-rate schedule") {
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.learning_rate = 1e-2;
  CHECK(epoch_learning_rate(cfg, 3) == 1e-2);
  cfg.final_learning_rate = 1e-4;
  CHECK(epoch_learning_rate(cfg, 1) == doctest::Approx(1e-2));
  CHECK(epoch_learning_rate(cfg, 3) == doctest::Approx(1e-3));
  CHECK(epoch_learning_rate(cfg, 5) == doctest::Approx(1e-4));
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("evaluate: perfect links repeat exactly, zero power scores zero") {
  CecilModel m(small_config(fronthaul::AccessMode::Oma, 3, 6, 3));
  Rng rng(2);
  const Matrix test = env::sample_gain_matrix(3000, 3, rng);
  const auto u = env::UtilityKind::sum_rate();
  Rng r1(1), r2(99);
  CHECK(evaluate(m, u, test, r1, 1).mean == evaluate(m, u, test, r2, 4).mean);

  ZeroPolicy zero(3);
  for (const auto& kind : {env::UtilityKind::sum_rate(), env::UtilityKind::energy_efficiency()}) {
    const auto r = evaluate(zero, kind, test, rng);
    CHECK(r.mean == 0.0);
    CHECK(r.std_error == 0.0);
  }
}

TEST_CASE("evaluate: draws average stochastic channels") {
  CecilModel m(small_config(fronthaul::AccessMode::Noma, 3, 6, 3, fronthaul::AdditiveNoise{1.0}));
  CHECK(m.stochastic());
  Rng rng(2);
  const Matrix test = env::sample_gain_matrix(200, 3, rng);
  const auto u = env::UtilityKind::sum_rate();
  Rng r1(1), r2(1);
  const auto first = sample_utilities(m, u, test, r1, 1);
  const auto second = sample_utilities(m, u, test, r1, 1);
  CHECK(first != second);
  CHECK(sample_utilities(m, u, test, r2, 2) == (first + second) / 2);
  CHECK_THROWS_AS(sample_utilities(m, u, test, r1, 0), ConfigError);
}

TEST_CASE("cecil: set_channel swaps the inference channel") {
  CecilModel m(small_config(fronthaul::AccessMode::Noma, 3, 6, 3));
  Rng rng(2);
  const Matrix test = env::sample_gain_matrix(100, 3, rng);
  const Matrix clean = m.infer(test, rng);
  m.set_channel(fronthaul::AdditiveNoise{0.0});
  CHECK(m.infer(test, rng) == clean);
  m.set_channel(fronthaul::AdditiveNoise{1.0});
  CHECK(m.infer(test, rng) != clean);
}
