#include "cecil/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "cecil/adam.hpp"
#include "cecil/errors.hpp"

namespace cecil {

namespace {

constexpr std::uint64_t kTrainDataStream = 1;
constexpr std::uint64_t kTrainChannelStream = 2;
constexpr std::uint64_t kValidationDataStream = 1'000'000;
constexpr std::uint64_t kValidationChannelStream = 2'000'000;

}  // namespace

void TrainConfig::validate() const {
  if (final_learning_rate < 0) throw ConfigError("train config: final learning rate must be >= 0");
  if (epochs < 0 || batches_per_epoch < 1 || batch_size < 2 || validation_size < 1 || !(learning_rate > 0)) {
    throw ConfigError("train config: epochs >= 0, batches >= 1, batch size >= 2, validation size >= 1, lr > 0");
  }
}

double epoch_learning_rate(const TrainConfig& cfg, int epoch) {
  if (cfg.final_learning_rate <= 0 || cfg.epochs <= 1) return cfg.learning_rate;
  const double t = static_cast<double>(epoch - 1) / (cfg.epochs - 1);
  return cfg.learning_rate * std::pow(cfg.final_learning_rate / cfg.learning_rate, t);
}

std::uint64_t validation_data_seed(const TrainConfig& cfg, int epoch) {
  return derive_seed(cfg.seed, kValidationDataStream + static_cast<std::uint64_t>(epoch));
}

std::uint64_t validation_channel_seed(const TrainConfig& cfg, int epoch) {
  return derive_seed(cfg.seed, kValidationChannelStream + static_cast<std::uint64_t>(epoch));
}

ad::Vector sample_utilities(PowerPolicy& policy, const env::UtilityKind& utility, const Matrix& test_set, Rng& rng,
                            int draws_per_sample) {
  if (draws_per_sample < 1) throw ConfigError("draws_per_sample must be >= 1");
  const int n = policy.network_size();
  if (test_set.cols() != static_cast<Eigen::Index>(n) * n) throw ConfigError("test set does not match model size");
  const int draws = policy.stochastic() ? draws_per_sample : 1;
  ad::Vector total = ad::Vector::Zero(test_set.rows());
  for (Eigen::Index start = 0; start < test_set.rows(); start += kEvalChunk) {
    const Eigen::Index len = std::min(kEvalChunk, test_set.rows() - start);
    const Matrix chunk = test_set.middleRows(start, len);
    for (int d = 0; d < draws; ++d) {
      const Matrix x = policy.infer(chunk, rng, ad::Mode::Eval);
      total.segment(start, len) += env::batch_utility(utility, chunk, x);
    }
  }
  return total / draws;
}

EvalResult summarize(const ad::Vector& per_sample) {
  EvalResult r;
  const double n = static_cast<double>(per_sample.size());
  r.mean = per_sample.mean();
  if (per_sample.size() > 1) {
    const double var = (per_sample.array() - r.mean).square().sum() / (n - 1.0);
    r.std_error = std::sqrt(var / n);
  }
  return r;
}

EvalResult evaluate(PowerPolicy& policy, const env::UtilityKind& utility, const Matrix& test_set, Rng& rng,
                    int draws_per_sample) {
  return summarize(sample_utilities(policy, utility, test_set, rng, draws_per_sample));
}

TrainingCurve train(PowerPolicy& policy, const env::UtilityKind& utility, const TrainConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const int n = policy.network_size();
  const std::vector<ad::Parameter*> params = policy.parameters();
  ad::AdamState adam(ad::AdamConfig{cfg.learning_rate});
  Rng data_rng = make_rng(cfg.seed, kTrainDataStream);
  Rng channel_rng = make_rng(cfg.seed, kTrainChannelStream);

  TrainingCurve curve;
  std::vector<Matrix> best_state;
  auto validate_epoch = [&](int epoch) {
    Rng vdata(validation_data_seed(cfg, epoch));
    Rng vchan(validation_channel_seed(cfg, epoch));
    const Matrix batch = env::sample_gain_matrix(cfg.validation_size, n, vdata);
    const double v = evaluate(policy, utility, batch, vchan).mean;
    curve.validation.push_back(v);
    if (v > curve.validation[curve.best_epoch] || epoch == 0) {
      curve.best_epoch = epoch;
      if (cfg.keep_best) best_state = snapshot(policy);
    }
    if (cfg.report_interval > 0 && epoch % cfg.report_interval == 0) {
      std::fprintf(stderr, "[%s %s] epoch %d validation %.6f\n", policy.label().c_str(), utility.label().c_str(), epoch,
                   v);
    }
  };

  validate_epoch(0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    adam.config.learning_rate = epoch_learning_rate(cfg, epoch);
    for (int b = 0; b < cfg.batches_per_epoch; ++b) {
      const Matrix gains = env::sample_gain_matrix(cfg.batch_size, n, data_rng);
      ad::zero_grad(params);
      ad::Tape tape;
      try {
        const ad::Var x = policy.forward(tape, gains, channel_rng, ad::Mode::Train);
        const ad::Var loss = ad::scale(ad::mean(env::utility_node(utility, gains, x)), -1.0);
        const double lv = loss.value()(0, 0);
        if (!std::isfinite(lv)) throw NumericError("non-finite loss");
        tape.backward(loss);
        ad::adam_step(params, adam);
      } catch (const NumericError& e) {
        throw NumericError(policy.label() + " training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b) + ": " + e.what());
      }
    }
    validate_epoch(epoch);
  }
  if (cfg.keep_best && !best_state.empty()) restore(policy, best_state);
  curve.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return curve;
}

}  // namespace cecil
