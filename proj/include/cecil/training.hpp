#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cecil/fran_env.hpp"
#include "cecil/policy.hpp"

namespace cecil {

struct TrainConfig {
  int epochs = 200;
  int batches_per_epoch = 50;
  int batch_size = 5000;
  double learning_rate = 1e-4;
  /// Learning rate of the last epoch; the rate decays geometrically per epoch from
  /// learning_rate. Zero keeps it constant.
  double final_learning_rate = 0.0;
  std::uint64_t seed = 1;
  int validation_size = 5000;
  /// Print progress every this many epochs (0 = silent).
  int report_interval = 0;
  /// Restore the parameters of the best validation epoch at the end.
  bool keep_best = true;

  void validate() const;
};

/// Learning rate used during `epoch` (1-based).
double epoch_learning_rate(const TrainConfig& cfg, int epoch);

struct TrainingCurve {
  /// validation[0] is measured before the first update, validation[e] after epoch e.
  std::vector<double> validation;
  int best_epoch = 0;
  double seconds = 0.0;

  [[nodiscard]] double best() const { return validation.at(best_epoch); }
};

struct EvalResult {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Evaluation is chunked so memory stays bounded; the chunk size is part of the
/// RNG contract for stochastic channels.
inline constexpr Eigen::Index kEvalChunk = 2500;

/// Mini-batch ascent on the expected utility, end to end through every network and
/// fronthaul operation. Each batch draws fresh channel samples.
TrainingCurve train(PowerPolicy& policy, const env::UtilityKind& utility, const TrainConfig& cfg);

/// Eval-mode mean utility over `test_set` (B x N^2). Stochastic channels are averaged
/// over `draws_per_sample` independent realisations per sample.
EvalResult evaluate(PowerPolicy& policy, const env::UtilityKind& utility, const Matrix& test_set, Rng& rng,
                    int draws_per_sample = 1);

/// Per-sample utilities (averaged over draws) backing `evaluate`.
ad::Vector sample_utilities(PowerPolicy& policy, const env::UtilityKind& utility, const Matrix& test_set, Rng& rng,
                            int draws_per_sample = 1);

EvalResult summarize(const ad::Vector& per_sample);

/// RNG seeds used for the validation batch of a given epoch; exposed so callers can
/// reproduce a training-curve point with `evaluate`.
std::uint64_t validation_data_seed(const TrainConfig& cfg, int epoch);
std::uint64_t validation_channel_seed(const TrainConfig& cfg, int epoch);

}  // namespace cecil
