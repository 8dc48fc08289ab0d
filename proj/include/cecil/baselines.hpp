#pragma once

// Comparison schemes: ideal cooperation (IC), no cooperation (NC), projected
// gradient ascent (PGD), max power and random power.

#include <cstdint>
#include <string>
#include <vector>

#include "cecil/fran_env.hpp"
#include "cecil/mlp.hpp"
#include "cecil/policy.hpp"

namespace cecil {

struct IcConfig {
  int n = 5;
  double power_budget = env::kDefaultPowerBudget;
  int hidden = 100;
  int depth = 12;  // weight layers, including the output layer
  bool batch_norm = true;
  std::uint64_t seed = 1;
};

/// Centralised DNN on the full flattened state.
class IcModel final : public PowerPolicy {
 public:
  explicit IcModel(IcConfig config);

  [[nodiscard]] int network_size() const override { return config_.n; }
  [[nodiscard]] double power_budget() const override { return config_.power_budget; }
  [[nodiscard]] std::string label() const override { return "IC"; }

  ad::Var forward(ad::Tape& tape, const Matrix& gains, Rng& rng, ad::Mode mode) override;
  std::vector<ad::Parameter*> parameters() override { return net_.parameters(); }
  std::vector<ad::NamedTensor> state() override { return net_.state(); }

  [[nodiscard]] const IcConfig& config() const { return config_; }
  ad::Mlp& network() { return net_; }

 private:
  IcConfig config_;
  ad::Mlp net_;
};

struct NcConfig {
  int n = 5;
  double power_budget = env::kDefaultPowerBudget;
  int hidden = 50;
  int depth = 3;
  bool batch_norm = true;
  std::uint64_t seed = 1;
};

/// One DNN per EN, each fed only its local observation.
class NcModel final : public PowerPolicy {
 public:
  explicit NcModel(NcConfig config);

  [[nodiscard]] int network_size() const override { return config_.n; }
  [[nodiscard]] double power_budget() const override { return config_.power_budget; }
  [[nodiscard]] std::string label() const override { return "NC"; }

  ad::Var forward(ad::Tape& tape, const Matrix& gains, Rng& rng, ad::Mode mode) override;
  std::vector<ad::Parameter*> parameters() override;
  std::vector<ad::NamedTensor> state() override;

  [[nodiscard]] const NcConfig& config() const { return config_; }
  ad::Mlp& network(int i) { return nets_.at(i); }

 private:
  NcConfig config_;
  std::vector<ad::Mlp> nets_;
};

struct PgdConfig {
  double power_budget = env::kDefaultPowerBudget;
  double learning_rate = 0.05;
  /// Step size at iteration t is learning_rate / (1 + t / decay_steps).
  double decay_steps = 500.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double precision = 1e-5;
  int max_iterations = 20000;
  /// Also start from P and from `random_starts` uniform draws, keeping the best
  /// stationary point.
  bool multi_start = false;
  int random_starts = 1;
  std::uint64_t seed = 1;

  void validate() const;
};

struct PgdResult {
  env::Vector x;
  double utility = 0.0;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

/// ||x - clip(x + grad, 0, P)||_inf, zero exactly at box-constrained stationary points.
double projected_residual(const env::Vector& x, const env::Vector& grad, double power_budget);

/// Adam-preconditioned projected gradient ascent from `start`.
PgdResult pgd_ascend(const env::NetworkState& a, const env::UtilityKind& utility, const PgdConfig& cfg,
                     env::Vector start);
/// Ascent from (P/2)·1, or the best of all starts when cfg.multi_start is set.
PgdResult pgd_solve(const env::NetworkState& a, const env::UtilityKind& utility, const PgdConfig& cfg);
/// pgd_solve on each row of a (B x N^2) gains batch; returns (B x N) powers.
Matrix pgd_batch(const Matrix& gains, const env::UtilityKind& utility, const PgdConfig& cfg,
                 int* unconverged = nullptr);

env::Vector max_power(int n, double power_budget = env::kDefaultPowerBudget);
env::Vector random_power(int n, Rng& rng, double power_budget = env::kDefaultPowerBudget);
Matrix max_power_batch(Eigen::Index rows, int n, double power_budget = env::kDefaultPowerBudget);
Matrix random_power_batch(Eigen::Index rows, int n, Rng& rng, double power_budget = env::kDefaultPowerBudget);

}  // namespace cecil
