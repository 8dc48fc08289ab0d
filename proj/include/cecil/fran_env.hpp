#pragma once

// Interference-channel power control instances.
//
// A network of N edge nodes, EN j transmitting to its own user j. The gain from
// EN j to user i is a(j, i). Batches are stored one network per row, flattened
// row-major: column j*N + i holds a(j, i).

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cecil/autodiff.hpp"
#include "cecil/random.hpp"

namespace cecil::env {

using ad::Matrix;
using ad::Vector;

inline constexpr double kDefaultPowerBudget = 10.0;
inline constexpr double kDefaultStaticPower = 1.0;

/// N x N matrix of non-negative linear gains; row = transmitter, column = receiver.
class NetworkState {
 public:
  NetworkState() = default;
  explicit NetworkState(Matrix gains);

  [[nodiscard]] int size() const { return static_cast<int>(gains_.rows()); }
  [[nodiscard]] double gain(int from, int to) const { return gains_(from, to); }
  [[nodiscard]] const Matrix& gains() const { return gains_; }

  /// Row-major flattening (length N^2).
  [[nodiscard]] Eigen::RowVectorXd flatten() const;
  static NetworkState unflatten(const Eigen::Ref<const Eigen::RowVectorXd>& row, int n);

 private:
  Matrix gains_;
};

/// Gains into user `owner`: column `owner` of the state.
struct LocalObservation {
  int owner = 0;
  Vector gains;
};

LocalObservation local_observation(const NetworkState& a, int i);

struct UtilityKind {
  enum class Kind { SumRate, EnergyEfficiency };
  Kind kind = Kind::SumRate;
  double static_power = kDefaultStaticPower;

  static UtilityKind sum_rate() { return {Kind::SumRate, kDefaultStaticPower}; }
  static UtilityKind energy_efficiency(double static_power = kDefaultStaticPower);

  [[nodiscard]] bool is_sum_rate() const { return kind == Kind::SumRate; }
  [[nodiscard]] std::string label() const;
  static UtilityKind parse(const std::string& s, double static_power = kDefaultStaticPower);
};

/// `count` i.i.d. states with Exponential(1) gains.
std::vector<NetworkState> sample_batch(int count, int n, Rng& rng);
/// Same draws as sample_batch, laid out as a (count x N^2) matrix.
Matrix sample_gain_matrix(int count, int n, Rng& rng);

Matrix stack(const std::vector<NetworkState>& states);

/// Rate of user i in nats: ln(1 + a_ii x_i / (1 + sum_{j != i} a_ji x_j)).
double user_rate(const NetworkState& a, const Vector& x, int i);
double sum_utility(const UtilityKind& kind, const NetworkState& a, const Vector& x);
/// Gradient of sum_utility with respect to the power vector.
Vector sum_utility_gradient(const UtilityKind& kind, const NetworkState& a, const Vector& x);

/// Per-row utilities for a gains batch (B x N^2) and powers (B x N).
Vector batch_utility(const UtilityKind& kind, const Matrix& gains, const Matrix& powers);

/// Columns holding EN i's local observation, gathered into a (B x N) matrix.
Matrix local_observations(const Matrix& gains, int n, int i);

/// Autodiff node: per-sample utility (B x 1) of powers (B x N) under the constant gains.
ad::Var utility_node(const UtilityKind& kind, const Matrix& gains, ad::Var powers);

int network_size_from_width(Eigen::Index width);

}  // namespace cecil::env
