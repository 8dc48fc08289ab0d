#include "cecil/fran_env.hpp"

#include <cmath>

#include "cecil/errors.hpp"

namespace cecil::env {

namespace {

// Utility of one network given as a row-major N x N gain array; writes the power
// gradient into `grad` when non-null.
double utility_core(const UtilityKind& kind, const double* a, const double* x, int n, double* grad) {
  thread_local std::vector<double> total;
  thread_local std::vector<double> rate;
  total.assign(n, 1.0);
  rate.assign(n, 0.0);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) total[i] += a[j * n + i] * x[j];
  }
  double u = 0.0;
  const bool ee = !kind.is_sum_rate();
  for (int i = 0; i < n; ++i) {
    const double signal = a[i * n + i] * x[i];
    const double interference = total[i] - signal;  // >= 1
    rate[i] = std::log1p(signal / interference);
    u += ee ? rate[i] / (x[i] + kind.static_power) : rate[i];
  }
  if (grad != nullptr) {
    for (int k = 0; k < n; ++k) {
      double g = 0.0;
      for (int i = 0; i < n; ++i) {
        double d = a[k * n + i] / total[i];
        if (k != i) d -= a[k * n + i] / (total[i] - a[i * n + i] * x[i]);
        g += ee ? d / (x[i] + kind.static_power) : d;
      }
      if (ee) g -= rate[k] / ((x[k] + kind.static_power) * (x[k] + kind.static_power));
      grad[k] = g;
    }
  }
  return u;
}

void check_powers(const NetworkState& a, const Vector& x) {
  if (x.size() != a.size()) {
    throw ConfigError("power vector length " + std::to_string(x.size()) + " != network size " +
                      std::to_string(a.size()));
  }
}

// Row-major copy of a NetworkState.
std::vector<double> row_major(const NetworkState& a) {
  const int n = a.size();
  std::vector<double> out(static_cast<std::size_t>(n) * n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) out[j * n + i] = a.gain(j, i);
  }
  return out;
}

}  // namespace

NetworkState::NetworkState(Matrix gains) : gains_(std::move(gains)) {
  if (gains_.rows() != gains_.cols()) throw ConfigError("gain matrix must be square");
  if (!gains_.allFinite() || (gains_.array() < 0.0).any()) {
    throw ConfigError("gain matrix entries must be finite and non-negative");
  }
}

Eigen::RowVectorXd NetworkState::flatten() const {
  const int n = size();
  Eigen::RowVectorXd row(n * n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) row(j * n + i) = gains_(j, i);
  }
  return row;
}

NetworkState NetworkState::unflatten(const Eigen::Ref<const Eigen::RowVectorXd>& row, int n) {
  if (row.size() != static_cast<Eigen::Index>(n) * n) throw ConfigError("flattened state has wrong length");
  Matrix g(n, n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) g(j, i) = row(j * n + i);
  }
  return NetworkState(std::move(g));
}

LocalObservation local_observation(const NetworkState& a, int i) {
  if (i < 0 || i >= a.size()) {
    throw ConfigError("local_observation: index " + std::to_string(i) + " out of range for N=" +
                      std::to_string(a.size()));
  }
  return {i, a.gains().col(i)};
}

UtilityKind UtilityKind::energy_efficiency(double static_power) {
  if (!(static_power > 0)) throw ConfigError("static power P_S must be positive");
  return {Kind::EnergyEfficiency, static_power};
}

std::string UtilityKind::label() const { return is_sum_rate() ? "srmax" : "eemax"; }

UtilityKind UtilityKind::parse(const std::string& s, double static_power) {
  if (s == "srmax" || s == "sum-rate") return sum_rate();
  if (s == "eemax" || s == "energy-efficiency") return energy_efficiency(static_power);
  throw ConfigError("unknown utility '" + s + "' (expected srmax or eemax)");
}

Matrix sample_gain_matrix(int count, int n, Rng& rng) {
  if (count < 1 || n < 1) throw ConfigError("sample_batch: count and N must be >= 1");
  std::exponential_distribution<double> exp1(1.0);
  Matrix out(count, static_cast<Eigen::Index>(n) * n);
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.cols(); ++c) out(r, c) = exp1(rng);
  }
  return out;
}

std::vector<NetworkState> sample_batch(int count, int n, Rng& rng) {
  const Matrix flat = sample_gain_matrix(count, n, rng);
  std::vector<NetworkState> out;
  out.reserve(count);
  for (Eigen::Index r = 0; r < flat.rows(); ++r) out.push_back(NetworkState::unflatten(flat.row(r), n));
  return out;
}

Matrix stack(const std::vector<NetworkState>& states) {
  if (states.empty()) throw ConfigError("stack: empty batch");
  const int n = states.front().size();
  Matrix out(static_cast<Eigen::Index>(states.size()), static_cast<Eigen::Index>(n) * n);
  for (std::size_t r = 0; r < states.size(); ++r) {
    if (states[r].size() != n) throw ConfigError("stack: mixed network sizes");
    out.row(static_cast<Eigen::Index>(r)) = states[r].flatten();
  }
  return out;
}

double user_rate(const NetworkState& a, const Vector& x, int i) {
  check_powers(a, x);
  if (i < 0 || i >= a.size()) throw ConfigError("user_rate: index out of range");
  double interference = 1.0;
  for (int j = 0; j < a.size(); ++j) {
    if (j != i) interference += a.gain(j, i) * x(j);
  }
  return std::log1p(a.gain(i, i) * x(i) / interference);
}

double sum_utility(const UtilityKind& kind, const NetworkState& a, const Vector& x) {
  check_powers(a, x);
  const auto flat = row_major(a);
  return utility_core(kind, flat.data(), x.data(), a.size(), nullptr);
}

Vector sum_utility_gradient(const UtilityKind& kind, const NetworkState& a, const Vector& x) {
  check_powers(a, x);
  const auto flat = row_major(a);
  Vector g(a.size());
  utility_core(kind, flat.data(), x.data(), a.size(), g.data());
  return g;
}

int network_size_from_width(Eigen::Index width) {
  const auto n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(width))));
  if (static_cast<Eigen::Index>(n) * n != width || n < 1) {
    throw ConfigError("gain batch width " + std::to_string(width) + " is not a perfect square");
  }
  return n;
}

Vector batch_utility(const UtilityKind& kind, const Matrix& gains, const Matrix& powers) {
  const int n = network_size_from_width(gains.cols());
  if (powers.rows() != gains.rows() || powers.cols() != n) throw ConfigError("batch_utility: shape mismatch");
  Vector out(gains.rows());
  Eigen::RowVectorXd a(gains.cols());
  Eigen::RowVectorXd x(n);
  for (Eigen::Index b = 0; b < gains.rows(); ++b) {
    a = gains.row(b);
    x = powers.row(b);
    out(b) = utility_core(kind, a.data(), x.data(), n, nullptr);
  }
  return out;
}

Matrix local_observations(const Matrix& gains, int n, int i) {
  if (i < 0 || i >= n) throw ConfigError("local_observations: index out of range");
  Matrix out(gains.rows(), n);
  for (int j = 0; j < n; ++j) out.col(j) = gains.col(static_cast<Eigen::Index>(j) * n + i);
  return out;
}

ad::Var utility_node(const UtilityKind& kind, const Matrix& gains, ad::Var powers) {
  const int n = network_size_from_width(gains.cols());
  const Matrix& x = powers.value();
  if (x.rows() != gains.rows() || x.cols() != n) {
    throw ConfigError("utility_node: powers " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                      " do not match gains batch");
  }
  Matrix u(x.rows(), 1);
  Matrix grad(x.rows(), n);
  Eigen::RowVectorXd a(gains.cols());
  Eigen::RowVectorXd xr(n);
  Eigen::RowVectorXd g(n);
  const bool want_grad = powers.tape().recording();
  for (Eigen::Index b = 0; b < x.rows(); ++b) {
    a = gains.row(b);
    xr = x.row(b);
    u(b, 0) = utility_core(kind, a.data(), xr.data(), n, want_grad ? g.data() : nullptr);
    if (want_grad) grad.row(b) = g;
  }
  return powers.tape().custom({powers}, std::move(u), [grad = std::move(grad)](const ad::BackwardContext& c) {
    *c.in_grads[0] += (grad.array().colwise() * c.out_grad.col(0).array()).matrix();
  });
}

}  // namespace cecil::env
