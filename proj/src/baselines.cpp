#include "cecil/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cecil/errors.hpp"

namespace cecil {

namespace {

void check_common(int n, double power_budget) {
  if (n < 1) throw ConfigError("network size N must be >= 1");
  if (!(power_budget > 0)) throw ConfigError("power budget P must be positive");
}

}  // namespace

IcModel::IcModel(IcConfig config) : config_(config) {
  check_common(config_.n, config_.power_budget);
  Rng rng = make_rng(config_.seed, 0x2000);
  const int n = config_.n;
  net_ = ad::Mlp("ic",
                 ad::MlpSpec::stack(n * n, config_.hidden, config_.depth, n, ad::Activation::ScaledSigmoid,
                                    config_.power_budget, config_.batch_norm),
                 rng);
}

ad::Var IcModel::forward(ad::Tape& tape, const Matrix& gains, Rng&, ad::Mode mode) {
  if (gains.cols() != static_cast<Eigen::Index>(config_.n) * config_.n) {
    throw ConfigError("IC: gains batch width does not match N^2");
  }
  return net_.forward(tape, tape.constant(gains), mode);
}

NcModel::NcModel(NcConfig config) : config_(config) {
  check_common(config_.n, config_.power_budget);
  Rng rng = make_rng(config_.seed, 0x3000);
  for (int i = 0; i < config_.n; ++i) {
    nets_.emplace_back("nc" + std::to_string(i),
                       ad::MlpSpec::stack(config_.n, config_.hidden, config_.depth, 1, ad::Activation::ScaledSigmoid,
                                          config_.power_budget, config_.batch_norm),
                       rng);
  }
}

ad::Var NcModel::forward(ad::Tape& tape, const Matrix& gains, Rng&, ad::Mode mode) {
  const int n = config_.n;
  if (gains.cols() != static_cast<Eigen::Index>(n) * n) throw ConfigError("NC: gains batch width does not match N^2");
  std::vector<ad::Var> powers;
  powers.reserve(n);
  for (int i = 0; i < n; ++i) {
    powers.push_back(nets_[i].forward(tape, tape.constant(env::local_observations(gains, n, i)), mode));
  }
  return ad::concat_cols(powers);
}

std::vector<ad::Parameter*> NcModel::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& net : nets_) {
    auto p = net.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<ad::NamedTensor> NcModel::state() {
  std::vector<ad::NamedTensor> out;
  for (auto& net : nets_) {
    auto s = net.state();
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

void PgdConfig::validate() const {
  if (!(power_budget > 0)) throw ConfigError("pgd: power budget must be positive");
  if (!(learning_rate > 0) || !(decay_steps > 0)) throw ConfigError("pgd: learning rate and decay must be positive");
  if (!(precision > 0)) throw ConfigError("pgd: precision must be positive");
  if (max_iterations < 1) throw ConfigError("pgd: max_iterations must be >= 1");
  if (random_starts < 0) throw ConfigError("pgd: random_starts must be >= 0");
}

double projected_residual(const env::Vector& x, const env::Vector& grad, double power_budget) {
  return (x - (x + grad).cwiseMax(0.0).cwiseMin(power_budget)).lpNorm<Eigen::Infinity>();
}

PgdResult pgd_ascend(const env::NetworkState& a, const env::UtilityKind& utility, const PgdConfig& cfg,
                     env::Vector x) {
  cfg.validate();
  const int n = a.size();
  if (x.size() != n) throw ConfigError("pgd: start point has the wrong length");
  const double p = cfg.power_budget;
  x = x.cwiseMax(0.0).cwiseMin(p);

  env::Vector m = env::Vector::Zero(n);
  env::Vector v = env::Vector::Zero(n);
  PgdResult best;
  best.x = x;
  best.utility = env::sum_utility(utility, a, x);
  best.residual = std::numeric_limits<double>::infinity();
  double b1t = 1.0;
  double b2t = 1.0;
  for (int t = 0; t <= cfg.max_iterations; ++t) {
    const env::Vector g = env::sum_utility_gradient(utility, a, x);
    const double res = projected_residual(x, g, p);
    const double u = env::sum_utility(utility, a, x);
    if (u > best.utility || (u == best.utility && res < best.residual)) {
      best.x = x;
      best.utility = u;
      best.residual = res;
    }
    best.iterations = t;
    if (res <= cfg.precision) {
      best.x = x;
      best.utility = u;
      best.residual = res;
      best.converged = true;
      return best;
    }
    if (t == cfg.max_iterations) break;
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const double lr = cfg.learning_rate / (1.0 + t / cfg.decay_steps);
    const env::Vector step = (m / (1.0 - b1t)).array() / ((v / (1.0 - b2t)).array().sqrt() + cfg.epsilon);
    x = (x + lr * step).cwiseMax(0.0).cwiseMin(p);
  }
  return best;
}

PgdResult pgd_solve(const env::NetworkState& a, const env::UtilityKind& utility, const PgdConfig& cfg) {
  const int n = a.size();
  const double p = cfg.power_budget;
  PgdResult best = pgd_ascend(a, utility, cfg, env::Vector::Constant(n, p / 2.0));
  if (!cfg.multi_start) return best;
  Rng rng = make_rng(cfg.seed, 0x4000);
  std::vector<env::Vector> starts{env::Vector::Constant(n, p)};
  for (int k = 0; k < cfg.random_starts; ++k) starts.push_back(random_power(n, rng, p));
  for (const auto& s : starts) {
    PgdResult r = pgd_ascend(a, utility, cfg, s);
    if (r.utility > best.utility) best = std::move(r);
  }
  return best;
}

Matrix pgd_batch(const Matrix& gains, const env::UtilityKind& utility, const PgdConfig& cfg, int* unconverged) {
  const int n = env::network_size_from_width(gains.cols());
  Matrix out(gains.rows(), n);
  int missed = 0;
  for (Eigen::Index b = 0; b < gains.rows(); ++b) {
    const PgdResult r = pgd_solve(env::NetworkState::unflatten(gains.row(b), n), utility, cfg);
    out.row(b) = r.x.transpose();
    missed += r.converged ? 0 : 1;
  }
  if (unconverged != nullptr) *unconverged = missed;
  return out;
}

env::Vector max_power(int n, double power_budget) {
  check_common(n, power_budget);
  return env::Vector::Constant(n, power_budget);
}

env::Vector random_power(int n, Rng& rng, double power_budget) {
  check_common(n, power_budget);
  std::uniform_real_distribution<double> u(0.0, power_budget);
  env::Vector x(n);
  for (int i = 0; i < n; ++i) x(i) = u(rng);
  return x;
}

Matrix max_power_batch(Eigen::Index rows, int n, double power_budget) {
  check_common(n, power_budget);
  return Matrix::Constant(rows, n, power_budget);
}

Matrix random_power_batch(Eigen::Index rows, int n, Rng& rng, double power_budget) {
  Matrix out(rows, n);
  for (Eigen::Index r = 0; r < rows; ++r) out.row(r) = random_power(n, rng, power_budget).transpose();
  return out;
}

}  // namespace cecil
