#include "cecil/fronthaul.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "cecil/errors.hpp"

namespace cecil::fronthaul {

namespace {

constexpr double kClampTolerance = 1e-9;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void warn_clamp_once(double m, int levels) {
  static std::atomic<bool> warned{false};
  if (!warned.exchange(true)) {
    std::fprintf(stderr, "quantize: input %.12g outside [0, %d] clamped (further occurrences not reported)\n", m,
                 levels - 1);
  }
}

double clamp_input(double m, int levels) {
  const double hi = levels - 1;
  if (m < 0.0 || m > hi) {
    if (m < -kClampTolerance || m > hi + kClampTolerance || !std::isfinite(m)) warn_clamp_once(m, levels);
    return std::isnan(m) ? 0.0 : std::clamp(m, 0.0, hi);
  }
  return m;
}

int quantize_with(double m, int levels, double u) {
  const double x = clamp_input(m, levels);
  const double lower = std::floor(x);
  if (lower >= levels - 1) return levels - 1;
  return static_cast<int>(lower) + (u < x - lower ? 1 : 0);
}

double noise_stddev(const FronthaulModel& model) {
  if (const auto* a = std::get_if<AdditiveNoise>(&model)) return std::sqrt(a->variance);
  if (const auto* a = std::get_if<AsymmetricNoisy>(&model)) return std::sqrt(a->variance);
  return 0.0;
}

// Gaussian noise of the given shape, drawn row by row (sample-major).
Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> nd(0.0, stddev);
  Matrix out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = nd(rng);
  }
  return out;
}

Matrix uniform(Eigen::Index rows, Eigen::Index cols, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> ud(lo, hi);
  Matrix out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = ud(rng);
  }
  return out;
}

// Multiplicative part of the channel (asymmetric gains only).
Matrix channel_gains(const FronthaulModel& model, Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const auto& a = std::get<AsymmetricNoisy>(model);
  return uniform(rows, cols, a.gain_lo, a.gain_hi, rng);
}

bool has_noise(const FronthaulModel& model) { return noise_stddev(model) > 0.0; }

}  // namespace

std::string to_string(AccessMode m) { return m == AccessMode::Oma ? "oma" : "noma"; }

AccessMode parse_access_mode(const std::string& s) {
  if (s == "oma" || s == "OMA") return AccessMode::Oma;
  if (s == "noma" || s == "NOMA") return AccessMode::Noma;
  throw ConfigError("unknown access mode '" + s + "' (expected oma or noma)");
}

ResourcePlan ResourcePlan::oma(int n, int uplink_total, int downlink_total) {
  if (n < 1) throw ConfigError("resource plan: N must be >= 1");
  if (uplink_total < n || downlink_total < n) {
    throw ConfigError("OMA plan needs at least one RB per EN in each direction (N=" + std::to_string(n) +
                      ", M_U=" + std::to_string(uplink_total) + ", M_D=" + std::to_string(downlink_total) + ")");
  }
  auto split = [n](int total) {
    std::vector<int> s(n, total / n);
    for (int i = 0; i < total % n; ++i) ++s[i];
    return s;
  };
  return oma(split(uplink_total), split(downlink_total));
}

ResourcePlan ResourcePlan::oma(std::vector<int> uplink_split, std::vector<int> downlink_split) {
  if (uplink_split.empty() || uplink_split.size() != downlink_split.size()) {
    throw ConfigError("OMA plan: uplink and downlink splits must have one entry per EN");
  }
  for (std::size_t i = 0; i < uplink_split.size(); ++i) {
    if (uplink_split[i] < 1 || downlink_split[i] < 1) throw ConfigError("OMA plan: every split must be >= 1");
  }
  ResourcePlan p;
  p.mode_ = AccessMode::Oma;
  p.uplink_total_ = std::accumulate(uplink_split.begin(), uplink_split.end(), 0);
  p.downlink_total_ = std::accumulate(downlink_split.begin(), downlink_split.end(), 0);
  p.uplink_ = std::move(uplink_split);
  p.downlink_ = std::move(downlink_split);
  return p;
}

ResourcePlan ResourcePlan::noma(int n, int uplink_total, int downlink_total) {
  if (n < 1) throw ConfigError("resource plan: N must be >= 1");
  if (uplink_total < 1 || downlink_total < 1) throw ConfigError("NOMA plan: M_U and M_D must be >= 1");
  ResourcePlan p;
  p.mode_ = AccessMode::Noma;
  p.uplink_total_ = uplink_total;
  p.downlink_total_ = downlink_total;
  p.uplink_.assign(n, uplink_total);
  p.downlink_.assign(n, downlink_total);
  return p;
}

ResourcePlan ResourcePlan::make(AccessMode mode, int n, int uplink_total, int downlink_total) {
  return mode == AccessMode::Oma ? oma(n, uplink_total, downlink_total) : noma(n, uplink_total, downlink_total);
}

void ResourcePlan::check_index(int i) const {
  if (i < 0 || i >= size()) throw ConfigError("EN index " + std::to_string(i) + " out of range");
}

int ResourcePlan::uplink_width(int i) const {
  check_index(i);
  return uplink_[i];
}

int ResourcePlan::downlink_width(int i) const {
  check_index(i);
  return downlink_[i];
}

int ResourcePlan::downlink_offset(int i) const {
  check_index(i);
  if (mode_ == AccessMode::Noma) return 0;
  return std::accumulate(downlink_.begin(), downlink_.begin() + i, 0);
}

std::string ResourcePlan::label() const {
  return to_string(mode_) + " M_U=" + std::to_string(uplink_total_) + " M_D=" + std::to_string(downlink_total_);
}

void validate(const FronthaulModel& model) {
  std::visit(overloaded{
                 [](const Perfect&) {},
                 [](const AdditiveNoise& a) {
                   if (!(a.variance >= 0)) throw ConfigError("noise variance must be >= 0");
                 },
                 [](const AsymmetricNoisy& a) {
                   if (!(a.variance >= 0)) throw ConfigError("noise variance must be >= 0");
                   if (!(a.gain_lo > 0) || !(a.gain_lo <= a.gain_hi)) {
                     throw ConfigError("asymmetric gains need 0 < gain_lo <= gain_hi");
                   }
                 },
                 [](const Quantized& q) {
                   if (q.levels < 2) throw ConfigError("quantized link needs at least 2 levels");
                 },
             },
             model);
}

std::string describe(const FronthaulModel& model) {
  auto snr = [](double variance) {
    if (variance <= 0) return std::string("inf");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", 10.0 * std::log10(1.0 / variance));
    return std::string(buf);
  };
  return std::visit(overloaded{
                        [](const Perfect&) { return std::string("perfect"); },
                        [&](const AdditiveNoise& a) { return "snr=" + snr(a.variance) + "dB"; },
                        [&](const AsymmetricNoisy& a) { return "asym-snr=" + snr(a.variance) + "dB"; },
                        [](const Quantized& q) {
                          const double bits = std::log2(static_cast<double>(q.levels));
                          char buf[48];
                          std::snprintf(buf, sizeof buf, "B=%g%s", bits, q.rounding == Rounding::Nearest ? "-round" : "");
                          return std::string(buf);
                        },
                    },
                    model);
}

double noise_variance_from_snr_db(double snr_db) { return 1.0 / std::pow(10.0, snr_db / 10.0); }

std::optional<int> quantization_levels(const FronthaulModel& model) {
  if (const auto* q = std::get_if<Quantized>(&model)) return q->levels;
  return std::nullopt;
}

void DrawTrace::start_recording() {
  mode_ = Mode::Record;
  offsets_.clear();
  cursor_ = 0;
}

void DrawTrace::start_replay() {
  mode_ = Mode::Replay;
  cursor_ = 0;
}

void DrawTrace::record(Matrix offset) { offsets_.push_back(std::move(offset)); }

const Matrix& DrawTrace::next(Eigen::Index rows, Eigen::Index cols) {
  if (cursor_ >= offsets_.size()) throw UsageError("DrawTrace: replay ran past the recorded draws");
  const Matrix& m = offsets_[cursor_++];
  if (m.rows() != rows || m.cols() != cols) throw UsageError("DrawTrace: replayed draw has a different shape");
  return m;
}

// ---- single-network operations --------------------------------------------

MessageVector apply_channel(const MessageVector& v, const FronthaulModel& model, Rng& rng) {
  validate(model);
  MessageVector out = v;
  if (std::holds_alternative<AsymmetricNoisy>(model)) {
    out = out.cwiseProduct(channel_gains(model, 1, v.size(), rng).row(0).transpose());
  }
  if (has_noise(model)) out += gaussian(1, v.size(), noise_stddev(model), rng).row(0).transpose();
  return out;
}

MessageVector uplink_combine(std::span<const MessageVector> messages, const ResourcePlan& plan,
                             const FronthaulModel& model, Rng& rng) {
  if (static_cast<int>(messages.size()) != plan.size()) {
    throw ConfigError("uplink_combine: " + std::to_string(messages.size()) + " messages for " +
                      std::to_string(plan.size()) + " ENs");
  }
  for (int i = 0; i < plan.size(); ++i) {
    if (messages[i].size() != plan.uplink_width(i)) {
      throw ConfigError("uplink_combine: message " + std::to_string(i) + " has length " +
                        std::to_string(messages[i].size()) + ", plan expects " + std::to_string(plan.uplink_width(i)));
    }
  }
  if (plan.mode() == AccessMode::Oma) {
    MessageVector out(plan.cloud_input_width());
    Eigen::Index at = 0;
    for (const MessageVector& m : messages) {
      out.segment(at, m.size()) = apply_channel(m, model, rng);
      at += m.size();
    }
    return out;
  }
  MessageVector out = MessageVector::Zero(plan.uplink_total());
  const bool asym = std::holds_alternative<AsymmetricNoisy>(model);
  for (const MessageVector& m : messages) {
    out += asym ? MessageVector(m.cwiseProduct(channel_gains(model, 1, m.size(), rng).row(0).transpose())) : m;
  }
  if (has_noise(model)) out += gaussian(1, out.size(), noise_stddev(model), rng).row(0).transpose();
  return out;
}

MessageVector downlink_dispatch(const MessageVector& cloud_out, const ResourcePlan& plan,
                                const FronthaulModel& model, Rng& rng, int i) {
  if (cloud_out.size() != plan.downlink_total()) {
    throw ConfigError("downlink_dispatch: cloud output length " + std::to_string(cloud_out.size()) +
                      " != M_D=" + std::to_string(plan.downlink_total()));
  }
  const MessageVector d = cloud_out.segment(plan.downlink_offset(i), plan.downlink_width(i));
  return apply_channel(d, model, rng);
}

int quantize(double m, int levels, Rng& rng) {
  if (levels < 2) throw ConfigError("quantize: levels must be >= 2");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return quantize_with(m, levels, u(rng));
}

int round_to_level(double m, int levels) {
  if (levels < 2) throw ConfigError("quantize: levels must be >= 2");
  return static_cast<int>(std::lround(clamp_input(m, levels)));
}

std::vector<int> quantize_vector(const MessageVector& m, int levels, Rng& rng) {
  std::vector<int> out(m.size());
  for (Eigen::Index k = 0; k < m.size(); ++k) out[k] = quantize(m(k), levels, rng);
  return out;
}

std::vector<int> quantize_vector(const MessageVector& m, std::span<const int> levels, Rng& rng) {
  if (static_cast<Eigen::Index>(levels.size()) != m.size()) {
    throw ConfigError("quantize_vector: one level count per element required");
  }
  std::vector<int> out(m.size());
  for (Eigen::Index k = 0; k < m.size(); ++k) out[k] = quantize(m(k), levels[k], rng);
  return out;
}

// ---- batched autodiff operations ------------------------------------------

ad::Var apply_channel(ad::Var v, const FronthaulModel& model, Rng& rng) {
  validate(model);
  if (std::holds_alternative<AsymmetricNoisy>(model)) {
    v = ad::mul_constant(v, channel_gains(model, v.rows(), v.cols(), rng));
  }
  if (has_noise(model)) v = ad::add_constant(v, gaussian(v.rows(), v.cols(), noise_stddev(model), rng));
  return v;
}

ad::Var uplink_combine(std::span<const ad::Var> messages, const ResourcePlan& plan, const FronthaulModel& model,
                       Rng& rng) {
  if (static_cast<int>(messages.size()) != plan.size()) {
    throw ConfigError("uplink_combine: " + std::to_string(messages.size()) + " messages for " +
                      std::to_string(plan.size()) + " ENs");
  }
  for (int i = 0; i < plan.size(); ++i) {
    if (messages[i].cols() != plan.uplink_width(i)) {
      throw ConfigError("uplink_combine: message " + std::to_string(i) + " has width " +
                        std::to_string(messages[i].cols()) + ", plan expects " + std::to_string(plan.uplink_width(i)));
    }
  }
  std::vector<ad::Var> received;
  received.reserve(messages.size());
  if (plan.mode() == AccessMode::Oma) {
    for (const ad::Var& m : messages) received.push_back(apply_channel(m, model, rng));
    return ad::concat_cols(received);
  }
  const bool asym = std::holds_alternative<AsymmetricNoisy>(model);
  for (const ad::Var& m : messages) {
    received.push_back(asym ? ad::mul_constant(m, channel_gains(model, m.rows(), m.cols(), rng)) : m);
  }
  ad::Var y = ad::sum(received);
  if (has_noise(model)) y = ad::add_constant(y, gaussian(y.rows(), y.cols(), noise_stddev(model), rng));
  return y;
}

ad::Var downlink_dispatch(ad::Var cloud_out, const ResourcePlan& plan, const FronthaulModel& model, Rng& rng,
                          int i) {
  if (cloud_out.cols() != plan.downlink_total()) {
    throw ConfigError("downlink_dispatch: cloud output width " + std::to_string(cloud_out.cols()) +
                      " != M_D=" + std::to_string(plan.downlink_total()));
  }
  ad::Var d = plan.mode() == AccessMode::Noma
                  ? cloud_out
                  : ad::slice_cols(cloud_out, plan.downlink_offset(i), plan.downlink_width(i));
  return apply_channel(d, model, rng);
}

ad::Var quantize(ad::Var m, int levels, Rounding rounding, Rng& rng, DrawTrace* trace) {
  if (levels < 2) throw ConfigError("quantize: levels must be >= 2");
  const Matrix& mv = m.value();
  if (trace != nullptr && trace->mode() == DrawTrace::Mode::Replay) {
    // Keep the RNG stream aligned with the recording pass.
    if (rounding == Rounding::Stochastic) {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (Eigen::Index k = 0; k < mv.size(); ++k) (void)u(rng);
    }
    return ad::straight_through(m, mv + trace->next(mv.rows(), mv.cols()));
  }
  Matrix q(mv.rows(), mv.cols());
  if (rounding == Rounding::Stochastic) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Eigen::Index r = 0; r < mv.rows(); ++r) {
      for (Eigen::Index c = 0; c < mv.cols(); ++c) q(r, c) = quantize_with(mv(r, c), levels, u(rng));
    }
  } else {
    for (Eigen::Index k = 0; k < mv.size(); ++k) q.data()[k] = round_to_level(mv.data()[k], levels);
  }
  if (trace != nullptr) trace->record(q - mv);
  return ad::straight_through(m, std::move(q));
}

FronthaulModel parse_fronthaul_model(const std::string& text) {
  auto number = [&](std::string s) {
    if (s.size() > 2 && s.compare(s.size() - 2, 2, "dB") == 0) s.resize(s.size() - 2);
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size() || !std::isfinite(v)) throw ConfigError("bad channel descriptor '" + text + "'");
    return v;
  };
  if (text == "perfect") return Perfect{};
  if (text.rfind("snr=", 0) == 0) return AdditiveNoise{noise_variance_from_snr_db(number(text.substr(4)))};
  if (text.rfind("asym-snr=", 0) == 0) {
    return AsymmetricNoisy{noise_variance_from_snr_db(number(text.substr(9)))};
  }
  if (text.rfind("B=", 0) == 0) {
    std::string body = text.substr(2);
    Rounding rounding = Rounding::Stochastic;
    const std::string suffix = "-round";
    if (body.size() > suffix.size() && body.compare(body.size() - suffix.size(), suffix.size(), suffix) == 0) {
      rounding = Rounding::Nearest;
      body.resize(body.size() - suffix.size());
    }
    const double bits = number(body);
    if (bits < 1 || bits > 30 || bits != std::floor(bits)) throw ConfigError("bit width must be an integer in [1, 30]");
    return Quantized{1 << static_cast<int>(bits), rounding};
  }
  throw ConfigError("unknown channel descriptor '" + text + "' (perfect, snr=<dB>, asym-snr=<dB>, B=<bits>[-round])");
}

}  // namespace cecil::fronthaul
