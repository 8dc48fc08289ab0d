#pragma once

// Fronthaul links between the edge nodes and the cloud: resource plans, channel
// transfer functions, the OMA/NOMA combiners and the stochastic quantiser.
//
// Each operation exists twice: on single message vectors (one network) and on
// batched autodiff values whose rows are independent samples. On a batch of one
// sample both variants consume the RNG identically.

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cecil/autodiff.hpp"
#include "cecil/random.hpp"

namespace cecil::fronthaul {

using ad::Matrix;
using ad::Vector;
using MessageVector = Vector;

enum class AccessMode { Oma, Noma };

std::string to_string(AccessMode m);
AccessMode parse_access_mode(const std::string& s);

/// Fronthaul resource-block budget. One RB carries one real number.
class ResourcePlan {
 public:
  /// OMA with an even split; a remainder goes to the lowest-indexed ENs.
  static ResourcePlan oma(int n, int uplink_total, int downlink_total);
  static ResourcePlan oma(std::vector<int> uplink_split, std::vector<int> downlink_split);
  /// NOMA: every EN uses all M_U uplink RBs; the cloud multicasts M_D values.
  static ResourcePlan noma(int n, int uplink_total, int downlink_total);
  static ResourcePlan make(AccessMode mode, int n, int uplink_total, int downlink_total);

  [[nodiscard]] AccessMode mode() const { return mode_; }
  [[nodiscard]] int size() const { return static_cast<int>(uplink_.size()); }
  [[nodiscard]] int uplink_total() const { return uplink_total_; }
  [[nodiscard]] int downlink_total() const { return downlink_total_; }
  [[nodiscard]] int total() const { return uplink_total_ + downlink_total_; }

  /// |m_i0|: M_i0 under OMA, M_U under NOMA.
  [[nodiscard]] int uplink_width(int i) const;
  /// |y_0|: sum of M_i0 under OMA, M_U under NOMA.
  [[nodiscard]] int cloud_input_width() const { return uplink_total_; }
  /// |y_i|: M_0i under OMA, M_D under NOMA.
  [[nodiscard]] int downlink_width(int i) const;
  /// Start of EN i's slice in the cloud output (0 under NOMA).
  [[nodiscard]] int downlink_offset(int i) const;
  [[nodiscard]] const std::vector<int>& uplink_split() const { return uplink_; }
  [[nodiscard]] const std::vector<int>& downlink_split() const { return downlink_; }

  [[nodiscard]] std::string label() const;
  bool operator==(const ResourcePlan&) const = default;

 private:
  ResourcePlan() = default;
  void check_index(int i) const;

  AccessMode mode_ = AccessMode::Noma;
  int uplink_total_ = 0;
  int downlink_total_ = 0;
  std::vector<int> uplink_;
  std::vector<int> downlink_;
};

struct Perfect {
  bool operator==(const Perfect&) const = default;
};

/// v + eta, eta ~ N(0, variance I), drawn per use.
struct AdditiveNoise {
  double variance = 0.0;
  bool operator==(const AdditiveNoise&) const = default;
};

/// g .* v + eta with g_k ~ U[gain_lo, gain_hi] drawn per element per use.
struct AsymmetricNoisy {
  double variance = 0.0;
  double gain_lo = 0.1;
  double gain_hi = 1.0;
  bool operator==(const AsymmetricNoisy&) const = default;
};

enum class Rounding { Stochastic, Nearest };

/// Finite-capacity links: each RB carries one of `levels` integers. Quantisation
/// happens at the transmitter head; the link itself is lossless.
struct Quantized {
  int levels = 2;
  Rounding rounding = Rounding::Stochastic;
  bool operator==(const Quantized&) const = default;
};

using FronthaulModel = std::variant<Perfect, AdditiveNoise, AsymmetricNoisy, Quantized>;

void validate(const FronthaulModel& model);
std::string describe(const FronthaulModel& model);
/// Inverse of describe: "perfect", "snr=<dB>", "asym-snr=<dB>", "B=<bits>[-round]".
FronthaulModel parse_fronthaul_model(const std::string& text);
/// Noise variance for a per-RB SNR in dB with unit peak message power.
double noise_variance_from_snr_db(double snr_db);
std::optional<int> quantization_levels(const FronthaulModel& model);

/// Records quantisation offsets (q - m) and replays them later, so repeated forward
/// passes see the same quantisation error while m varies (finite-difference checks).
class DrawTrace {
 public:
  enum class Mode { Record, Replay };

  void start_recording();
  void start_replay();
  [[nodiscard]] Mode mode() const { return mode_; }

  /// Next offset for a block of the given shape (replay), or store one (record).
  void record(Matrix offset);
  const Matrix& next(Eigen::Index rows, Eigen::Index cols);

 private:
  Mode mode_ = Mode::Record;
  std::vector<Matrix> offsets_;
  std::size_t cursor_ = 0;
};

// ---- single-network operations --------------------------------------------

MessageVector apply_channel(const MessageVector& v, const FronthaulModel& model, Rng& rng);

/// y_0: OMA concatenation (length sum M_i0) or NOMA superposition (length M_U).
MessageVector uplink_combine(std::span<const MessageVector> messages, const ResourcePlan& plan,
                             const FronthaulModel& model, Rng& rng);

/// y_i: EN i's slice (OMA) or the multicast vector (NOMA), after the channel.
MessageVector downlink_dispatch(const MessageVector& cloud_out, const ResourcePlan& plan,
                                const FronthaulModel& model, Rng& rng, int i);

/// Randomised rounding of m in [0, C-1]: floor(m) or floor(m)+1 with probabilities
/// given by the distance to the other point, so E[q] = m.
int quantize(double m, int levels, Rng& rng);
int round_to_level(double m, int levels);
std::vector<int> quantize_vector(const MessageVector& m, int levels, Rng& rng);
std::vector<int> quantize_vector(const MessageVector& m, std::span<const int> levels, Rng& rng);

// ---- batched autodiff operations ------------------------------------------

ad::Var apply_channel(ad::Var v, const FronthaulModel& model, Rng& rng);
ad::Var uplink_combine(std::span<const ad::Var> messages, const ResourcePlan& plan, const FronthaulModel& model,
                       Rng& rng);
ad::Var downlink_dispatch(ad::Var cloud_out, const ResourcePlan& plan, const FronthaulModel& model, Rng& rng,
                          int i);
/// Elementwise quantisation with a straight-through (identity) backward rule.
ad::Var quantize(ad::Var m, int levels, Rounding rounding, Rng& rng, DrawTrace* trace = nullptr);

}  // namespace cecil::fronthaul
