#pragma once

// Three-stage cooperative inference:
//   1. each EN encodes its local observation into an uplink message,
//   2. the cloud maps the combined uplink signal to downlink message(s),
//   3. each EN decides its power from its observation and what it received.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cecil/fronthaul.hpp"
#include "cecil/mlp.hpp"
#include "cecil/policy.hpp"

namespace cecil {

enum class MessageHead { Linear, Tanh, Bounded };

std::string to_string(MessageHead h);
MessageHead parse_message_head(const std::string& s);

/// Output activation of the message-generating networks. Bounded is a sigmoid scaled
/// to [0, bound] so the quantiser input stays in range.
struct HeadPolicy {
  MessageHead uplink = MessageHead::Linear;
  MessageHead downlink = MessageHead::Linear;
  double bound = 1.0;

  /// linear for perfect links, tanh for noisy links, [0, C-1] for quantised links.
  static HeadPolicy for_channel(const fronthaul::FronthaulModel& model);
  bool operator==(const HeadPolicy&) const = default;
};

struct NetworkShape {
  int hidden = 50;
  int depth = 3;  // weight layers, including the output layer
  bool operator==(const NetworkShape&) const = default;
};

struct CecilConfig {
  fronthaul::ResourcePlan plan = fronthaul::ResourcePlan::noma(1, 1, 1);
  fronthaul::FronthaulModel channel = fronthaul::Perfect{};
  std::optional<HeadPolicy> heads;  // derived from `channel` when empty
  double power_budget = 10.0;
  NetworkShape encoder{50, 3};
  NetworkShape cloud{100, 5};
  NetworkShape decision{50, 3};
  bool batch_norm = true;
  /// One encoder and one decision network shared by all ENs.
  bool tied = false;
  std::uint64_t seed = 1;

  [[nodiscard]] HeadPolicy head_policy() const { return heads.value_or(HeadPolicy::for_channel(channel)); }
};

class CecilModel final : public PowerPolicy {
 public:
  explicit CecilModel(CecilConfig config);

  [[nodiscard]] int network_size() const override { return config_.plan.size(); }
  [[nodiscard]] double power_budget() const override { return config_.power_budget; }
  [[nodiscard]] std::string label() const override;
  [[nodiscard]] bool stochastic() const override;

  ad::Var forward(ad::Tape& tape, const Matrix& gains, Rng& rng, ad::Mode mode) override;
  std::vector<ad::Parameter*> parameters() override;
  std::vector<ad::NamedTensor> state() override;

  [[nodiscard]] const CecilConfig& config() const { return config_; }

  /// Swaps the fronthaul model used at inference (e.g. testing a model trained on
  /// perfect links over noisy ones). Head activations are left untouched.
  void set_channel(fronthaul::FronthaulModel channel);

  /// While set, quantisation draws are recorded to / replayed from the trace.
  void set_draw_trace(fronthaul::DrawTrace* trace) { trace_ = trace; }

  ad::Mlp& encoder(int i) { return encoders_[config_.tied ? 0 : i]; }
  ad::Mlp& cloud() { return cloud_; }
  ad::Mlp& decision(int i) { return decisions_[config_.tied ? 0 : i]; }

 private:
  ad::Var maybe_quantize(ad::Var m, Rng& rng);

  CecilConfig config_;
  std::vector<ad::Mlp> encoders_;
  ad::Mlp cloud_;
  std::vector<ad::Mlp> decisions_;
  fronthaul::DrawTrace* trace_ = nullptr;
};

}  // namespace cecil
