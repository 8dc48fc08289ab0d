#include "cecil/cecil_model.hpp"

#include "cecil/errors.hpp"
#include "cecil/fran_env.hpp"

namespace cecil {

namespace {

ad::Activation head_activation(MessageHead h) {
  switch (h) {
    case MessageHead::Linear: return ad::Activation::Linear;
    case MessageHead::Tanh: return ad::Activation::Tanh;
    case MessageHead::Bounded: return ad::Activation::ScaledSigmoid;
  }
  return ad::Activation::Linear;
}

ad::MlpSpec make_spec(int input, const NetworkShape& shape, int output, ad::Activation head, double scale,
                      bool batch_norm) {
  if (shape.depth < 1 || shape.hidden < 1) throw ConfigError("network depth and width must be >= 1");
  ad::MlpSpec spec = ad::MlpSpec::stack(input, shape.hidden, shape.depth, output, head, scale, batch_norm);
  // A linear message feeds the receiver's first (normalised) layer, which cancels any
  // constant offset.
  if (head == ad::Activation::Linear && batch_norm) spec.layers.back().bias = false;
  return spec;
}

}  // namespace

std::string to_string(MessageHead h) {
  switch (h) {
    case MessageHead::Linear: return "linear";
    case MessageHead::Tanh: return "tanh";
    case MessageHead::Bounded: return "bounded";
  }
  return "?";
}

MessageHead parse_message_head(const std::string& s) {
  if (s == "linear") return MessageHead::Linear;
  if (s == "tanh") return MessageHead::Tanh;
  if (s == "bounded") return MessageHead::Bounded;
  throw ConfigError("unknown message head '" + s + "'");
}

HeadPolicy HeadPolicy::for_channel(const fronthaul::FronthaulModel& model) {
  if (auto levels = fronthaul::quantization_levels(model)) {
    return {MessageHead::Bounded, MessageHead::Bounded, static_cast<double>(*levels - 1)};
  }
  if (std::holds_alternative<fronthaul::Perfect>(model)) return {};
  return {MessageHead::Tanh, MessageHead::Tanh, 1.0};
}

CecilModel::CecilModel(CecilConfig config) : config_(std::move(config)) {
  fronthaul::validate(config_.channel);
  if (!(config_.power_budget > 0)) throw ConfigError("power budget P must be positive");
  const HeadPolicy heads = config_.head_policy();
  if ((heads.uplink == MessageHead::Bounded || heads.downlink == MessageHead::Bounded) && !(heads.bound > 0)) {
    throw ConfigError("bounded message head needs a positive bound");
  }
  const auto& plan = config_.plan;
  const int n = plan.size();
  if (config_.tied && plan.mode() == fronthaul::AccessMode::Oma) {
    bool uniform = true;
    for (int i = 1; i < n; ++i) {
      uniform = uniform && plan.uplink_width(i) == plan.uplink_width(0) && plan.downlink_width(i) == plan.downlink_width(0);
    }
    if (!uniform) throw ConfigError("tied parameters need identical per-EN RB splits");
  }

  Rng rng = make_rng(config_.seed, 0x1000);
  const int networks = config_.tied ? 1 : n;
  const ad::Activation up = head_activation(heads.uplink);
  const ad::Activation down = head_activation(heads.downlink);
  for (int i = 0; i < networks; ++i) {
    encoders_.emplace_back("enc" + std::to_string(i),
                           make_spec(n, config_.encoder, plan.uplink_width(i), up, heads.bound, config_.batch_norm), rng);
  }
  cloud_ = ad::Mlp("cloud", make_spec(plan.cloud_input_width(), config_.cloud, plan.downlink_total(), down, heads.bound,
                                      config_.batch_norm),
                   rng);
  for (int i = 0; i < networks; ++i) {
    decisions_.emplace_back("dec" + std::to_string(i),
                            make_spec(n + plan.downlink_width(i), config_.decision, 1, ad::Activation::ScaledSigmoid,
                                      config_.power_budget, config_.batch_norm),
                            rng);
  }
}

std::string CecilModel::label() const {
  return config_.plan.mode() == fronthaul::AccessMode::Noma ? "CECIL-NOMA" : "CECIL-OMA";
}

bool CecilModel::stochastic() const { return !std::holds_alternative<fronthaul::Perfect>(config_.channel); }

void CecilModel::set_channel(fronthaul::FronthaulModel channel) {
  fronthaul::validate(channel);
  config_.channel = channel;
}

ad::Var CecilModel::maybe_quantize(ad::Var m, Rng& rng) {
  if (const auto* q = std::get_if<fronthaul::Quantized>(&config_.channel)) {
    return fronthaul::quantize(m, q->levels, q->rounding, rng, trace_);
  }
  return m;
}

ad::Var CecilModel::forward(ad::Tape& tape, const Matrix& gains, Rng& rng, ad::Mode mode) {
  const auto& plan = config_.plan;
  const int n = plan.size();
  if (gains.cols() != static_cast<Eigen::Index>(n) * n) {
    throw ConfigError("CECIL model for N=" + std::to_string(n) + " got a gain batch of width " +
                      std::to_string(gains.cols()));
  }

  std::vector<ad::Var> observations;
  std::vector<ad::Var> uplink;
  for (int i = 0; i < n; ++i) {
    observations.push_back(tape.constant(env::local_observations(gains, n, i)));
    uplink.push_back(maybe_quantize(encoder(i).forward(tape, observations.back(), mode), rng));
  }
  const ad::Var y0 = fronthaul::uplink_combine(uplink, plan, config_.channel, rng);
  const ad::Var cloud_out = maybe_quantize(cloud_.forward(tape, y0, mode), rng);

  std::vector<ad::Var> powers;
  for (int i = 0; i < n; ++i) {
    const ad::Var yi = fronthaul::downlink_dispatch(cloud_out, plan, config_.channel, rng, i);
    const ad::Var in[] = {observations[i], yi};
    powers.push_back(decision(i).forward(tape, ad::concat_cols(in), mode));
  }
  return ad::concat_cols(powers);
}

std::vector<ad::Parameter*> CecilModel::parameters() {
  std::vector<ad::Parameter*> out;
  auto append = [&out](ad::Mlp& m) {
    for (ad::Parameter* p : m.parameters()) out.push_back(p);
  };
  for (auto& m : encoders_) append(m);
  append(cloud_);
  for (auto& m : decisions_) append(m);
  return out;
}

std::vector<ad::NamedTensor> CecilModel::state() {
  std::vector<ad::NamedTensor> out;
  auto append = [&out](ad::Mlp& m) {
    for (const ad::NamedTensor& t : m.state()) out.push_back(t);
  };
  for (auto& m : encoders_) append(m);
  append(cloud_);
  for (auto& m : decisions_) append(m);
  return out;
}

}  // namespace cecil
