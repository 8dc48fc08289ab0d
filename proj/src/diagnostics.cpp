#include "cecil/diagnostics.hpp"

#include <cmath>
#include <functional>
#include <limits>

#include "cecil/baselines.hpp"
#include "cecil/cecil_model.hpp"
#include "cecil/errors.hpp"
#include "cecil/fran_env.hpp"
#include "cecil/fronthaul.hpp"

namespace cecil::diagnostics {

namespace {

constexpr double kKinkMargin = 1e-3;
constexpr int kMaxResamples = 200;
// Deep composite losses lose ~1e-16 |L| / h to cancellation, which swamps gradients
// near 1e-8 at small steps. The five-point stencil allows a wider step; probes that
// flip a relu fall back to smaller ones.
constexpr double kPipelineStep = 3e-4;

bool is_buffer(const std::string& name) { return name.find(".bn.running_") != std::string::npos; }

Matrix gaussian(Eigen::Index r, Eigen::Index c, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

std::vector<ad::Mlp*> networks(PowerPolicy& policy) {
  std::vector<ad::Mlp*> out;
  if (auto* c = dynamic_cast<CecilModel*>(&policy)) {
    const int count = c->config().tied ? 1 : c->network_size();
    for (int i = 0; i < count; ++i) out.push_back(&c->encoder(i));
    out.push_back(&c->cloud());
    for (int i = 0; i < count; ++i) out.push_back(&c->decision(i));
  } else if (auto* ic = dynamic_cast<IcModel*>(&policy)) {
    out.push_back(&ic->network());
  } else if (auto* nc = dynamic_cast<NcModel*>(&policy)) {
    for (int i = 0; i < nc->network_size(); ++i) out.push_back(&nc->network(i));
  }
  return out;
}

// Single MLP under a fixed linear read-out; kinks are avoided by resampling inputs.
GradCheckCase mlp_case(const std::string& name, ad::MlpSpec spec, Rng& rng, int batch) {
  ad::Mlp net(name, std::move(spec), rng);
  for (auto& d : net.dense()) {
    if (d.bias) d.bias->value = 0.1 * gaussian(1, d.bias->value.cols(), rng);
  }
  for (auto& bn : net.norms()) {
    if (bn) {
      bn->gamma.value = Matrix::Ones(1, bn->gamma.value.cols()) + 0.2 * gaussian(1, bn->gamma.value.cols(), rng);
      bn->beta.value = 0.2 * gaussian(1, bn->beta.value.cols(), rng);
    }
  }
  const Matrix weights = gaussian(batch, net.output_width(), rng);
  Matrix x;
  net.track_relu(true);
  auto loss = [&](ad::Tape& t) {
    std::vector<ad::BatchNormState> saved;
    for (auto& bn : net.norms()) {
      if (bn) saved.push_back(bn->state);
    }
    ad::Var y = net.forward(t, t.constant(x), ad::Mode::Train);
    std::size_t k = 0;
    for (auto& bn : net.norms()) {
      if (bn) bn->state = saved[k++];
    }
    return ad::mean(ad::mul_constant(y, weights));
  };
  for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
    x = gaussian(batch, net.input_width(), rng);
    ad::Tape probe(false);
    (void)loss(probe);
    if (net.last_relu_margin() >= kKinkMargin) break;
  }
  auto params = net.parameters();
  return {name, ad::grad_check(params, loss)};
}

GradCheckCase policy_case(const std::string& name, PowerPolicy& policy, const env::UtilityKind& utility, int n,
                          Rng& rng, fronthaul::DrawTrace* trace, double step) {
  const std::uint64_t draw_seed = rng();
  for (ad::Mlp* net : networks(policy)) net->track_relu(true);
  Matrix gains;
  ad::LossFn base;
  for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
    gains = env::sample_gain_matrix(8, n, rng);
    base = frozen_policy_loss(policy, utility, gains, draw_seed);
    if (trace != nullptr) trace->start_recording();
    ad::Tape probe(false);
    (void)base(probe);
    if (relu_margin(policy) >= kKinkMargin) break;
  }
  ad::LossFn loss = [trace, base](ad::Tape& t) {
    if (trace != nullptr) trace->start_replay();
    return base(t);
  };
  auto params = policy.parameters();
  ad::GradCheckOptions opt;
  opt.step = step;
  opt.order = 4;
  opt.region = [&policy] { return relu_pattern(policy); };
  return {name, ad::grad_check(params, loss, opt)};
}

}  // namespace

ad::LossFn frozen_policy_loss(PowerPolicy& policy, const env::UtilityKind& utility, const Matrix& gains,
                              std::uint64_t seed) {
  return [&policy, utility, gains, seed](ad::Tape& t) {
    std::vector<Matrix> buffers;
    auto state = policy.state();
    for (const auto& s : state) {
      if (is_buffer(s.name)) buffers.push_back(*s.value);
    }
    Rng rng(seed);
    ad::Var x = policy.forward(t, gains, rng, ad::Mode::Train);
    std::size_t k = 0;
    for (const auto& s : state) {
      if (is_buffer(s.name)) *s.value = buffers[k++];
    }
    return ad::mean(env::utility_node(utility, gains, x));
  };
}

std::uint64_t relu_pattern(PowerPolicy& policy) {
  std::uint64_t h = 0;
  for (ad::Mlp* net : networks(policy)) h = h * 31 + net->last_relu_pattern();
  return h;
}

double relu_margin(PowerPolicy& policy) {
  double m = std::numeric_limits<double>::infinity();
  for (ad::Mlp* net : networks(policy)) m = std::min(m, net->last_relu_margin());
  return m;
}

std::vector<GradCheckCase> gradcheck_suite(std::uint64_t seed) {
  using ad::Activation;
  Rng rng = make_rng(seed, 0x7000);
  std::vector<GradCheckCase> out;

  {
    ad::MlpSpec spec;
    spec.input_width = 4;
    spec.layers = {{5, Activation::Linear, 1, false}, {3, Activation::Linear, 1, false}};
    out.push_back(mlp_case("layer/linear", spec, rng, 6));
  }
  out.push_back(mlp_case("layer/relu", ad::MlpSpec::stack(4, 6, 3, 2, Activation::Linear, 1, false), rng, 6));
  out.push_back(mlp_case("layer/sigmoid", ad::MlpSpec::stack(4, 6, 2, 2, Activation::Sigmoid, 1, false), rng, 6));
  out.push_back(mlp_case("layer/tanh", ad::MlpSpec::stack(4, 6, 2, 2, Activation::Tanh, 1, false), rng, 6));
  out.push_back(
      mlp_case("layer/scaled-sigmoid", ad::MlpSpec::stack(4, 6, 2, 2, Activation::ScaledSigmoid, 10, false), rng, 6));
  out.push_back(mlp_case("layer/batch-norm", ad::MlpSpec::stack(4, 6, 3, 2, Activation::Tanh, 1, true), rng, 8));

  for (const auto& utility : {env::UtilityKind::sum_rate(), env::UtilityKind::energy_efficiency()}) {
    ad::Parameter x("x", Matrix::Zero(6, 4));
    std::uniform_real_distribution<double> u(0.5, 9.5);
    for (Eigen::Index k = 0; k < x.value.size(); ++k) x.value.data()[k] = u(rng);
    const Matrix gains = env::sample_gain_matrix(6, 4, rng);
    std::vector<ad::Parameter*> ps{&x};
    out.push_back({"utility/" + utility.label(),
                   ad::grad_check(ps, [&](ad::Tape& t) { return ad::mean(env::utility_node(utility, gains, t.parameter(x))); })});
  }

  const int n = 3;
  const auto sr = env::UtilityKind::sum_rate();
  {
    IcModel ic(IcConfig{n, 10.0, 8, 4, true, seed});
    out.push_back(policy_case("policy/ic", ic, sr, n, rng, nullptr, kPipelineStep));
    NcModel nc(NcConfig{n, 10.0, 8, 3, true, seed});
    out.push_back(policy_case("policy/nc", nc, sr, n, rng, nullptr, kPipelineStep));
  }

  const std::vector<fronthaul::FronthaulModel> channels{fronthaul::Perfect{}, fronthaul::AdditiveNoise{0.1},
                                                        fronthaul::AsymmetricNoisy{0.1}, fronthaul::Quantized{4}};
  for (auto mode : {fronthaul::AccessMode::Noma, fronthaul::AccessMode::Oma}) {
    for (const auto& channel : channels) {
      CecilConfig cc;
      cc.plan = fronthaul::ResourcePlan::make(mode, n, 2 * n, n);
      cc.channel = channel;
      cc.encoder = {6, 3};
      cc.cloud = {8, 3};
      cc.decision = {6, 3};
      cc.seed = seed;
      CecilModel model(cc);
      fronthaul::DrawTrace trace;
      const bool quantized = fronthaul::quantization_levels(channel).has_value();
      if (quantized) model.set_draw_trace(&trace);
      out.push_back(policy_case("cecil/" + fronthaul::to_string(mode) + "/" + fronthaul::describe(channel), model, sr,
                                n, rng, quantized ? &trace : nullptr, kPipelineStep));
      model.set_draw_trace(nullptr);
    }
  }
  return out;
}

bool QuantizerSelftest::passed() const {
  for (const auto& c : checks) {
    if (!c.pass) return false;
  }
  return !checks.empty();
}

QuantizerSelftest quantizer_selftest(std::span<const int> levels, int grid, int draws, std::uint64_t seed,
                                     double sigmas) {
  if (grid < 2 || draws < 1) throw ConfigError("quantizer selftest: grid >= 2 and draws >= 1 required");
  QuantizerSelftest out;
  for (int c : levels) {
    if (c < 2) throw ConfigError("quantizer selftest: levels must be >= 2");
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(c));
    for (int g = 0; g < grid; ++g) {
      QuantizerCheck chk;
      chk.levels = c;
      chk.input = static_cast<double>(c - 1) * g / (grid - 1);
      double sum = 0;
      for (int k = 0; k < draws; ++k) sum += fronthaul::quantize(chk.input, c, rng);
      chk.mean = sum / draws;
      const double frac = chk.input - std::floor(chk.input);
      chk.std_error = std::sqrt(frac * (1.0 - frac) / draws);
      chk.pass = std::abs(chk.mean - chk.input) <= sigmas * chk.std_error + 1e-12;
      out.checks.push_back(chk);
    }
  }
  return out;
}

}  // namespace cecil::diagnostics
