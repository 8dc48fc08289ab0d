#pragma once

// Configuration-driven experiments: INI configs, pinned test sets, checkpoints and
// the versioned result CSV.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cecil/baselines.hpp"
#include "cecil/cecil_model.hpp"
#include "cecil/fran_env.hpp"
#include "cecil/fronthaul.hpp"
#include "cecil/training.hpp"

namespace cecil::harness {

// ---- config files -----------------------------------------------------------

/// section -> key -> raw value. Keys outside any section land in section "".
using IniData = std::map<std::string, std::map<std::string, std::string>>;

IniData parse_ini(std::istream& in, const std::string& source = "<config>");
IniData read_ini(const std::filesystem::path& path);

enum class Scheme { CecilNoma, CecilOma, Ic, Nc, Pgd, MaxPower, RandomPower };

/// Config spelling: cecil-noma, cecil-oma, ic, nc, pgd, max-power, random-power.
Scheme parse_scheme(const std::string& s);
std::string config_name(Scheme s);
/// Label written to the result table.
std::string scheme_label(Scheme s);
[[nodiscard]] inline bool is_cecil(Scheme s) { return s == Scheme::CecilNoma || s == Scheme::CecilOma; }

struct CecilOptions {
  /// Train on the tested channel. When false the model is trained on perfect links and
  /// only meets the channel at test time.
  bool robust = true;
  /// Rounding used when a non-robust model is tested on quantised links.
  fronthaul::Rounding nonrobust_rounding = fronthaul::Rounding::Nearest;
  std::optional<MessageHead> uplink_head;
  std::optional<MessageHead> downlink_head;
  NetworkShape encoder{50, 3};
  NetworkShape cloud{100, 5};
  NetworkShape decision{50, 3};
  bool batch_norm = true;
};

struct ExperimentConfig {
  std::string name = "experiment";
  env::UtilityKind utility = env::UtilityKind::sum_rate();
  int n = 5;
  double power_budget = env::kDefaultPowerBudget;
  std::vector<int> uplink{25};
  std::vector<int> downlink{5};
  std::vector<fronthaul::FronthaulModel> channels{fronthaul::Perfect{}};
  std::vector<Scheme> schemes{Scheme::CecilNoma, Scheme::CecilOma, Scheme::Ic, Scheme::Nc,
                              Scheme::Pgd,       Scheme::MaxPower, Scheme::RandomPower};
  std::uint64_t seed = 1;
  int test_size = 10000;
  std::uint64_t test_seed = 7;
  /// Load the test set from here instead of regenerating it from test_seed.
  std::filesystem::path test_set;
  int draws_per_sample = 1;
  int timing_repeats = 5;
  std::filesystem::path output;
  /// Trained models are saved here and reused by later runs with a matching manifest.
  std::filesystem::path checkpoint_dir;

  TrainConfig train;
  CecilOptions cecil;
  IcConfig ic;
  NcConfig nc;
  PgdConfig pgd;

  /// Unknown sections or keys fail with a ConfigError naming them.
  static ExperimentConfig from_ini(const IniData& ini);
  static ExperimentConfig load(const std::filesystem::path& path);
  void validate() const;
};

struct SweepPoint {
  int uplink = 0;
  int downlink = 0;
  fronthaul::FronthaulModel channel = fronthaul::Perfect{};
};

/// Cartesian product uplink x downlink x channels, in that nesting order.
std::vector<SweepPoint> sweep_points(const ExperimentConfig& cfg);

// ---- results ------------------------------------------------------------------

struct ResultRow {
  std::string scheme;
  int n = 0;
  int uplink = 0;
  int downlink = 0;
  std::string channel;
  double mean_utility = 0.0;
  double std_error = 0.0;
  double runtime_s = 0.0;
  std::uint64_t seed = 0;
  /// Columns this version does not know, carried through read/write untouched.
  std::map<std::string, std::string> extra;
};

inline constexpr const char* kResultsVersionLine = "# cecil-results v1";
const std::vector<std::string>& result_columns();

void write_results(std::ostream& out, const std::vector<ResultRow>& rows);
void write_results(const std::filesystem::path& path, const std::vector<ResultRow>& rows);
std::vector<ResultRow> read_results(std::istream& in);
std::vector<ResultRow> read_results(const std::filesystem::path& path);

// ---- test sets ----------------------------------------------------------------

struct TestSet {
  Matrix gains;  // size x N^2
  int n = 0;
  std::optional<std::uint64_t> seed;
};

TestSet make_test_set(int n, int size, std::uint64_t seed);
/// CSV (header plus one row-major matrix per line) and a `<path>.manifest` sidecar.
void write_test_set(const std::filesystem::path& path, const TestSet& set);
TestSet read_test_set(const std::filesystem::path& path);

// ---- checkpoints --------------------------------------------------------------

using Manifest = std::map<std::string, std::string>;

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

/// `<stem>.tensors` and `<stem>.manifest`.
void save_checkpoint(PowerPolicy& policy, const Manifest& manifest, const std::filesystem::path& stem);
/// Fails with a ConfigError naming the first key whose value differs from `expected`.
void load_checkpoint(PowerPolicy& policy, const Manifest& expected, const std::filesystem::path& stem);
[[nodiscard]] bool checkpoint_exists(const std::filesystem::path& stem);

// ---- models -------------------------------------------------------------------

/// A scheme instantiated for one sweep point, with everything needed to train,
/// checkpoint and evaluate it.
struct SchemeInstance {
  Scheme scheme = Scheme::Pgd;
  std::unique_ptr<PowerPolicy> policy;  // null for PGD / max / random
  /// Channel used during training (CECIL only).
  fronthaul::FronthaulModel train_channel = fronthaul::Perfect{};
  /// Channel used at test time (CECIL only).
  fronthaul::FronthaulModel test_channel = fronthaul::Perfect{};
  Manifest manifest;
  std::string label;
};

SchemeInstance build_scheme(const ExperimentConfig& cfg, Scheme scheme, const SweepPoint& point);

/// Checkpoint location of a learned scheme under cfg.checkpoint_dir (empty when
/// checkpointing is off or the scheme is not learned).
std::filesystem::path checkpoint_stem(const ExperimentConfig& cfg, const SchemeInstance& instance);

/// Trains a learned scheme (or loads it from cfg.checkpoint_dir when present).
/// Returns the training curve; empty when the model was loaded or is not learned.
TrainingCurve prepare_scheme(const ExperimentConfig& cfg, SchemeInstance& instance);

/// (B x N) powers for every test sample; `rng` drives random power and channel draws.
Matrix scheme_powers(const ExperimentConfig& cfg, SchemeInstance& instance, const Matrix& gains, Rng& rng);

/// Median wall-clock seconds over `repeats` calls of `run`.
double time_inference(const std::function<void()>& run, int repeats = 5);
/// Full-batch inference time of a prepared scheme on `gains`.
double time_inference(const ExperimentConfig& cfg, SchemeInstance& instance, const Matrix& gains, int repeats = 5);

EvalResult evaluate_scheme(const ExperimentConfig& cfg, SchemeInstance& instance, const Matrix& gains);

struct ExperimentHooks {
  std::function<void(const std::string&)> log;
};

/// Trains or loads every enabled scheme at every sweep point, evaluates it on the
/// pinned test set and writes cfg.output when set.
std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg, const ExperimentHooks& hooks = {});

TestSet load_or_make_test_set(const ExperimentConfig& cfg);

}  // namespace cecil::harness
