#include "cecil/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "cecil/errors.hpp"
#include "cecil/serialize.hpp"

namespace cecil::harness {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kEvalStream = 0x5000;
constexpr std::uint64_t kTimingStream = 0x6000;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_short(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.8g", v);
  return buf;
}

// Typed access to one config section; every key read is marked, leftovers are errors.
class Section {
 public:
  Section(std::string name, const std::map<std::string, std::string>* values)
      : name_(std::move(name)), values_(values) {}

  std::optional<std::string> raw(const std::string& key) {
    used_.insert(key);
    if (values_ == nullptr) return std::nullopt;
    auto it = values_->find(key);
    if (it == values_->end()) return std::nullopt;
    return it->second;
  }

  template <class T, class Parse>
  void read(const std::string& key, T& target, Parse parse) {
    if (auto v = raw(key)) {
      try {
        target = parse(*v);
      } catch (const ConfigError& e) {
        throw ConfigError(where(key) + ": " + e.what());
      } catch (const std::exception&) {
        throw ConfigError(where(key) + ": cannot parse '" + *v + "'");
      }
    }
  }

  void read_int(const std::string& key, int& t) { read(key, t, parse_int); }
  void read_double(const std::string& key, double& t) { read(key, t, parse_double); }
  void read_bool(const std::string& key, bool& t) { read(key, t, parse_bool); }
  void read_u64(const std::string& key, std::uint64_t& t) { read(key, t, parse_u64); }
  void read_string(const std::string& key, std::string& t) {
    read(key, t, [](const std::string& s) { return s; });
  }
  void read_path(const std::string& key, fs::path& t) {
    read(key, t, [](const std::string& s) { return fs::path(s); });
  }

  void check_unused() const {
    if (values_ == nullptr) return;
    for (const auto& [k, v] : *values_) {
      if (!used_.count(k)) throw ConfigError("unknown config key " + where(k));
    }
  }

  static int parse_int(const std::string& s) {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size()) throw ConfigError("not an integer: '" + s + "'");
    return static_cast<int>(v);
  }
  static std::uint64_t parse_u64(const std::string& s) {
    std::size_t used = 0;
    if (!s.empty() && s[0] == '-') throw ConfigError("seed must be non-negative");
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw ConfigError("not an unsigned integer: '" + s + "'");
    return v;
  }
  static double parse_double(const std::string& s) {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw ConfigError("not a finite number: '" + s + "'");
    return v;
  }
  static bool parse_bool(const std::string& s) {
    if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
    if (s == "false" || s == "no" || s == "off" || s == "0") return false;
    throw ConfigError("not a boolean: '" + s + "'");
  }

 private:
  std::string where(const std::string& key) const { return (name_.empty() ? "" : "[" + name_ + "] ") + key; }

  std::string name_;
  const std::map<std::string, std::string>* values_;
  std::set<std::string> used_;
};

template <class T, class Parse>
std::vector<T> parse_list(const std::string& s, Parse parse) {
  std::vector<T> out;
  for (const auto& item : split(s, ',')) {
    if (item.empty()) throw ConfigError("empty item in list '" + s + "'");
    out.push_back(parse(item));
  }
  if (out.empty()) throw ConfigError("list must not be empty");
  return out;
}

std::optional<MessageHead> parse_head_option(const std::string& s) {
  if (s == "auto") return std::nullopt;
  return parse_message_head(s);
}

fronthaul::Rounding parse_rounding(const std::string& s) {
  if (s == "nearest") return fronthaul::Rounding::Nearest;
  if (s == "stochastic") return fronthaul::Rounding::Stochastic;
  throw ConfigError("rounding must be nearest or stochastic");
}

std::string shape_string(const NetworkShape& s) { return std::to_string(s.hidden) + "x" + std::to_string(s.depth); }

void log(const ExperimentHooks& hooks, const std::string& msg) {
  if (hooks.log) hooks.log(msg);
}

}  // namespace

// ---- ini ------------------------------------------------------------------------

IniData parse_ini(std::istream& in, const std::string& source) {
  IniData data;
  std::string section;
  data[section];
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      data[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    auto& sec = data[section];
    if (sec.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    sec[key] = trim(line.substr(eq + 1));
  }
  return data;
}

IniData read_ini(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_ini(in, path.string());
}

// ---- schemes --------------------------------------------------------------------

Scheme parse_scheme(const std::string& s) {
  if (s == "cecil-noma") return Scheme::CecilNoma;
  if (s == "cecil-oma") return Scheme::CecilOma;
  if (s == "ic") return Scheme::Ic;
  if (s == "nc") return Scheme::Nc;
  if (s == "pgd") return Scheme::Pgd;
  if (s == "max-power") return Scheme::MaxPower;
  if (s == "random-power") return Scheme::RandomPower;
  throw ConfigError("unknown scheme '" + s + "' (cecil-noma, cecil-oma, ic, nc, pgd, max-power, random-power)");
}

std::string config_name(Scheme s) {
  switch (s) {
    case Scheme::CecilNoma: return "cecil-noma";
    case Scheme::CecilOma: return "cecil-oma";
    case Scheme::Ic: return "ic";
    case Scheme::Nc: return "nc";
    case Scheme::Pgd: return "pgd";
    case Scheme::MaxPower: return "max-power";
    case Scheme::RandomPower: return "random-power";
  }
  return "?";
}

std::string scheme_label(Scheme s) {
  switch (s) {
    case Scheme::CecilNoma: return "CECIL-NOMA";
    case Scheme::CecilOma: return "CECIL-OMA";
    case Scheme::Ic: return "IC";
    case Scheme::Nc: return "NC";
    case Scheme::Pgd: return "PGD";
    case Scheme::MaxPower: return "MaxPower";
    case Scheme::RandomPower: return "RandomPower";
  }
  return "?";
}

// ---- experiment config ------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_ini(const IniData& ini) {
  static const std::set<std::string> known{"", "experiment", "train", "cecil", "ic", "nc", "pgd"};
  for (const auto& [name, values] : ini) {
    if (!known.count(name)) throw ConfigError("unknown config section [" + name + "]");
  }
  auto section = [&](const std::string& name) {
    auto it = ini.find(name);
    return Section(name, it == ini.end() ? nullptr : &it->second);
  };

  ExperimentConfig cfg;
  Section top = section("");
  top.check_unused();

  Section ex = section("experiment");
  ex.read_string("name", cfg.name);
  double static_power = env::kDefaultStaticPower;
  ex.read_double("static_power", static_power);
  std::string utility = "srmax";
  ex.read_string("utility", utility);
  try {
    cfg.utility = env::UtilityKind::parse(utility, static_power);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("[experiment] utility: ") + e.what());
  }
  ex.read_int("n", cfg.n);
  ex.read_double("power_budget", cfg.power_budget);
  ex.read("uplink", cfg.uplink, [](const std::string& s) { return parse_list<int>(s, Section::parse_int); });
  ex.read("downlink", cfg.downlink, [](const std::string& s) { return parse_list<int>(s, Section::parse_int); });
  ex.read("schemes", cfg.schemes, [](const std::string& s) { return parse_list<Scheme>(s, parse_scheme); });

  // Channels: an explicit descriptor list, extended by the SNR / bit sweeps.
  std::vector<fronthaul::FronthaulModel> channels;
  bool any_channel_key = false;
  if (auto v = ex.raw("channels")) {
    any_channel_key = true;
    try {
      channels = parse_list<fronthaul::FronthaulModel>(*v, fronthaul::parse_fronthaul_model);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("[experiment] channels: ") + e.what());
    }
  }
  auto extend = [&](const std::string& key, auto make) {
    if (auto v = ex.raw(key)) {
      any_channel_key = true;
      std::vector<double> values;
      try {
        values = parse_list<double>(*v, Section::parse_double);
      } catch (const std::exception& e) {
        throw ConfigError("[experiment] " + key + ": " + e.what());
      }
      for (double x : values) channels.push_back(make(x));
    }
  };
  extend("snr_db", [](double db) -> fronthaul::FronthaulModel {
    return fronthaul::AdditiveNoise{fronthaul::noise_variance_from_snr_db(db)};
  });
  extend("asym_snr_db", [](double db) -> fronthaul::FronthaulModel {
    return fronthaul::AsymmetricNoisy{fronthaul::noise_variance_from_snr_db(db)};
  });
  extend("bits", [](double b) -> fronthaul::FronthaulModel {
    if (b < 1 || b > 30 || b != std::floor(b)) throw ConfigError("[experiment] bits: integers in [1, 30]");
    return fronthaul::Quantized{1 << static_cast<int>(b)};
  });
  if (any_channel_key) cfg.channels = channels;

  ex.read_u64("seed", cfg.seed);
  cfg.train.seed = cfg.seed;
  cfg.ic.seed = cfg.seed;
  cfg.nc.seed = cfg.seed;
  cfg.pgd.seed = cfg.seed;
  ex.read_int("test_size", cfg.test_size);
  ex.read_u64("test_seed", cfg.test_seed);
  ex.read_path("test_set", cfg.test_set);
  ex.read_int("draws_per_sample", cfg.draws_per_sample);
  ex.read_int("timing_repeats", cfg.timing_repeats);
  ex.read_path("output", cfg.output);
  ex.read_path("checkpoint_dir", cfg.checkpoint_dir);
  ex.check_unused();

  Section tr = section("train");
  tr.read_int("epochs", cfg.train.epochs);
  tr.read_int("batches_per_epoch", cfg.train.batches_per_epoch);
  tr.read_int("batch_size", cfg.train.batch_size);
  tr.read_double("learning_rate", cfg.train.learning_rate);
  tr.read_double("final_learning_rate", cfg.train.final_learning_rate);
  tr.read_int("validation_size", cfg.train.validation_size);
  tr.read_int("report_interval", cfg.train.report_interval);
  tr.read_bool("keep_best", cfg.train.keep_best);
  tr.read_u64("seed", cfg.train.seed);
  tr.check_unused();

  Section ce = section("cecil");
  ce.read_bool("robust", cfg.cecil.robust);
  ce.read("nonrobust_rounding", cfg.cecil.nonrobust_rounding, parse_rounding);
  ce.read("uplink_head", cfg.cecil.uplink_head, parse_head_option);
  ce.read("downlink_head", cfg.cecil.downlink_head, parse_head_option);
  ce.read_int("encoder_hidden", cfg.cecil.encoder.hidden);
  ce.read_int("encoder_depth", cfg.cecil.encoder.depth);
  ce.read_int("cloud_hidden", cfg.cecil.cloud.hidden);
  ce.read_int("cloud_depth", cfg.cecil.cloud.depth);
  ce.read_int("decision_hidden", cfg.cecil.decision.hidden);
  ce.read_int("decision_depth", cfg.cecil.decision.depth);
  ce.read_bool("batch_norm", cfg.cecil.batch_norm);
  ce.check_unused();

  Section ic = section("ic");
  ic.read_int("hidden", cfg.ic.hidden);
  ic.read_int("depth", cfg.ic.depth);
  ic.read_bool("batch_norm", cfg.ic.batch_norm);
  ic.check_unused();

  Section nc = section("nc");
  nc.read_int("hidden", cfg.nc.hidden);
  nc.read_int("depth", cfg.nc.depth);
  nc.read_bool("batch_norm", cfg.nc.batch_norm);
  nc.check_unused();

  Section pg = section("pgd");
  pg.read_double("learning_rate", cfg.pgd.learning_rate);
  pg.read_double("decay_steps", cfg.pgd.decay_steps);
  pg.read_double("precision", cfg.pgd.precision);
  pg.read_int("max_iterations", cfg.pgd.max_iterations);
  pg.read_bool("multi_start", cfg.pgd.multi_start);
  pg.read_int("random_starts", cfg.pgd.random_starts);
  pg.check_unused();

  cfg.ic.n = cfg.nc.n = cfg.n;
  cfg.ic.power_budget = cfg.nc.power_budget = cfg.pgd.power_budget = cfg.power_budget;
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) { return from_ini(read_ini(path)); }

void ExperimentConfig::validate() const {
  if (n < 1) throw ConfigError("[experiment] n must be >= 1");
  if (!(power_budget > 0)) throw ConfigError("[experiment] power_budget must be positive");
  if (uplink.empty() || downlink.empty() || channels.empty() || schemes.empty()) {
    throw ConfigError("[experiment] sweep lists must not be empty");
  }
  for (int m : uplink) {
    if (m < 1) throw ConfigError("[experiment] uplink RB counts must be >= 1");
  }
  for (int m : downlink) {
    if (m < 1) throw ConfigError("[experiment] downlink RB counts must be >= 1");
  }
  for (const auto& c : channels) fronthaul::validate(c);
  if (test_size < 1) throw ConfigError("[experiment] test_size must be >= 1");
  if (draws_per_sample < 1) throw ConfigError("[experiment] draws_per_sample must be >= 1");
  if (timing_repeats < 1) throw ConfigError("[experiment] timing_repeats must be >= 1");
  train.validate();
  pgd.validate();
}

std::vector<SweepPoint> sweep_points(const ExperimentConfig& cfg) {
  std::vector<SweepPoint> out;
  for (int up : cfg.uplink) {
    for (int down : cfg.downlink) {
      for (const auto& ch : cfg.channels) out.push_back({up, down, ch});
    }
  }
  return out;
}

// ---- results -----------------------------------------------------------------------

const std::vector<std::string>& result_columns() {
  static const std::vector<std::string> cols{"scheme",       "N",         "M_U",       "M_D", "channel",
                                             "mean_utility", "std_error", "runtime_s", "seed"};
  return cols;
}

void write_results(std::ostream& out, const std::vector<ResultRow>& rows) {
  std::vector<std::string> extra_cols;
  for (const auto& r : rows) {
    for (const auto& [k, v] : r.extra) {
      if (std::find(extra_cols.begin(), extra_cols.end(), k) == extra_cols.end()) extra_cols.push_back(k);
    }
  }
  auto check_field = [](const std::string& s) {
    if (s.find_first_of(",\n\"") != std::string::npos) throw ConfigError("result field contains a delimiter: " + s);
    return s;
  };
  out << kResultsVersionLine << '\n';
  bool first = true;
  for (const auto& c : result_columns()) {
    out << (first ? "" : ",") << c;
    first = false;
  }
  for (const auto& c : extra_cols) out << ',' << check_field(c);
  out << '\n';
  for (const auto& r : rows) {
    out << check_field(r.scheme) << ',' << r.n << ',' << r.uplink << ',' << r.downlink << ',' << check_field(r.channel)
        << ',' << format_double(r.mean_utility) << ',' << format_double(r.std_error) << ','
        << format_short(r.runtime_s) << ',' << r.seed;
    for (const auto& c : extra_cols) {
      auto it = r.extra.find(c);
      out << ',' << (it == r.extra.end() ? "" : check_field(it->second));
    }
    out << '\n';
  }
}

void write_results(const fs::path& path, const std::vector<ResultRow>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  write_results(out, rows);
}

std::vector<ResultRow> read_results(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != kResultsVersionLine) {
    throw ConfigError("result file does not start with '" + std::string(kResultsVersionLine) + "'");
  }
  if (!std::getline(in, line)) throw ConfigError("result file has no header");
  const auto header = split(trim(line), ',');
  std::map<std::string, std::size_t> index;
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (!index.emplace(header[k], k).second) throw ConfigError("duplicate result column '" + header[k] + "'");
  }
  for (const auto& c : result_columns()) {
    if (!index.count(c)) throw ConfigError("result file lacks column '" + c + "'");
  }
  std::vector<ResultRow> rows;
  int lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != header.size()) {
      throw ConfigError("result line " + std::to_string(lineno) + " has " + std::to_string(f.size()) +
                        " fields, header has " + std::to_string(header.size()));
    }
    auto get = [&](const std::string& c) -> const std::string& { return f[index.at(c)]; };
    try {
      ResultRow r;
      r.scheme = get("scheme");
      r.n = Section::parse_int(get("N"));
      r.uplink = Section::parse_int(get("M_U"));
      r.downlink = Section::parse_int(get("M_D"));
      r.channel = get("channel");
      r.mean_utility = Section::parse_double(get("mean_utility"));
      r.std_error = Section::parse_double(get("std_error"));
      r.runtime_s = Section::parse_double(get("runtime_s"));
      r.seed = Section::parse_u64(get("seed"));
      for (std::size_t k = 0; k < header.size(); ++k) {
        if (std::find(result_columns().begin(), result_columns().end(), header[k]) == result_columns().end()) {
          r.extra[header[k]] = f[k];
        }
      }
      rows.push_back(std::move(r));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("result line " + std::to_string(lineno) + " is malformed");
    }
  }
  return rows;
}

std::vector<ResultRow> read_results(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  return read_results(in);
}

// ---- test sets ----------------------------------------------------------------------

TestSet make_test_set(int n, int size, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return {env::sample_gain_matrix(size, n, rng), n, seed};
}

void write_test_set(const fs::path& path, const TestSet& set) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  const int n = set.n;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) out << (j + i == 0 ? "" : ",") << "a_" << j << "_" << i;
  }
  out << '\n';
  for (Eigen::Index r = 0; r < set.gains.rows(); ++r) {
    for (Eigen::Index c = 0; c < set.gains.cols(); ++c) out << (c == 0 ? "" : ",") << format_double(set.gains(r, c));
    out << '\n';
  }
  Manifest m{{"format", "cecil-testset 1"},
             {"n", std::to_string(n)},
             {"size", std::to_string(set.gains.rows())},
             {"distribution", "exponential(1)"}};
  if (set.seed) m["seed"] = std::to_string(*set.seed);
  write_manifest(fs::path(path.string() + ".manifest"), m);
}

TestSet read_test_set(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open test set " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("test set " + path.string() + " is empty");
  const auto header = split(trim(line), ',');
  const int n = env::network_size_from_width(static_cast<Eigen::Index>(header.size()));
  std::vector<double> values;
  Eigen::Index rows = 0;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != header.size()) throw ConfigError("test set row " + std::to_string(rows + 1) + " has wrong width");
    for (const auto& x : f) values.push_back(Section::parse_double(x));
    ++rows;
  }
  if (rows == 0) throw ConfigError("test set " + path.string() + " has no rows");
  TestSet set;
  set.n = n;
  set.gains = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), rows, static_cast<Eigen::Index>(header.size()));
  if ((set.gains.array() < 0).any()) throw ConfigError("test set contains negative gains");
  const fs::path mpath(path.string() + ".manifest");
  if (fs::exists(mpath)) {
    const Manifest m = read_manifest(mpath);
    if (m.count("n") && Section::parse_int(m.at("n")) != n) throw ConfigError("test set manifest: N mismatch");
    if (m.count("size") && Section::parse_int(m.at("size")) != rows) {
      throw ConfigError("test set manifest: size mismatch");
    }
    if (m.count("seed")) set.seed = Section::parse_u64(m.at("seed"));
  }
  return set;
}

TestSet load_or_make_test_set(const ExperimentConfig& cfg) {
  if (cfg.test_set.empty()) return make_test_set(cfg.n, cfg.test_size, cfg.test_seed);
  TestSet set = read_test_set(cfg.test_set);
  if (set.n != cfg.n) throw ConfigError("test set " + cfg.test_set.string() + " is for N=" + std::to_string(set.n));
  return set;
}

// ---- checkpoints -----------------------------------------------------------------------

void write_manifest(const fs::path& path, const Manifest& manifest) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (const auto& [k, v] : manifest) out << k << " = " << v << '\n';
}

Manifest read_manifest(const fs::path& path) {
  const IniData ini = read_ini(path);
  if (ini.size() != 1) throw ConfigError("manifest " + path.string() + " must not contain sections");
  return ini.at("");
}

bool checkpoint_exists(const fs::path& stem) {
  return fs::exists(stem.string() + ".tensors") && fs::exists(stem.string() + ".manifest");
}

void save_checkpoint(PowerPolicy& policy, const Manifest& manifest, const fs::path& stem) {
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  std::vector<ad::NamedTensor> state = policy.state();
  save_tensors(fs::path(stem.string() + ".tensors"), state);
  write_manifest(fs::path(stem.string() + ".manifest"), manifest);
}

void load_checkpoint(PowerPolicy& policy, const Manifest& expected, const fs::path& stem) {
  const Manifest found = read_manifest(fs::path(stem.string() + ".manifest"));
  for (const auto& [k, v] : expected) {
    auto it = found.find(k);
    if (it == found.end()) throw ConfigError("checkpoint " + stem.string() + " lacks manifest key '" + k + "'");
    if (it->second != v) {
      throw ConfigError("checkpoint " + stem.string() + " mismatch on '" + k + "': expected " + v + ", found " +
                        it->second);
    }
  }
  std::vector<ad::NamedTensor> state = policy.state();
  load_tensors(fs::path(stem.string() + ".tensors"), state);
}

// ---- schemes ----------------------------------------------------------------------------

SchemeInstance build_scheme(const ExperimentConfig& cfg, Scheme scheme, const SweepPoint& point) {
  SchemeInstance inst;
  inst.scheme = scheme;
  inst.label = scheme_label(scheme);
  Manifest& m = inst.manifest;
  m["scheme"] = config_name(scheme);
  m["n"] = std::to_string(cfg.n);
  m["power_budget"] = format_double(cfg.power_budget);
  m["utility"] = cfg.utility.label();
  if (!cfg.utility.is_sum_rate()) m["static_power"] = format_double(cfg.utility.static_power);
  m["seed"] = std::to_string(cfg.seed);
  m["train.seed"] = std::to_string(cfg.train.seed);
  m["train.epochs"] = std::to_string(cfg.train.epochs);
  m["train.batches_per_epoch"] = std::to_string(cfg.train.batches_per_epoch);
  m["train.batch_size"] = std::to_string(cfg.train.batch_size);
  m["train.learning_rate"] = format_double(cfg.train.learning_rate);
  m["train.final_learning_rate"] = format_double(cfg.train.final_learning_rate);

  switch (scheme) {
    case Scheme::CecilNoma:
    case Scheme::CecilOma: {
      const auto mode = scheme == Scheme::CecilNoma ? fronthaul::AccessMode::Noma : fronthaul::AccessMode::Oma;
      CecilConfig cc;
      cc.plan = fronthaul::ResourcePlan::make(mode, cfg.n, point.uplink, point.downlink);
      cc.power_budget = cfg.power_budget;
      cc.encoder = cfg.cecil.encoder;
      cc.cloud = cfg.cecil.cloud;
      cc.decision = cfg.cecil.decision;
      cc.batch_norm = cfg.cecil.batch_norm;
      cc.seed = cfg.seed;
      const bool plain_quantized = !cfg.cecil.robust && std::holds_alternative<fronthaul::Quantized>(point.channel);
      HeadPolicy heads = HeadPolicy::for_channel(plain_quantized ? fronthaul::FronthaulModel{fronthaul::Perfect{}}
                                                                 : point.channel);
      if (cfg.cecil.uplink_head) heads.uplink = *cfg.cecil.uplink_head;
      if (cfg.cecil.downlink_head) heads.downlink = *cfg.cecil.downlink_head;
      cc.heads = heads;
      inst.test_channel = point.channel;
      if (cfg.cecil.robust) {
        inst.train_channel = point.channel;
      } else {
        inst.train_channel = fronthaul::Perfect{};
        if (auto* q = std::get_if<fronthaul::Quantized>(&inst.test_channel)) q->rounding = cfg.cecil.nonrobust_rounding;
        if (!std::holds_alternative<fronthaul::Perfect>(point.channel)) inst.label += "-nonrobust";
      }
      cc.channel = inst.train_channel;
      m["plan"] = cc.plan.label();
      m["train_channel"] = fronthaul::describe(inst.train_channel);
      m["heads"] = to_string(heads.uplink) + "/" + to_string(heads.downlink) + "/" + format_double(heads.bound);
      m["encoder"] = shape_string(cc.encoder);
      m["cloud"] = shape_string(cc.cloud);
      m["decision"] = shape_string(cc.decision);
      m["batch_norm"] = cc.batch_norm ? "true" : "false";
      inst.policy = std::make_unique<CecilModel>(cc);
      break;
    }
    case Scheme::Ic: {
      IcConfig ic = cfg.ic;
      ic.n = cfg.n;
      ic.power_budget = cfg.power_budget;
      ic.seed = cfg.seed;
      m["network"] = std::to_string(ic.hidden) + "x" + std::to_string(ic.depth);
      m["batch_norm"] = ic.batch_norm ? "true" : "false";
      inst.policy = std::make_unique<IcModel>(ic);
      break;
    }
    case Scheme::Nc: {
      NcConfig nc = cfg.nc;
      nc.n = cfg.n;
      nc.power_budget = cfg.power_budget;
      nc.seed = cfg.seed;
      m["network"] = std::to_string(nc.hidden) + "x" + std::to_string(nc.depth);
      m["batch_norm"] = nc.batch_norm ? "true" : "false";
      inst.policy = std::make_unique<NcModel>(nc);
      break;
    }
    case Scheme::Pgd:
    case Scheme::MaxPower:
    case Scheme::RandomPower: break;
  }
  return inst;
}

fs::path checkpoint_stem(const ExperimentConfig& cfg, const SchemeInstance& inst) {
  if (cfg.checkpoint_dir.empty() || !inst.policy) return {};
  std::string name = config_name(inst.scheme) + "_" + cfg.utility.label();
  for (const char* key : {"plan", "train_channel", "heads"}) {
    if (auto it = inst.manifest.find(key); it != inst.manifest.end()) name += "_" + it->second;
  }
  for (char& c : name) {
    if (c == '/' || c == '=' || c == ' ' || c == '(' || c == ')' || c == ',') c = '-';
  }
  // Distinct manifests never share a file.
  std::uint64_t h = 14695981039346656037ULL;
  for (const auto& [k, v] : inst.manifest) {
    for (const char c : k + '=' + v + '\n') h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  }
  char tag[17];
  std::snprintf(tag, sizeof tag, "%016llx", static_cast<unsigned long long>(h));
  return cfg.checkpoint_dir / (name + "_" + tag);
}

TrainingCurve prepare_scheme(const ExperimentConfig& cfg, SchemeInstance& inst) {
  if (!inst.policy) return {};
  const fs::path stem = checkpoint_stem(cfg, inst);
  if (!stem.empty() && checkpoint_exists(stem)) {
    load_checkpoint(*inst.policy, inst.manifest, stem);
    return {};
  }
  TrainingCurve curve = train(*inst.policy, cfg.utility, cfg.train);
  if (!stem.empty()) save_checkpoint(*inst.policy, inst.manifest, stem);
  return curve;
}

Matrix scheme_powers(const ExperimentConfig& cfg, SchemeInstance& inst, const Matrix& gains, Rng& rng) {
  switch (inst.scheme) {
    case Scheme::Pgd: return pgd_batch(gains, cfg.utility, cfg.pgd);
    case Scheme::MaxPower: return max_power_batch(gains.rows(), cfg.n, cfg.power_budget);
    case Scheme::RandomPower: return random_power_batch(gains.rows(), cfg.n, rng, cfg.power_budget);
    default: break;
  }
  if (auto* model = dynamic_cast<CecilModel*>(inst.policy.get())) model->set_channel(inst.test_channel);
  Matrix out(gains.rows(), cfg.n);
  for (Eigen::Index start = 0; start < gains.rows(); start += kEvalChunk) {
    const Eigen::Index len = std::min(kEvalChunk, gains.rows() - start);
    out.middleRows(start, len) = inst.policy->infer(gains.middleRows(start, len), rng, ad::Mode::Eval);
  }
  return out;
}

double time_inference(const std::function<void()>& run, int repeats) {
  if (repeats < 1) throw ConfigError("timing repeats must be >= 1");
  std::vector<double> t;
  for (int k = 0; k < repeats; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    run();
    t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(t.begin(), t.end());
  return repeats % 2 == 1 ? t[repeats / 2] : 0.5 * (t[repeats / 2 - 1] + t[repeats / 2]);
}

double time_inference(const ExperimentConfig& cfg, SchemeInstance& inst, const Matrix& gains, int repeats) {
  Rng rng = make_rng(cfg.seed, kTimingStream);
  return time_inference([&] { (void)scheme_powers(cfg, inst, gains, rng); }, repeats);
}

EvalResult evaluate_scheme(const ExperimentConfig& cfg, SchemeInstance& inst, const Matrix& gains) {
  Rng rng = make_rng(cfg.seed, kEvalStream);
  if (inst.policy) {
    if (auto* model = dynamic_cast<CecilModel*>(inst.policy.get())) model->set_channel(inst.test_channel);
    return evaluate(*inst.policy, cfg.utility, gains, rng, cfg.draws_per_sample);
  }
  return summarize(env::batch_utility(cfg.utility, gains, scheme_powers(cfg, inst, gains, rng)));
}

// ---- experiments --------------------------------------------------------------------------

std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg, const ExperimentHooks& hooks) {
  cfg.validate();
  const TestSet test = load_or_make_test_set(cfg);
  std::vector<ResultRow> rows;
  // Schemes blind to the fronthaul are evaluated once and repeated at every sweep point.
  std::map<Scheme, ResultRow> fixed;

  for (const SweepPoint& point : sweep_points(cfg)) {
    const std::string channel = fronthaul::describe(point.channel);
    for (Scheme scheme : cfg.schemes) {
      ResultRow row;
      if (!is_cecil(scheme) && fixed.count(scheme)) {
        row = fixed.at(scheme);
      } else {
        SchemeInstance inst = build_scheme(cfg, scheme, point);
        log(hooks, "preparing " + inst.label + " (M_U=" + std::to_string(point.uplink) +
                       ", M_D=" + std::to_string(point.downlink) + ", " + channel + ")");
        const TrainingCurve curve = prepare_scheme(cfg, inst);
        if (!curve.validation.empty()) {
          log(hooks, "  trained in " + format_short(curve.seconds) + " s, best validation " +
                         format_short(curve.best()) + " at epoch " + std::to_string(curve.best_epoch));
        }
        const EvalResult ev = evaluate_scheme(cfg, inst, test.gains);
        row.scheme = inst.label;
        row.n = cfg.n;
        row.mean_utility = ev.mean;
        row.std_error = ev.std_error;
        row.runtime_s = time_inference(cfg, inst, test.gains, cfg.timing_repeats);
        row.seed = cfg.seed;
        if (!is_cecil(scheme)) fixed[scheme] = row;
        log(hooks, "  " + inst.label + " utility " + format_short(ev.mean) + " +- " + format_short(ev.std_error));
      }
      row.uplink = point.uplink;
      row.downlink = point.downlink;
      row.channel = channel;
      rows.push_back(std::move(row));
    }
  }
  if (!cfg.output.empty()) write_results(cfg.output, rows);
  return rows;
}

}  // namespace cecil::harness
