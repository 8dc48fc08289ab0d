// Command-line front end: train, eval, sweep, quantizer-selftest, gradcheck,
// make-testset, time.
//
// Exit codes: 0 success, 2 configuration error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cecil/diagnostics.hpp"
#include "cecil/errors.hpp"
#include "cecil/harness.hpp"

namespace fs = std::filesystem;
using namespace cecil;
using namespace cecil::harness;

namespace {

constexpr int kConfigExit = 2;
constexpr int kNumericExit = 3;

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;  // section.key=value
  std::string output;
  std::string checkpoint_dir;
  std::string test_set;
  std::vector<std::string> schemes;
  int epochs = -1;
  bool verbose = false;
};

void add_config_flags(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.path, "experiment INI file");
  cmd->add_option("--set", args.overrides, "override a config key: section.key=value (repeatable)");
  cmd->add_option("-o,--output", args.output, "result CSV path");
  cmd->add_option("--checkpoint-dir", args.checkpoint_dir, "directory for trained models");
  cmd->add_option("--test-set", args.test_set, "pinned test set CSV");
  cmd->add_option("--schemes", args.schemes, "restrict to these schemes")->delimiter(',');
  cmd->add_option("--epochs", args.epochs, "training epochs");
  cmd->add_flag("-v,--verbose", args.verbose, "progress on stderr");
}

ExperimentConfig load_config(const ConfigArgs& args) {
  IniData ini = args.path.empty() ? IniData{} : read_ini(args.path);
  for (const auto& o : args.overrides) {
    const auto eq = o.find('=');
    const auto dot = o.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw ConfigError("--set expects section.key=value, got '" + o + "'");
    }
    ini[o.substr(0, dot)][o.substr(dot + 1, eq - dot - 1)] = o.substr(eq + 1);
  }
  if (!args.output.empty()) ini["experiment"]["output"] = args.output;
  if (!args.checkpoint_dir.empty()) ini["experiment"]["checkpoint_dir"] = args.checkpoint_dir;
  if (!args.test_set.empty()) ini["experiment"]["test_set"] = args.test_set;
  if (args.epochs >= 0) ini["train"]["epochs"] = std::to_string(args.epochs);
  if (!args.schemes.empty()) {
    std::string joined;
    for (const auto& s : args.schemes) joined += (joined.empty() ? "" : ",") + s;
    ini["experiment"]["schemes"] = joined;
  }
  ExperimentConfig cfg = ExperimentConfig::from_ini(ini);
  if (args.verbose && cfg.train.report_interval == 0) cfg.train.report_interval = 10;
  return cfg;
}

ExperimentHooks hooks(bool verbose) {
  ExperimentHooks h;
  if (verbose) h.log = [](const std::string& s) { std::cerr << s << '\n'; };
  return h;
}

void print_rows(const std::vector<ResultRow>& rows) {
  std::printf("%-24s %4s %4s %4s %-12s %12s %10s %10s\n", "scheme", "N", "M_U", "M_D", "channel", "utility",
              "std_err", "time_s");
  for (const auto& r : rows) {
    std::printf("%-24s %4d %4d %4d %-12s %12.6f %10.2e %10.4f\n", r.scheme.c_str(), r.n, r.uplink, r.downlink,
                r.channel.c_str(), r.mean_utility, r.std_error, r.runtime_s);
  }
}

int cmd_train(const ConfigArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  if (cfg.checkpoint_dir.empty()) throw ConfigError("train needs --checkpoint-dir (or [experiment] checkpoint_dir)");
  for (const SweepPoint& point : sweep_points(cfg)) {
    for (Scheme scheme : cfg.schemes) {
      if (scheme == Scheme::Pgd || scheme == Scheme::MaxPower || scheme == Scheme::RandomPower) continue;
      SchemeInstance inst = build_scheme(cfg, scheme, point);
      const TrainingCurve curve = prepare_scheme(cfg, inst);
      const fs::path stem = checkpoint_stem(cfg, inst);
      if (curve.validation.empty()) {
        std::printf("%-24s %-12s up to date: %s\n", inst.label.c_str(), fronthaul::describe(point.channel).c_str(),
                    stem.string().c_str());
      } else {
        std::printf("%-24s %-12s M_U=%d M_D=%d best %.6f @ epoch %d (%.1f s) -> %s\n", inst.label.c_str(),
                    fronthaul::describe(point.channel).c_str(), point.uplink, point.downlink, curve.best(),
                    curve.best_epoch, curve.seconds, stem.string().c_str());
      }
    }
  }
  return 0;
}

int cmd_eval(const ConfigArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  if (cfg.checkpoint_dir.empty()) throw ConfigError("eval needs --checkpoint-dir with trained models");
  for (const SweepPoint& point : sweep_points(cfg)) {
    for (Scheme scheme : cfg.schemes) {
      const SchemeInstance inst = build_scheme(cfg, scheme, point);
      const fs::path stem = checkpoint_stem(cfg, inst);
      if (!stem.empty() && !checkpoint_exists(stem)) {
        throw ConfigError("no trained model for " + inst.label + " at " + stem.string() + "; run `train` first");
      }
    }
  }
  const auto rows = run_experiment(cfg, hooks(args.verbose));
  print_rows(rows);
  return 0;
}

int cmd_sweep(const ConfigArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  const auto rows = run_experiment(cfg, hooks(args.verbose));
  print_rows(rows);
  if (!cfg.output.empty()) std::printf("wrote %s\n", cfg.output.string().c_str());
  return 0;
}

int cmd_time(const ConfigArgs& args) {
  const ExperimentConfig cfg = load_config(args);
  const TestSet test = load_or_make_test_set(cfg);
  const SweepPoint point = sweep_points(cfg).front();
  std::printf("%-24s %12s\n", "scheme", "median_s");
  for (Scheme scheme : cfg.schemes) {
    SchemeInstance inst = build_scheme(cfg, scheme, point);
    prepare_scheme(cfg, inst);
    std::printf("%-24s %12.5f\n", inst.label.c_str(), time_inference(cfg, inst, test.gains, cfg.timing_repeats));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cooperative edge inference for fronthaul-limited F-RAN power control"};
  app.require_subcommand(1);

  ConfigArgs train_args, eval_args, sweep_args, time_args;
  add_config_flags(app.add_subcommand("train", "train learned schemes and save checkpoints"), train_args);
  add_config_flags(app.add_subcommand("eval", "evaluate trained checkpoints on the pinned test set"), eval_args);
  add_config_flags(app.add_subcommand("sweep", "train (or load) and evaluate every scheme at every sweep point"),
                   sweep_args);
  add_config_flags(app.add_subcommand("time", "median full-batch inference time per scheme"), time_args);

  auto* qs = app.add_subcommand("quantizer-selftest", "Monte-Carlo unbiasedness check of the stochastic quantiser");
  std::vector<int> levels{2, 4, 8, 16};
  int grid = 50, draws = 100000;
  std::uint64_t qseed = 1;
  double sigmas = 4.0;
  qs->add_option("--levels", levels, "quantisation levels C")->delimiter(',');
  qs->add_option("--grid", grid, "inputs per level, evenly spaced on [0, C-1]");
  qs->add_option("--draws", draws, "draws per input");
  qs->add_option("--seed", qseed);
  qs->add_option("--sigmas", sigmas, "tolerance in standard errors");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every layer and the full pipelines");
  std::uint64_t gseed = 1;
  double tolerance = 1e-4;
  gc->add_option("--seed", gseed);
  gc->add_option("--tolerance", tolerance, "max relative error");

  auto* mt = app.add_subcommand("make-testset", "sample and persist a pinned channel test set");
  int mt_n = 5, mt_size = 10000;
  std::uint64_t mt_seed = 7;
  std::string mt_out;
  mt->add_option("-n,--n", mt_n, "network size N");
  mt->add_option("--size", mt_size, "number of samples");
  mt->add_option("--seed", mt_seed);
  mt->add_option("-o,--output", mt_out, "CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigExit;
  }

  try {
    if (app.got_subcommand("train")) return cmd_train(train_args);
    if (app.got_subcommand("eval")) return cmd_eval(eval_args);
    if (app.got_subcommand("sweep")) return cmd_sweep(sweep_args);
    if (app.got_subcommand("time")) return cmd_time(time_args);
    if (app.got_subcommand("quantizer-selftest")) {
      const auto r = diagnostics::quantizer_selftest(levels, grid, draws, qseed, sigmas);
      int failed = 0;
      for (const auto& c : r.checks) {
        if (!c.pass) {
          ++failed;
          std::printf("FAIL C=%d m=%.4f mean=%.6f se=%.2e\n", c.levels, c.input, c.mean, c.std_error);
        }
      }
      std::printf("%zu checks, %d outside %.1f standard errors\n", r.checks.size(), failed, sigmas);
      return r.passed() ? 0 : kNumericExit;
    }
    if (app.got_subcommand("gradcheck")) {
      bool ok = true;
      for (const auto& c : diagnostics::gradcheck_suite(gseed)) {
        const bool pass = c.result.max_relative_error < tolerance;
        ok = ok && pass;
        std::printf("%-28s %.3e %s\n", c.name.c_str(), c.result.max_relative_error, pass ? "ok" : "FAIL");
      }
      return ok ? 0 : kNumericExit;
    }
    if (app.got_subcommand("make-testset")) {
      write_test_set(mt_out, make_test_set(mt_n, mt_size, mt_seed));
      std::printf("wrote %s (%d x %d)\n", mt_out.c_str(), mt_size, mt_n * mt_n);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumericExit;
  }
  return 0;
}
