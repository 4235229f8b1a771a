#include "saspec/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "saspec/analyze.hpp"
#include "saspec/error.hpp"
#include "saspec/metric_log.hpp"
#include "saspec/snapshot.hpp"
#include "saspec/train.hpp"
#include "saspec/verify.hpp"

namespace saspec::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr const char* kLogLevelEnv = "SASPEC_LOG_LEVEL";
const std::vector<std::string> kLogLevels = {"trace", "debug", "info", "warn", "error", "critical", "off"};

struct Globals {
  std::string log_level = "warn";
  std::uint64_t seed = 0;
  std::string out = "saspec_out";
};

struct AnalyzeArgs {
  std::vector<std::string> paths;
  std::string weight;
  std::string input;
  std::string grad;
  bool lenient = false;
  CollapseConfig collapse;
};

struct TrainArgs {
  std::string scenario = "stable";
  double eta = 0.0;
  std::vector<std::size_t> dims;
  std::size_t steps = 0;
  std::size_t batch_size = 0;
  std::size_t log_every = 0;
  std::vector<std::size_t> monitor{1};
  std::size_t snapshot_every = 0;
};

struct VerifyArgs {
  std::string suite = "all";
  std::size_t trials = 0;
};

struct ReportArgs {
  std::string path;
  std::string format = "table";
  double explosion_factor = 10.0;
  double weight_sigma1 = 0.0;
  double grad_sigma1 = 0.0;
  double max_activation = 0.0;
  double stable_rank = 0.0;
  CollapseConfig collapse;
};

std::shared_ptr<spdlog::logger> make_logger(std::ostream& err, const std::string& level) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
  auto logger = std::make_shared<spdlog::logger>("saspec", std::move(sink));
  logger->set_pattern("[%l] %v");
  logger->set_level(spdlog::level::from_str(level));
  return logger;
}

void add_collapse_flags(CLI::App* sub, CollapseConfig& c) {
  sub->add_option("--sign-frac", c.sign_frac_threshold, "Fraction of one sign that counts as concentrated")
      ->capture_default_str();
  sub->add_option("--mean-abs", c.mean_abs_threshold, "Minimum |mean SA| for a concentrated check")
      ->capture_default_str();
  sub->add_option("--window", c.window, "Checks considered for a warning")->capture_default_str();
  sub->add_option("--consecutive", c.consecutive_required, "Concentrated checks in a row that mean collapse")
      ->capture_default_str();
}

json collapse_json(const CollapseConfig& c) {
  return json{{"sign_frac", c.sign_frac_threshold},
              {"mean_abs", c.mean_abs_threshold},
              {"window", c.window},
              {"consecutive", c.consecutive_required}};
}

json base_config(std::string_view command, const Globals& g) {
  return json{{"command", command}, {"log_level", g.log_level}, {"seed", g.seed}, {"out", g.out}};
}

/// Creates the output directory and removes a stale file of the same name so
/// every run starts a fresh log.
fs::path fresh_output(const std::string& dir, const std::string& name) {
  fs::create_directories(dir);
  fs::path p = fs::path(dir) / name;
  fs::remove(p);
  return p;
}

std::ofstream open_log(const fs::path& p) {
  std::ofstream f(p, std::ios::binary | std::ios::app);
  if (!f) throw Error(ErrorCode::kIoError, "cannot open " + p.string() + " for writing");
  return f;
}

int verdict_exit(VerdictStatus s) {
  switch (s) {
    case VerdictStatus::kHealthy:
      return kExitOk;
    case VerdictStatus::kWarning:
      return kExitWarning;
    case VerdictStatus::kCollapsed:
      return kExitCollapsed;
  }
  return kExitError;
}

std::string describe(const DiversityVerdict& v) {
  std::string s(to_string(v.status));
  if (v.onset_step) s += fmt::format(" (onset step {}", *v.onset_step);
  if (v.dominant_sign) s += fmt::format("{}{}", v.onset_step ? ", " : " (", to_string(*v.dominant_sign));
  if (v.onset_step || v.dominant_sign) s += ")";
  return s;
}

// ---------------------------------------------------------------- analyze

int cmd_analyze(const Globals& g, const AnalyzeArgs& a, spdlog::logger& log, std::ostream& out, std::ostream& err) {
  json cfg = base_config("analyze", g);
  cfg["paths"] = a.paths;
  cfg["weight"] = a.weight;
  cfg["input"] = a.input;
  cfg["grad"] = a.grad.empty() ? json(nullptr) : json(a.grad);
  cfg["strict_finite"] = !a.lenient;
  cfg["collapse"] = collapse_json(a.collapse);
  out << "config: " << cfg.dump() << '\n';

  AnalyzeOptions opts;
  opts.weight = a.weight;
  opts.input = a.input;
  if (!a.grad.empty()) opts.grad = a.grad;
  opts.collapse = a.collapse;
  opts.strict_finite = !a.lenient;
  SnapshotAnalyzer analyzer(opts);

  const std::vector<fs::path> files = discover_snapshots(a.paths);
  if (files.empty()) throw Error(ErrorCode::kEmptySeries, "no .sasn snapshots found");
  log.info("analyzing {} snapshots", files.size());

  const fs::path log_path = fresh_output(g.out, "analyze_metrics.jsonl");
  std::ofstream metrics = open_log(log_path);

  out << fmt::format("{:>10}  {:>8}  {:>6}  {:>6}  {:>10}  {:>8}  {}\n", "step", "sa_mean", "frac+", "frac-",
                     "sigma1", "srank", "verdict");
  for (const fs::path& file : files) {
    try {
      const Snapshot snap = read_snapshot(file, opts.strict_finite);
      if (snap.non_finite_count > 0) log.warn("{}: {} non-finite values", file.string(), snap.non_finite_count);
      const MetricRecord rec = analyzer.add(snap);
      metrics << format_metric_line(rec) << '\n' << std::flush;
      out << fmt::format("{:>10}  {:>8.4f}  {:>6.3f}  {:>6.3f}  {:>10.4f}  {:>8.3f}  {}\n", rec.step, rec.sa_mean,
                         rec.sa_frac_positive, rec.sa_frac_negative, rec.weight_sigma1, rec.stable_rank,
                         to_string(rec.verdict));
    } catch (const Error& e) {
      if (a.lenient && e.code() == ErrorCode::kNonFinite) {
        log.warn("{}: skipped: {}", file.string(), e.what());
        continue;
      }
      err << "error: " << file.string() << ": " << e.what() << '\n';
      return kExitError;
    }
  }
  if (analyzer.series().empty()) throw Error(ErrorCode::kEmptySeries, "every snapshot was skipped");

  const DiversityVerdict v = analyzer.verdict();
  out << "verdict: " << describe(v) << '\n';
  out << "metrics: " << log_path.string() << '\n';
  return verdict_exit(v.status);
}

// ---------------------------------------------------------------- train-toy

int cmd_train(const Globals& g, const TrainArgs& a, bool eta_set, bool steps_set, bool bs_set, bool log_every_set,
              spdlog::logger& log, std::ostream& out) {
  const Scenario scenario = scenario_from_string(a.scenario);
  TrainConfig cfg = scenario_config(scenario, g.seed);
  const std::vector<std::size_t> dims = a.dims.empty() ? scenario_dims() : a.dims;
  if (dims.size() < 3) throw Error(ErrorCode::kBadDims, "--dims needs at least one hidden layer");
  if (eta_set) cfg.eta = a.eta;
  if (steps_set) cfg.steps = a.steps;
  if (bs_set) cfg.batch_size = a.batch_size;
  if (log_every_set) cfg.log_every = a.log_every;
  cfg.dataset.dim = dims.front();
  cfg.dataset.n_classes = dims.back();
  for (std::size_t l : a.monitor) {
    if (l < 1 || l >= dims.size()) {
      throw Error(ErrorCode::kInvalidConfig, fmt::format("--monitor {} is outside layers 1..{}", l, dims.size() - 1));
    }
  }
  if (a.snapshot_every > 0 && a.snapshot_every % cfg.log_every != 0) {
    throw Error(ErrorCode::kInvalidConfig, "--snapshot-every must be a multiple of --log-every");
  }

  json cfg_json = base_config("train-toy", g);
  cfg_json["scenario"] = a.scenario;
  cfg_json["dims"] = dims;
  cfg_json["eta"] = cfg.eta;
  cfg_json["steps"] = cfg.steps;
  cfg_json["batch_size"] = cfg.batch_size;
  cfg_json["log_every"] = cfg.log_every;
  cfg_json["monitor"] = a.monitor;
  cfg_json["snapshot_every"] = a.snapshot_every;
  cfg_json["explosion_factor"] = cfg.explosion_factor;
  cfg_json["dataset"] = json{{"n_classes", cfg.dataset.n_classes},
                             {"dim", cfg.dataset.dim},
                             {"n_samples", cfg.dataset.n_samples},
                             {"cluster_spread", cfg.dataset.cluster_spread},
                             {"offset_norm", cfg.dataset.offset_norm},
                             {"seed", cfg.dataset.seed}};
  out << "config: " << cfg_json.dump() << '\n';
  cfg.validate();

  const fs::path log_path = fresh_output(g.out, "train_metrics.jsonl");
  const fs::path snap_dir = fs::path(g.out) / "snapshots";
  if (a.snapshot_every > 0) {
    fs::create_directories(snap_dir);
    for (const auto& entry : fs::directory_iterator(snap_dir)) {
      if (entry.path().extension() == ".sasn") fs::remove(entry.path());
    }
  }

  CheckHook hook;
  if (a.snapshot_every > 0) {
    hook = [&](std::uint64_t step, const MLPState& model, const std::vector<Matrix>& inputs,
               const std::vector<Matrix>& grads) {
      if (step % a.snapshot_every != 0) return;
      for (std::size_t l : a.monitor) {
        if (!model.weights[l - 1].all_finite() || !inputs[l - 1].all_finite() || !grads[l - 1].all_finite()) {
          log.warn("step {}: non-finite tensors, snapshot skipped", step);
          return;
        }
      }
      Snapshot snap;
      snap.step = step;
      for (std::size_t l : a.monitor) {
        const std::string prefix = "layer" + std::to_string(l);
        snap.entries.push_back(matrix_tensor(prefix + ".weight", model.weights[l - 1]));
        snap.entries.push_back(matrix_tensor(prefix + ".input", inputs[l - 1]));
        snap.entries.push_back(matrix_tensor(prefix + ".grad", grads[l - 1]));
      }
      const fs::path p = snap_dir / fmt::format("step_{:08}.sasn", step);
      write_snapshot(p, snap);
      log.debug("wrote {}", p.string());
    };
  }

  const MLPState model = init_mlp(dims, cfg.seed, cfg.init_scale);
  const TrainResult result = train_scenario(model, cfg, a.monitor, hook);

  std::ofstream metrics = open_log(log_path);
  for (const TrainLogRecord& rec : result.log) {
    for (const LayerCheck& check : rec.layers) {
      metrics << format_metric_line(make_metric_record(check.observation, "layer" + std::to_string(check.layer),
                                                       check.verdict, rec.loss))
              << '\n';
    }
  }
  metrics.flush();

  if (result.stop_reason) log.warn("monitoring stopped early: {}", *result.stop_reason);
  out << "initial loss: " << fmt::format("{:.6f}", result.initial_loss) << '\n';
  if (!result.log.empty()) out << "final loss: " << fmt::format("{:.6f}", result.log.back().loss) << '\n';
  out << "explosion step: " << (result.explosion_step ? std::to_string(*result.explosion_step) : "none") << '\n';
  const auto onset = result.earliest_onset();
  out << "collapse onset: " << (onset ? std::to_string(*onset) : "none") << '\n';
  for (std::size_t i = 0; i < result.verdicts.size(); ++i) {
    out << "layer" << a.monitor[i] << ": " << describe(result.verdicts[i]) << '\n';
  }
  out << "metrics: " << log_path.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- verify

int cmd_verify(const Globals& g, const VerifyArgs& a, std::ostream& out) {
  const std::vector<std::string> suites = a.suite == "all" ? suite_names() : std::vector<std::string>{a.suite};
  json cfg = base_config("verify", g);
  cfg["suite"] = a.suite;
  cfg["trials"] = a.trials == 0 ? json("default") : json(a.trials);
  out << "config: " << cfg.dump() << '\n';

  bool all_pass = true;
  for (const std::string& name : suites) {
    const std::size_t trials = a.trials == 0 ? default_trials(name) : a.trials;
    const SuiteOutcome o = run_suite(name, trials, g.seed);
    out << (o.pass ? "PASS " : "FAIL ") << name << " (" << trials << " trials)\n";
    for (const std::string& line : o.lines) out << "  " << line << '\n';
    for (const std::string& f : o.failures) out << "  failed: " << f << '\n';
    all_pass = all_pass && o.pass;
  }
  return all_pass ? kExitOk : kExitVerifyFailed;
}

// ---------------------------------------------------------------- report

struct Signal {
  std::string layer;
  std::string name;
  std::optional<double> threshold;
  std::optional<std::uint64_t> step;
};

std::optional<std::uint64_t> find_explosion(const std::vector<MetricRecord>& records, double factor) {
  std::optional<double> base;
  for (const MetricRecord& r : records) {
    if (!r.loss) continue;
    if (!base) {
      base = *r.loss;
      if (!std::isfinite(*base)) return r.step;
      continue;
    }
    if (!std::isfinite(*r.loss) || *r.loss > factor * *base) return r.step;
  }
  return std::nullopt;
}

template <typename Pred>
std::optional<std::uint64_t> first_step(const std::vector<const MetricRecord*>& rows, Pred pred) {
  for (const MetricRecord* r : rows) {
    if (pred(*r)) return r->step;
  }
  return std::nullopt;
}

int cmd_report(const Globals& g, const ReportArgs& a, const std::map<std::string, bool>& set, std::ostream& out,
               std::ostream& err) {
  json cfg = base_config("report", g);
  cfg["path"] = a.path;
  cfg["format"] = a.format;
  cfg["explosion_factor"] = a.explosion_factor;
  json thresholds = json::object();
  if (set.at("weight_sigma1")) thresholds["weight_sigma1"] = a.weight_sigma1;
  if (set.at("grad_sigma1")) thresholds["grad_sigma1"] = a.grad_sigma1;
  if (set.at("max_activation")) thresholds["max_activation"] = a.max_activation;
  if (set.at("stable_rank")) thresholds["stable_rank"] = a.stable_rank;
  cfg["thresholds"] = thresholds;
  cfg["collapse"] = collapse_json(a.collapse);
  out << "config: " << cfg.dump() << '\n';
  a.collapse.validate();

  const std::vector<MetricRecord> records = read_metric_log(a.path);
  if (records.empty()) {
    err << "error: " << to_string(ErrorCode::kEmptySeries) << ": " << a.path << " has no records\n";
    return kExitError;
  }

  std::vector<std::string> layers;
  std::map<std::string, std::vector<const MetricRecord*>> by_layer;
  for (const MetricRecord& r : records) {
    auto [it, inserted] = by_layer.try_emplace(r.layer);
    if (inserted) layers.push_back(r.layer);
    it->second.push_back(&r);
  }

  const std::optional<std::uint64_t> explosion = find_explosion(records, a.explosion_factor);
  std::vector<Signal> signals;
  VerdictStatus worst = VerdictStatus::kHealthy;
  for (const std::string& layer : layers) {
    const auto& rows = by_layer[layer];
    std::vector<SADistribution> series;
    for (const MetricRecord* r : rows) series.push_back(as_distribution(*r));
    const DiversityVerdict v = detect_collapse(series, a.collapse);
    if (static_cast<int>(v.status) > static_cast<int>(worst)) worst = v.status;
    signals.push_back({layer, "sa_collapse", std::nullopt, v.onset_step});

    if (set.at("weight_sigma1")) {
      signals.push_back({layer, "weight_sigma1", a.weight_sigma1,
                         first_step(rows, [&](const MetricRecord& r) { return r.weight_sigma1 > a.weight_sigma1; })});
    }
    if (set.at("grad_sigma1")) {
      signals.push_back({layer, "grad_sigma1", a.grad_sigma1, first_step(rows, [&](const MetricRecord& r) {
                           return r.grad_sigma1 && *r.grad_sigma1 > a.grad_sigma1;
                         })});
    }
    if (set.at("max_activation")) {
      signals.push_back({layer, "max_activation", a.max_activation, first_step(rows, [&](const MetricRecord& r) {
                           return r.max_activation > a.max_activation;
                         })});
    }
    if (set.at("stable_rank")) {
      signals.push_back({layer, "stable_rank", a.stable_rank,
                         first_step(rows, [&](const MetricRecord& r) { return r.stable_rank < a.stable_rank; })});
    }
  }

  auto lead = [&](const Signal& s) -> std::optional<std::int64_t> {
    if (!s.step || !explosion) return std::nullopt;
    return static_cast<std::int64_t>(*explosion) - static_cast<std::int64_t>(*s.step);
  };

  if (a.format == "records") {
    for (const Signal& s : signals) {
      json j{{"layer", s.layer}, {"signal", s.name}};
      j["threshold"] = s.threshold ? json(*s.threshold) : json(nullptr);
      j["step"] = s.step ? json(*s.step) : json(nullptr);
      const auto l = lead(s);
      j["lead"] = l ? json(*l) : json(nullptr);
      out << j.dump() << '\n';
    }
    json summary{{"explosion_step", explosion ? json(*explosion) : json(nullptr)}, {"verdict", to_string(worst)}};
    out << summary.dump() << '\n';
    return kExitOk;
  }

  out << fmt::format("{:<16}  {:<26}  {:>10}  {:>8}\n", "layer", "signal", "step", "lead");
  for (const Signal& s : signals) {
    const std::string name = s.threshold ? fmt::format("{} {} {:g}", s.name, s.name == "stable_rank" ? "<" : ">",
                                                       *s.threshold)
                                         : s.name;
    const auto l = lead(s);
    out << fmt::format("{:<16}  {:<26}  {:>10}  {:>8}\n", s.layer, name, s.step ? std::to_string(*s.step) : "-",
                       l ? std::to_string(*l) : "-");
  }
  if (!explosion && worst == VerdictStatus::kHealthy) {
    out << "no explosion; verdict healthy\n";
  } else {
    out << "explosion step: " << (explosion ? std::to_string(*explosion) : "none") << '\n';
    out << "verdict: " << to_string(worst) << '\n';
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spectral alignment monitoring for training stability", "saspec"};
  app.require_subcommand(1);

  Globals g;
  CLI::Option* level_opt = app.add_option("--log-level", g.log_level, "Log verbosity (env " +
                                                                          std::string(kLogLevelEnv) + ")")
                               ->check(CLI::IsMember(kLogLevels));
  app.add_option("--seed", g.seed, "Seed for training and verification")->capture_default_str();
  app.add_option("--out", g.out, "Output directory")->capture_default_str();

  AnalyzeArgs aa;
  CLI::App* analyze = app.add_subcommand("analyze", "Compute SA metrics over a series of snapshots");
  analyze->fallthrough();
  analyze->add_option("paths", aa.paths, "Snapshot files or directories")->required();
  analyze->add_option("--weight", aa.weight, "Weight tensor name")->required();
  analyze->add_option("--input", aa.input, "Input activation tensor name")->required();
  analyze->add_option("--grad", aa.grad, "Gradient tensor name");
  analyze->add_flag("--lenient", aa.lenient, "Skip snapshots with non-finite values instead of failing");
  add_collapse_flags(analyze, aa.collapse);

  TrainArgs ta;
  CLI::App* train = app.add_subcommand("train-toy", "Train the toy MLP with SA monitoring");
  train->fallthrough();
  train->add_option("--scenario", ta.scenario, "Shipped configuration")
      ->check(CLI::IsMember({"stable", "explosive"}))
      ->capture_default_str();
  CLI::Option* eta_opt = train->add_option("--eta", ta.eta, "Learning rate")->check(CLI::PositiveNumber);
  train->add_option("--dims", ta.dims, "Layer widths, input first")->delimiter(',');
  CLI::Option* steps_opt = train->add_option("--steps", ta.steps, "Training steps");
  CLI::Option* bs_opt = train->add_option("--batch-size", ta.batch_size, "Minibatch size");
  CLI::Option* le_opt = train->add_option("--log-every", ta.log_every, "Steps between checks");
  train->add_option("--monitor", ta.monitor, "Monitored layers, 1-based")->delimiter(',')->capture_default_str();
  train->add_option("--snapshot-every", ta.snapshot_every, "Write snapshots every N steps (0 = never)")
      ->capture_default_str();

  VerifyArgs va;
  CLI::App* verify = app.add_subcommand("verify", "Run the numerical checks of the theory");
  verify->fallthrough();
  std::vector<std::string> suites = suite_names();
  suites.push_back("all");
  verify->add_option("--suite", va.suite, "Suite to run")->check(CLI::IsMember(suites))->capture_default_str();
  verify->add_option("--trials", va.trials, "Trials per suite (default depends on the suite)")
      ->check(CLI::PositiveNumber);

  ReportArgs ra;
  std::map<std::string, CLI::Option*> threshold_opts;
  CLI::App* report = app.add_subcommand("report", "Summarize a metric log: explosion, onset and lead times");
  report->fallthrough();
  report->add_option("log", ra.path, "Metric log (JSON lines)")->required();
  report->add_option("--format", ra.format, "Output format")
      ->check(CLI::IsMember({"table", "records"}))
      ->capture_default_str();
  report->add_option("--explosion-factor", ra.explosion_factor, "Loss ratio over the first logged loss")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  threshold_opts["weight_sigma1"] =
      report->add_option("--weight-sigma1", ra.weight_sigma1, "Threshold on the weight spectral norm");
  threshold_opts["grad_sigma1"] =
      report->add_option("--grad-sigma1", ra.grad_sigma1, "Threshold on the gradient spectral norm");
  threshold_opts["max_activation"] =
      report->add_option("--max-activation", ra.max_activation, "Threshold on the largest |activation|");
  threshold_opts["stable_rank"] =
      report->add_option("--stable-rank", ra.stable_rank, "Stable rank falling below this value");
  add_collapse_flags(report, ra.collapse);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitError;
  }

  if (level_opt->count() == 0) {
    if (const char* env = std::getenv(kLogLevelEnv); env != nullptr && *env != '\0') {
      if (std::find(kLogLevels.begin(), kLogLevels.end(), env) == kLogLevels.end()) {
        err << "error: " << kLogLevelEnv << "=" << env << " is not a log level\n";
        return kExitError;
      }
      g.log_level = env;
    }
  }
  const auto log = make_logger(err, g.log_level);

  try {
    if (analyze->parsed()) return cmd_analyze(g, aa, *log, out, err);
    if (train->parsed()) {
      return cmd_train(g, ta, eta_opt->count() > 0, steps_opt->count() > 0, bs_opt->count() > 0,
                       le_opt->count() > 0, *log, out);
    }
    if (verify->parsed()) return cmd_verify(g, va, out);
    if (report->parsed()) {
      std::map<std::string, bool> set;
      for (const auto& [name, opt] : threshold_opts) set[name] = opt->count() > 0;
      return cmd_report(g, ra, set, out, err);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}

}  // namespace saspec::cli
