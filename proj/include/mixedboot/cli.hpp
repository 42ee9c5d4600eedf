#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mixedboot/dataset.hpp"
#include "mixedboot/engines.hpp"
#include "mixedboot/errors.hpp"
#include "mixedboot/fit.hpp"
#include "mixedboot/inference.hpp"
#include "mixedboot/io.hpp"
#include "mixedboot/parallel.hpp"
#include "mixedboot/simlab.hpp"

namespace mixedboot {

enum ExitCode : int {
  kExitOk = 0,
  kExitOther = 1,
  kExitParse = 2,
  kExitFit = 3,
  kExitBootstrap = 4,
};

enum class OutputFormat { CSV, JSON };

// Named linear combination c' beta.
struct StatisticSpec {
  std::string name;
  std::vector<double> coefficients;
};

// Settings of one command. Unset optionals take the command's default
// (simulate falls back to the scenario's own values).
struct RunConfig {
  enum class Command { Fit, Bootstrap, Simulate };
  Command command = Command::Fit;
  std::string input_path;
  std::vector<std::string> methods;
  std::optional<std::size_t> B;
  std::optional<double> level;
  std::optional<std::uint64_t> seed;
  std::optional<Criterion> criterion;
  std::string output_path;  // empty: standard output
  OutputFormat format = OutputFormat::CSV;
  std::vector<StatisticSpec> statistics;
  std::string dump_replicates;
  std::optional<unsigned> threads;
  std::string preset;
  std::string scenario_path;
  std::optional<std::size_t> R;
};

inline constexpr std::size_t kDefaultB = 500;
inline constexpr double kDefaultLevel = 0.95;
inline constexpr std::uint64_t kDefaultSeed = 1;

inline const char* to_string(RunConfig::Command c) {
  switch (c) {
    case RunConfig::Command::Fit: return "fit";
    case RunConfig::Command::Bootstrap: return "bootstrap";
    case RunConfig::Command::Simulate: return "simulate";
  }
  return "?";
}

inline Criterion parse_criterion(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "ml") return Criterion::ML;
  if (s == "reml") return Criterion::REML;
  throw ParseError("unknown criterion '" + s + "' (expected ml or reml)");
}

inline OutputFormat parse_format(const std::string& s) {
  if (s == "csv") return OutputFormat::CSV;
  if (s == "json") return OutputFormat::JSON;
  throw ParseError("unknown format '" + s + "' (expected csv or json)");
}

// "name:c0,c1,..."
inline StatisticSpec parse_statistic(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos || colon == 0)
    throw ParseError("statistic '" + text + "' is not of the form name:c0,c1,...");
  StatisticSpec s;
  s.name = text.substr(0, colon);
  if (s.name == "lambda") throw ParseError("statistic name 'lambda' is reserved");
  for (const auto& f : detail::split_fields(std::string_view(text).substr(colon + 1))) {
    double v = 0.0;
    if (!detail::parse_real(f, v))
      throw ParseError("statistic '" + s.name + "': bad coefficient '" + std::string(f) + "'");
    s.coefficients.push_back(v);
  }
  return s;
}

// Method keys, comma lists allowed; "all" expands to every method.
inline std::vector<BootstrapMethodId> parse_methods(const std::vector<std::string>& keys) {
  std::vector<BootstrapMethodId> out;
  for (const auto& k : keys) {
    for (const auto& f : detail::split_fields(k)) {
      if (f == "all") {
        out.insert(out.end(), std::begin(kAllMethods), std::end(kAllMethods));
        continue;
      }
      const auto m = parse_method(f);
      if (!m) {
        std::string known;
        for (BootstrapMethodId id : kAllMethods) known += std::string(known.empty() ? "" : ", ") +
                                                          std::string(method_key(id));
        throw ParseError("unknown method '" + std::string(f) + "' (known: " + known + ", all)");
      }
      out.push_back(*m);
    }
  }
  return out;
}

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json parse_json_file(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

template <typename T>
T json_get(const nlohmann::json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(where + ": field '" + key + "' has the wrong type");
  }
}

inline std::vector<std::string> json_strings(const nlohmann::json& v, const char* key,
                                             const std::string& where) {
  if (v.is_string()) return {v.get<std::string>()};
  if (!v.is_array()) throw ParseError(where + ": field '" + key + "' must be a string or list");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw ParseError(where + ": field '" + key + "' must hold strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

}  // namespace detail

// Reads a JSON config into `cfg`. Keys mirror the long flag names.
inline void apply_config_json(RunConfig& cfg, const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + ": config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "command") {
      if (v != to_string(cfg.command))
        throw ParseError(where + ": config is for command '" + v.dump() + "'");
    } else if (key == "input") {
      cfg.input_path = detail::json_get<std::string>(j, "input", where);
    } else if (key == "method" || key == "methods") {
      cfg.methods = detail::json_strings(v, key.c_str(), where);
    } else if (key == "B") {
      cfg.B = detail::json_get<std::size_t>(j, "B", where);
    } else if (key == "R") {
      cfg.R = detail::json_get<std::size_t>(j, "R", where);
    } else if (key == "level") {
      cfg.level = detail::json_get<double>(j, "level", where);
    } else if (key == "seed") {
      cfg.seed = detail::json_get<std::uint64_t>(j, "seed", where);
    } else if (key == "criterion") {
      cfg.criterion = parse_criterion(detail::json_get<std::string>(j, "criterion", where));
    } else if (key == "output") {
      cfg.output_path = detail::json_get<std::string>(j, "output", where);
    } else if (key == "format") {
      cfg.format = parse_format(detail::json_get<std::string>(j, "format", where));
    } else if (key == "stat" || key == "statistics") {
      cfg.statistics.clear();
      for (const auto& s : detail::json_strings(v, key.c_str(), where))
        cfg.statistics.push_back(parse_statistic(s));
    } else if (key == "dump_replicates") {
      cfg.dump_replicates = detail::json_get<std::string>(j, "dump_replicates", where);
    } else if (key == "threads") {
      cfg.threads = detail::json_get<unsigned>(j, "threads", where);
    } else if (key == "preset") {
      cfg.preset = detail::json_get<std::string>(j, "preset", where);
    } else if (key == "scenario") {
      cfg.scenario_path = detail::json_get<std::string>(j, "scenario", where);
    } else {
      throw ParseError(where + ": unknown config key '" + key + "'");
    }
  }
}

// Scenario file: {"name", "cluster_sizes" | "balanced": {"D","n"} |
// "profile": "default", "beta", "sigma2_u", "sigma2_e", "effect_dist":
// "normal" | "chisq1", "R", "B", "level", "seed", "methods", "criterion"}.
inline SimulationScenario scenario_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + ": scenario must be a JSON object");
  SimulationScenario s;
  bool have_sizes = false;
  for (const auto& [key, v] : j.items()) {
    if (key == "name") {
      s.name = detail::json_get<std::string>(j, "name", where);
    } else if (key == "cluster_sizes") {
      s.cluster_sizes = detail::json_get<std::vector<int>>(j, "cluster_sizes", where);
      have_sizes = true;
    } else if (key == "balanced") {
      const auto D = detail::json_get<std::size_t>(v, "D", where);
      const auto n = detail::json_get<int>(v, "n", where);
      s.cluster_sizes = balanced_sizes(D, n);
      have_sizes = true;
    } else if (key == "profile") {
      if (v != "default") throw ParseError(where + ": only profile \"default\" is known");
      s.cluster_sizes = default_unbalanced_profile();
      have_sizes = true;
    } else if (key == "beta") {
      const auto b = detail::json_get<std::vector<double>>(j, "beta", where);
      s.beta = Eigen::Map<const VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
    } else if (key == "sigma2_u") {
      s.sigma2_u = detail::json_get<double>(j, "sigma2_u", where);
    } else if (key == "sigma2_e") {
      s.sigma2_e = detail::json_get<double>(j, "sigma2_e", where);
    } else if (key == "effect_dist") {
      const auto d = detail::json_get<std::string>(j, "effect_dist", where);
      if (d == "normal")
        s.effect_dist = EffectDistribution::NormalSet1;
      else if (d == "chisq1")
        s.effect_dist = EffectDistribution::Chisq1Set2;
      else
        throw ParseError(where + ": effect_dist must be \"normal\" or \"chisq1\"");
    } else if (key == "R") {
      s.R = detail::json_get<std::size_t>(j, "R", where);
    } else if (key == "B") {
      s.B = detail::json_get<std::size_t>(j, "B", where);
    } else if (key == "level") {
      s.level = detail::json_get<double>(j, "level", where);
    } else if (key == "seed") {
      s.seed = detail::json_get<std::uint64_t>(j, "seed", where);
    } else if (key == "methods") {
      s.methods = parse_methods(detail::json_strings(v, "methods", where));
    } else if (key == "criterion") {
      s.criterion = parse_criterion(detail::json_get<std::string>(j, "criterion", where));
    } else {
      throw ParseError(where + ": unknown scenario key '" + key + "'");
    }
  }
  if (!have_sizes) throw ParseError(where + ": scenario needs cluster sizes");
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(where + ": " + e.what());
  }
  return s;
}

namespace detail {

inline unsigned resolve_threads(const RunConfig& cfg) {
  if (cfg.threads) return std::max(1u, *cfg.threads);
  return threads_from_env(std::max(1u, std::thread::hardware_concurrency()));
}

inline void check_B(std::size_t B, std::ostream& err) {
  if (B < 100) throw InvalidArgument("B must be at least 100, got " + std::to_string(B));
  if (B < 500) err << "warning: B = " << B << " is below 500; percentile tails will be noisy\n";
}

inline void check_level(double level) {
  if (!(level > 0.0 && level < 1.0)) throw InvalidArgument("level must lie in (0, 1)");
}

inline std::string config_hash(const nlohmann::ordered_json& canonical) {
  return hex64(fnv1a64(canonical.dump()));
}

inline void emit(const RunConfig& cfg, const OutputMeta& meta, const Table& t, std::ostream& out) {
  std::ostringstream buf;
  if (cfg.format == OutputFormat::JSON)
    write_json(buf, meta, t);
  else
    write_csv(buf, meta, t);
  if (cfg.output_path.empty()) {
    out << buf.str();
    return;
  }
  std::ofstream f(cfg.output_path, std::ios::binary);
  if (!f) throw InvalidArgument("cannot write '" + cfg.output_path + "'");
  f << buf.str();
}

inline nlohmann::ordered_json criterion_json(Criterion c) { return to_string(c); }

}  // namespace detail

// Estimates of a random intercept fit.
inline int cmd_fit(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  (void)err;
  if (cfg.input_path.empty()) throw InvalidArgument("fit needs --input");
  const std::string raw = detail::read_file(cfg.input_path);
  std::istringstream in(raw);
  const ClusteredDataset data = parse_csv(in).data;
  const Criterion criterion = cfg.criterion.value_or(Criterion::REML);
  const FitResult fr = fit(data, criterion);

  nlohmann::ordered_json canon;
  canon["command"] = "fit";
  canon["input_fnv"] = hex64(fnv1a64(raw));
  canon["criterion"] = detail::criterion_json(criterion);
  canon["format"] = cfg.format == OutputFormat::JSON ? "json" : "csv";

  OutputMeta meta{"fit", 0, detail::config_hash(canon), {}};
  meta.extra = {{"criterion", to_string(criterion)},
                {"D", std::to_string(data.num_clusters())},
                {"N", std::to_string(data.num_units())},
                {"converged", fr.converged ? "true" : "false"},
                {"boundary", fr.boundary ? "true" : "false"},
                {"iterations", std::to_string(fr.iterations)}};
  Table t{{"quantity", "value"}, {}};
  const auto names = theta_names(data.num_covariates());
  const VectorXd th = fr.theta_hat.packed();
  for (std::size_t k = 0; k < names.size(); ++k)
    t.add({names[k], th(static_cast<Eigen::Index>(k))});
  t.add({std::string("lambda"), fr.theta_hat.lambda()});
  t.add({std::string("loglik"), fr.loglik});
  detail::emit(cfg, meta, t, out);
  return kExitOk;
}

// Percentile CIs for every parameter, lambda and configured statistic, for
// each requested method in order. All methods share the seed.
inline int cmd_bootstrap(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.input_path.empty()) throw InvalidArgument("bootstrap needs --input");
  const std::vector<BootstrapMethodId> methods =
      parse_methods(cfg.methods.empty() ? std::vector<std::string>{"preb1"} : cfg.methods);
  const std::size_t B = cfg.B.value_or(kDefaultB);
  const double level = cfg.level.value_or(kDefaultLevel);
  const std::uint64_t seed = cfg.seed.value_or(kDefaultSeed);
  const Criterion criterion = cfg.criterion.value_or(Criterion::REML);
  detail::check_level(level);
  detail::check_B(B, err);

  const std::string raw = detail::read_file(cfg.input_path);
  std::istringstream in(raw);
  const ClusteredDataset data = parse_csv(in).data;
  const Eigen::Index p = data.num_covariates();

  BootstrapOptions opts;
  opts.threads = detail::resolve_threads(cfg);
  opts.statistics = {lambda_statistic()};
  for (const auto& s : cfg.statistics) {
    if (static_cast<Eigen::Index>(s.coefficients.size()) != p)
      throw InvalidArgument("statistic '" + s.name + "' has " +
                            std::to_string(s.coefficients.size()) + " coefficients, model has " +
                            std::to_string(p));
    opts.statistics.push_back(linear_combination(
        s.name, Eigen::Map<const VectorXd>(s.coefficients.data(), p)));
  }

  const FitResult fr = fit(data, criterion);

  nlohmann::ordered_json canon;
  canon["command"] = "bootstrap";
  canon["input_fnv"] = hex64(fnv1a64(raw));
  canon["methods"] = nlohmann::ordered_json::array();
  for (BootstrapMethodId m : methods) canon["methods"].push_back(std::string(method_key(m)));
  canon["B"] = B;
  canon["level"] = level;
  canon["seed"] = seed;
  canon["criterion"] = detail::criterion_json(criterion);
  canon["format"] = cfg.format == OutputFormat::JSON ? "json" : "csv";
  canon["statistics"] = nlohmann::ordered_json::array();
  for (const auto& s : cfg.statistics)
    canon["statistics"].push_back({{"name", s.name}, {"coefficients", s.coefficients}});

  OutputMeta meta{"bootstrap", seed, detail::config_hash(canon), {}};
  meta.extra = {{"criterion", to_string(criterion)},
                {"level", format_real(level)},
                {"D", std::to_string(data.num_clusters())},
                {"N", std::to_string(data.num_units())}};

  Table t{{"method", "target", "kind", "estimate", "level", "lower", "upper", "B", "B_effective",
           "failures", "p_value"},
          {}};
  Table dump{{"method", "replicate", "status"}, {}};
  for (const auto& n : theta_names(p)) dump.columns.push_back(n);
  for (const auto& s : opts.statistics) dump.columns.push_back(s.name);

  const auto names = theta_names(p);
  const VectorXd th = fr.theta_hat.packed();
  for (BootstrapMethodId m : methods) {
    const BootstrapRun run = run_bootstrap(m, data, fr, B, seed, opts);
    const std::string key(method_key(m));
    const auto failures = static_cast<long long>(run.failures());
    for (Eigen::Index k = 0; k < p + 2; ++k) {
      const PercentileCI ci = percentile_ci(run, k, level);
      t.add({key, names[static_cast<std::size_t>(k)], std::string("parameter"), th(k), level,
             ci.lower, ci.upper, static_cast<long long>(B),
             static_cast<long long>(ci.B_effective), failures, std::monostate{}});
    }
    for (std::size_t s = 0; s < opts.statistics.size(); ++s) {
      const auto col = static_cast<Eigen::Index>(s);
      const PercentileCI ci = statistic_ci(run, col, level);
      const double est = opts.statistics[s].evaluate(fr.theta_hat, data.y(), data);
      t.add({key, opts.statistics[s].name, std::string("statistic"), est, level, ci.lower,
             ci.upper, static_cast<long long>(B), static_cast<long long>(ci.B_effective),
             failures, bootstrap_pvalue(run.stat_column(col), 0.0)});
    }
    if (!cfg.dump_replicates.empty()) {
      for (std::size_t b = 0; b < run.B; ++b) {
        const auto row = static_cast<Eigen::Index>(b);
        std::vector<Table::Cell> cells{key, static_cast<long long>(b),
                                       std::string(run.status[b] == ReplicateStatus::ok ? "ok"
                                                   : run.status[b] == ReplicateStatus::boundary
                                                       ? "boundary"
                                                       : "failed")};
        for (Eigen::Index k = 0; k < run.theta_star.cols(); ++k)
          cells.emplace_back(run.theta_star(row, k));
        for (Eigen::Index s = 0; s < run.stats_star.cols(); ++s)
          cells.emplace_back(run.stats_star(row, s));
        dump.add(std::move(cells));
      }
    }
  }
  detail::emit(cfg, meta, t, out);
  if (!cfg.dump_replicates.empty()) {
    RunConfig dcfg = cfg;
    dcfg.output_path = cfg.dump_replicates;
    OutputMeta dmeta = meta;
    dmeta.command = "bootstrap-replicates";
    detail::emit(dcfg, dmeta, dump, out);
  }
  return kExitOk;
}

// Resolves the scenario of a simulate command: preset or file, then flags.
inline SimulationScenario resolve_scenario(const RunConfig& cfg) {
  if (!cfg.preset.empty() && !cfg.scenario_path.empty())
    throw InvalidArgument("give either --preset or --scenario, not both");
  SimulationScenario sc;
  if (!cfg.preset.empty()) {
    const auto p = preset(cfg.preset);
    if (!p) {
      std::string known;
      for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
      throw InvalidArgument("unknown preset '" + cfg.preset + "' (known: " + known + ")");
    }
    sc = *p;
  } else if (!cfg.scenario_path.empty()) {
    sc = scenario_from_json(detail::parse_json_file(cfg.scenario_path), cfg.scenario_path);
  } else {
    throw InvalidArgument("simulate needs --preset or --scenario");
  }
  if (cfg.R) sc.R = *cfg.R;
  if (cfg.B) sc.B = *cfg.B;
  if (cfg.level) sc.level = *cfg.level;
  if (cfg.seed) sc.seed = *cfg.seed;
  if (cfg.criterion) sc.criterion = *cfg.criterion;
  if (!cfg.methods.empty()) sc.methods = parse_methods(cfg.methods);
  sc.validate();
  return sc;
}

// Coverage grid of a simulation study.
inline int cmd_simulate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const SimulationScenario sc = resolve_scenario(cfg);
  detail::check_level(sc.level);
  detail::check_B(sc.B, err);
  const StudyResult res = run_study(sc, detail::resolve_threads(cfg));

  nlohmann::ordered_json canon;
  canon["command"] = "simulate";
  canon["name"] = sc.name;
  canon["cluster_sizes"] = sc.cluster_sizes;
  canon["beta"] = std::vector<double>(sc.beta.data(), sc.beta.data() + sc.beta.size());
  canon["sigma2_u"] = sc.sigma2_u;
  canon["sigma2_e"] = sc.sigma2_e;
  canon["effect_dist"] = sc.effect_dist == EffectDistribution::NormalSet1 ? "normal" : "chisq1";
  canon["R"] = sc.R;
  canon["B"] = sc.B;
  canon["level"] = sc.level;
  canon["seed"] = sc.seed;
  canon["criterion"] = detail::criterion_json(sc.criterion);
  canon["methods"] = nlohmann::ordered_json::array();
  for (BootstrapMethodId m : sc.methods) canon["methods"].push_back(std::string(method_key(m)));
  canon["format"] = cfg.format == OutputFormat::JSON ? "json" : "csv";

  OutputMeta meta{"simulate", sc.seed, detail::config_hash(canon), {}};
  meta.extra = {{"criterion", to_string(sc.criterion)},
                {"level", format_real(sc.level)},
                {"fit_failures", std::to_string(res.fit_failures)}};

  Table t{{"method", "scenario", "target", "truth", "coverage", "R", "B", "failures"}, {}};
  const auto truths = coverage_truths(sc.truth());
  for (const auto& mc : res.methods) {
    const std::string key(method_key(mc.report.method));
    for (std::size_t k = 0; k < mc.report.targets.size(); ++k) {
      const Table::Cell cov = mc.report.R == 0 ? Table::Cell{std::numeric_limits<double>::quiet_NaN()}
                                               : Table::Cell{mc.report.coverage[k]};
      t.add({key, sc.name, mc.report.targets[k], truths[k], cov, static_cast<long long>(res.R),
             static_cast<long long>(res.B), static_cast<long long>(mc.failures)});
    }
  }
  detail::emit(cfg, meta, t, out);
  return kExitOk;
}

// Maps a library error to the documented exit code.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const InvalidArgument*>(&e))
    return kExitParse;
  if (dynamic_cast<const FitError*>(&e)) return kExitFit;
  if (dynamic_cast<const BootstrapError*>(&e) || dynamic_cast<const DegeneratePoolError*>(&e))
    return kExitBootstrap;
  return kExitOther;
}

inline int run_command(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    switch (cfg.command) {
      case RunConfig::Command::Fit: return cmd_fit(cfg, out, err);
      case RunConfig::Command::Bootstrap: return cmd_bootstrap(cfg, out, err);
      case RunConfig::Command::Simulate: return cmd_simulate(cfg, out, err);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitOther;
}

// Command-line entry. `args` excludes the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bootstrap inference for random intercept linear mixed models", "mixedboot"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  struct Flags {
    std::string config, input, output, format, criterion, preset, scenario, dump;
    std::vector<std::string> methods, stats;
    std::size_t B = 0, R = 0;
    double level = 0.0;
    std::uint64_t seed = 0;
    unsigned threads = 0;
  } f;

  auto* fit_cmd = app.add_subcommand("fit", "Fit the model and print estimates");
  auto* boot_cmd = app.add_subcommand("bootstrap", "Bootstrap percentile CIs and p-values");
  auto* sim_cmd = app.add_subcommand("simulate", "Coverage study on a preset or scenario file");

  std::vector<CLI::Option*> opts_B, opts_level, opts_seed, opts_crit, opts_threads, opts_format;
  for (auto* sub : {fit_cmd, boot_cmd, sim_cmd}) {
    sub->add_option("--config", f.config, "JSON config; flags override its values");
    sub->add_option("-o,--output", f.output, "Output file (default: standard output)");
    opts_format.push_back(sub->add_option("--format", f.format, "csv or json"));
    opts_crit.push_back(sub->add_option("--criterion", f.criterion, "ml or reml"));
    opts_threads.push_back(
        sub->add_option("--threads", f.threads, "Worker threads (overrides MIXEDBOOT_THREADS)"));
  }
  for (auto* sub : {fit_cmd, boot_cmd}) sub->add_option("-i,--input", f.input, "Input CSV");
  for (auto* sub : {boot_cmd, sim_cmd}) {
    sub->add_option("-m,--method", f.methods, "Method keys, repeatable or comma separated");
    opts_B.push_back(sub->add_option("-B,--B", f.B, "Bootstrap replicates"));
    opts_level.push_back(sub->add_option("--level", f.level, "CI level in (0, 1)"));
    opts_seed.push_back(sub->add_option("--seed", f.seed, "Seed"));
  }
  boot_cmd->add_option("--stat", f.stats, "Linear combination name:c0,c1,... (repeatable)");
  boot_cmd->add_option("--dump-replicates", f.dump, "Write the replicate matrix to this file");
  sim_cmd->add_option("--preset", f.preset, "set1-balanced, set1-unbalanced, ...");
  sim_cmd->add_option("--scenario", f.scenario, "Scenario JSON file");
  auto* opt_R = sim_cmd->add_option("-R,--R", f.R, "Simulated datasets");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitParse;
  }
  auto given = [](const std::vector<CLI::Option*>& os) {
    for (auto* o : os)
      if (o->count() > 0) return true;
    return false;
  };

  RunConfig cfg;
  if (fit_cmd->parsed())
    cfg.command = RunConfig::Command::Fit;
  else if (boot_cmd->parsed())
    cfg.command = RunConfig::Command::Bootstrap;
  else
    cfg.command = RunConfig::Command::Simulate;

  try {
    if (!f.config.empty()) apply_config_json(cfg, detail::parse_json_file(f.config), f.config);
    if (!f.input.empty()) cfg.input_path = f.input;
    if (!f.output.empty()) cfg.output_path = f.output;
    if (given(opts_format)) cfg.format = parse_format(f.format);
    if (given(opts_crit)) cfg.criterion = parse_criterion(f.criterion);
    if (given(opts_threads)) cfg.threads = f.threads;
    if (!f.methods.empty()) cfg.methods = f.methods;
    if (given(opts_B)) cfg.B = f.B;
    if (given(opts_level)) cfg.level = f.level;
    if (given(opts_seed)) cfg.seed = f.seed;
    if (!f.stats.empty()) {
      cfg.statistics.clear();
      for (const auto& s : f.stats) cfg.statistics.push_back(parse_statistic(s));
    }
    if (!f.dump.empty()) cfg.dump_replicates = f.dump;
    if (!f.preset.empty()) cfg.preset = f.preset;
    if (!f.scenario.empty()) cfg.scenario_path = f.scenario;
    if (opt_R->count() > 0) cfg.R = f.R;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return run_command(cfg, out, err);
}

}  // namespace mixedboot
