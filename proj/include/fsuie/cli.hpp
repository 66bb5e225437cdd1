#pragma once

// Command-line front end. Kept in a header so tests can drive commands
// in-process through fsuie::cli::run.

#include "fsuie/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsuie::cli {

namespace fs = std::filesystem;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

/// Applies one dotted `key=value` override. The key must already exist in
/// the config; the value is read as JSON when it parses, else as a string.
inline void apply_override(nlohmann::json& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + kv + "' is not key=value");
  const std::string key = kv.substr(0, eq), raw = kv.substr(eq + 1);
  std::string pointer;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) pointer += "/" + part;
  const nlohmann::json::json_pointer ptr(pointer);
  if (!cfg.contains(ptr)) throw ConfigError("unknown config key '" + key + "'");
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  cfg[ptr] = value;
}

inline void check_known_keys(const nlohmann::json& file, const nlohmann::json& defaults, const std::string& prefix) {
  for (const auto& [k, v] : file.items()) {
    if (!defaults.contains(k)) throw ConfigError("unknown config key '" + prefix + k + "'");
    if (v.is_object() && defaults.at(k).is_object()) check_known_keys(v, defaults.at(k), prefix + k + ".");
  }
}

/// Built-in defaults, then the config file, then --seed and --set overrides.
inline RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides,
                                std::optional<std::uint64_t> seed) {
  nlohmann::json cfg = RunConfig{};
  if (!config_path.empty()) {
    const auto file = read_json_file(config_path);
    if (!file.is_object()) throw ConfigError(config_path + ": config must be a JSON object");
    check_known_keys(file, cfg, "");
    cfg.merge_patch(file);
  }
  if (seed) cfg["seed"] = *seed;
  for (const auto& kv : overrides) apply_override(cfg, kv);
  try {
    auto rc = cfg.get<RunConfig>();
    rc.validate();
    return rc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

struct Options {
  std::string command;
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::vector<std::string> overrides;
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  int example = 0;
  int type = 0;
  int repeats = 1;
  std::vector<std::string> axes;
  double tolerance = 1e-4;
  bool quiet = false;
};

inline void write_resolved(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  write_text(dir / "resolved_config.json", nlohmann::json(cfg).dump(2) + "\n");
}

/// Metrics, summary, checkpoint and the config that reproduces them.
inline void write_run(const fs::path& dir, const RunConfig& cfg, RunResult& r) {
  write_resolved(dir, cfg);
  std::ostringstream csv;
  write_metrics_csv(r, cfg.model.num_heads, csv);
  write_text(dir / "metrics.csv", csv.str());
  write_text(dir / "summary.json", summary_json(r).dump(2) + "\n");
  if (r.model) save_checkpoint(*r.model, (dir / "checkpoint.json").string());
}

inline std::vector<Example> load_or_generate(const Options& o, const RunConfig& cfg) {
  return o.data.empty() ? generate(cfg.corpus) : read_dataset(o.data);
}

inline int cmd_gen_data(const Options& o, const RunConfig& cfg, std::ostream& log) {
  const fs::path out(o.out_dir);
  write_resolved(out, cfg);
  const auto corpus = generate(cfg.corpus);
  write_dataset(corpus, (out / "dataset.jsonl").string());
  log << "wrote " << corpus.size() << " examples to " << (out / "dataset.jsonl").string() << '\n';
  return 0;
}

inline int cmd_train(const Options& o, const RunConfig& cfg, std::ostream& log) {
  const fs::path out(o.out_dir);
  write_resolved(out, cfg);
  const auto corpus = load_or_generate(o, cfg);
  auto r = train(cfg, TrainData::from(corpus), cfg.epochs, [&](const MetricRecord& m) {
    if (!o.quiet) log << "step " << m.step << " dev f1 " << format_double(m.prf.f1) << '\n';
  });
  r.name = "train";
  write_run(out, cfg, r);
  log << "test f1 " << format_double(r.test.f1) << " (best dev step " << r.best_step << ")\n";
  return 0;
}

inline int cmd_eval(const Options& o, const RunConfig& cfg, std::ostream& log) {
  if (o.checkpoint.empty()) throw ConfigError("eval requires --checkpoint");
  const fs::path out(o.out_dir);
  fs::create_directories(out);
  const auto model = load_checkpoint(o.checkpoint);
  const auto corpus = load_or_generate(o, cfg);
  const auto split = split_from_string(o.split);
  const auto examples = select_split(corpus, split);
  const auto prf = evaluate(model, examples, cfg.decode_threshold);
  const nlohmann::json j{{"split", o.split},
                         {"examples", examples.size()},
                         {"precision", prf.precision},
                         {"recall", prf.recall},
                         {"f1", prf.f1}};
  write_text(out / "eval.json", j.dump(2) + "\n");
  log << o.split << " P " << format_double(prf.precision) << " R " << format_double(prf.recall) << " F1 "
      << format_double(prf.f1) << '\n';
  return 0;
}

inline int cmd_ablate(const Options& o, const RunConfig& cfg, std::ostream& log) {
  const fs::path out(o.out_dir);
  write_resolved(out, cfg);
  const auto seeds = seed_list(cfg.seed, o.repeats);
  auto res = run_ablation(cfg, seeds, o.jobs);
  std::ostringstream cmp, curves;
  cmp << "arm,seed,total_steps,steps_to_dev_f1_0.8,best_dev_f1,final_dev_f1,test_precision,test_recall,test_f1\n";
  for (const auto& arm : ablation_arms()) {
    for (auto& r : res.arms.at(arm.name)) {
      auto c = with_arm(cfg, arm);
      c.seed = r.seed;
      write_run(out / arm.name / ("seed" + std::to_string(r.seed)), c, r);
      const auto s8 = r.steps_to(0.8);
      cmp << arm.name << ',' << r.seed << ',' << r.total_steps << ',' << (s8 ? std::to_string(*s8) : "") << ','
          << format_double(r.best_dev_f1) << ',' << format_double(r.final_dev_f1()) << ','
          << format_double(r.test.precision) << ',' << format_double(r.test.recall) << ','
          << format_double(r.test.f1) << '\n';
    }
  }
  write_text(out / "comparison.csv", cmp.str());

  // Step-aligned dev F1, one column per arm and seed.
  curves << "step";
  for (const auto& arm : ablation_arms())
    for (const auto& r : res.arms.at(arm.name)) curves << ',' << arm.name << "_seed" << r.seed;
  curves << '\n';
  std::map<int, std::map<std::string, double>> table;
  for (const auto& arm : ablation_arms())
    for (const auto& r : res.arms.at(arm.name))
      for (const auto& m : r.metrics)
        if (m.split == Split::Dev) table[m.step][arm.name + "_seed" + std::to_string(r.seed)] = m.prf.f1;
  for (const auto& [step, row] : table) {
    curves << step;
    for (const auto& arm : ablation_arms())
      for (const auto& r : res.arms.at(arm.name)) {
        const auto it = row.find(arm.name + "_seed" + std::to_string(r.seed));
        curves << ',' << (it == row.end() ? "" : format_double(it->second));
      }
    curves << '\n';
  }
  write_text(out / "curves.csv", curves.str());

  std::ostringstream sum;
  sum << "arm,median_test_f1,median_final_dev_f1,median_steps_to_dev_f1_0.8\n";
  for (const auto& arm : ablation_arms()) {
    sum << arm.name << ',' << format_double(res.median_test_f1(arm.name)) << ','
        << format_double(res.median_final_dev_f1(arm.name)) << ','
        << format_double(res.median_steps_to(arm.name, 0.8, cfg.eval_every)) << '\n';
    log << arm.name << " median test f1 " << format_double(res.median_test_f1(arm.name)) << '\n';
  }
  write_text(out / "comparison_summary.csv", sum.str());
  return 0;
}

inline int cmd_sweep(const Options& o, const RunConfig& cfg, std::ostream& log) {
  const fs::path out(o.out_dir);
  write_resolved(out, cfg);
  std::vector<SweepAxis> axes;
  if (o.axes.empty() || (o.axes.size() == 1 && o.axes[0] == "all"))
    axes = {SweepAxis::SpanLen, SweepAxis::Ramp, SweepAxis::Variant, SweepAxis::Side};
  else
    for (const auto& a : o.axes) axes.push_back(sweep_axis_from_string(a));
  const auto seeds = seed_list(cfg.seed, o.repeats);
  std::vector<SweepRow> rows;
  for (auto a : axes) {
    auto r = run_sweep(cfg, a, seeds, o.jobs);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  std::ostringstream csv, sum;
  write_sweep_csv(rows, csv);
  write_sweep_summary_csv(rows, sum);
  write_text(out / "sweep.csv", csv.str());
  write_text(out / "sweep_summary.csv", sum.str());
  log << sum.str();
  return 0;
}

inline int cmd_low_resource(const Options& o, const RunConfig& cfg, std::ostream& log) {
  const fs::path out(o.out_dir);
  write_resolved(out, cfg);
  const auto seeds = seed_list(cfg.seed, o.repeats);
  const auto& fr = low_resource_fractions();
  const auto rows = run_low_resource(cfg, fr, seeds, o.jobs);
  std::ostringstream csv, sum;
  write_low_resource_csv(rows, csv);
  write_text(out / "low_resource.csv", csv.str());
  sum << "fraction,baseline_median_test_f1,full_median_test_f1\n";
  for (double f : fr)
    sum << format_double(f) << ',' << format_double(low_resource_median(rows, f, "baseline")) << ','
        << format_double(low_resource_median(rows, f, "full")) << '\n';
  write_text(out / "low_resource_summary.csv", sum.str());
  log << sum.str();
  return 0;
}

inline int cmd_grad_check(const Options& o, const RunConfig& cfg, std::ostream& log) {
  const fs::path out(o.out_dir);
  write_resolved(out, cfg);
  SpanModel model = o.checkpoint.empty() ? SpanModel(cfg.model, cfg.fsa, cfg.seed) : load_checkpoint(o.checkpoint);
  auto corpus = load_or_generate(o, cfg);
  if (corpus.size() > 2) corpus.resize(2);
  const auto batch = queries_for(corpus, model.config().type_count);
  const auto report = grad_check(model, batch, cfg.fuzzy, cfg.loss, 1e-5, 16, cfg.seed);
  nlohmann::json j{{"tolerance", o.tolerance}, {"max_rel_error", report.max_rel_error()}, {"groups", nlohmann::json::array()}};
  for (const auto& g : report.groups)
    j["groups"].push_back(
        {{"name", g.name}, {"max_rel_error", g.max_rel_error}, {"checked", g.checked}, {"excluded", g.excluded}});
  write_text(out / "grad_check.json", j.dump(2) + "\n");
  log << "max relative error " << format_double(report.max_rel_error()) << '\n';
  return report.passed(o.tolerance) ? 0 : 1;
}

inline int cmd_dump_attention(const Options& o, const RunConfig& cfg, std::ostream& log) {
  if (o.checkpoint.empty()) throw ConfigError("dump-attention requires --checkpoint");
  const fs::path out(o.out_dir);
  fs::create_directories(out);
  const auto model = load_checkpoint(o.checkpoint);
  if (!model.config().fsa_enabled) throw ConfigError("checkpoint has no fuzzy span attention layer");
  const auto corpus = load_or_generate(o, cfg);
  if (o.example < 0 || o.example >= static_cast<int>(corpus.size()))
    throw ConfigError("--example out of range");
  const auto& ex = corpus[static_cast<std::size_t>(o.example)];
  const auto weights = model.attention(ex.tokens, o.type);
  auto j = attention_dump_json(weights, model.head_states());
  j["tokens"] = ex.tokens;
  j["type"] = o.type;
  j["example"] = o.example;
  write_text(out / "attention_dump.json", j.dump() + "\n");
  log << "wrote " << weights.size() << " head matrices to " << (out / "attention_dump.json").string() << '\n';
  return 0;
}

/// Runs one command; returns the process exit code. Usage and config errors
/// return 2, runtime failures 1.
inline int run(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Fuzzy span extraction toolkit"};
  app.require_subcommand(1);
  Options o;
  const std::map<std::string, std::string> commands{
      {"gen-data", "Generate a synthetic dataset"},
      {"train", "Train one model"},
      {"eval", "Evaluate a checkpoint"},
      {"ablate", "Baseline / +FSL / +FSA / full comparison"},
      {"sweep", "Span length, ramp, variant and side-mode sweeps"},
      {"low-resource", "Nested 1/5/25/100% training subsets"},
      {"grad-check", "Finite-difference gradient check"},
      {"dump-attention", "Export per-head attention weights"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out_dir, "Output directory");
    sub->add_option("--seed", o.seed, "Run seed");
    sub->add_option("--jobs", o.jobs, "Parallel runs")->check(CLI::PositiveNumber);
    sub->add_option("--set", o.overrides, "key=value override (repeatable)");
    sub->add_flag("--quiet", o.quiet, "Less progress output");
    if (name == "eval" || name == "dump-attention" || name == "grad-check")
      sub->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->check(CLI::ExistingFile);
    if (name == "train" || name == "eval" || name == "dump-attention" || name == "grad-check")
      sub->add_option("--data", o.data, "Dataset file (JSON lines)")->check(CLI::ExistingFile);
    if (name == "eval") sub->add_option("--split", o.split, "train, dev or test");
    if (name == "dump-attention") {
      sub->add_option("--example", o.example, "Example index in the dataset");
      sub->add_option("--type", o.type, "Type id to condition on");
    }
    if (name == "ablate" || name == "sweep" || name == "low-resource")
      sub->add_option("--repeats", o.repeats, "Seeds per arm (seed, seed+1, ...)")->check(CLI::PositiveNumber);
    if (name == "sweep") sub->add_option("--axis", o.axes, "span_len, ramp, variant, side_mode or all");
    if (name == "grad-check") sub->add_option("--tolerance", o.tolerance, "Maximum relative error");
    sub->callback([&o, name] { o.command = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, log, err);
    return code == 0 ? 0 : 2;
  }
  try {
    const auto cfg = resolve_config(o.config_path, o.overrides, o.seed);
    if (o.command == "gen-data") return cmd_gen_data(o, cfg, log);
    if (o.command == "train") return cmd_train(o, cfg, log);
    if (o.command == "eval") return cmd_eval(o, cfg, log);
    if (o.command == "ablate") return cmd_ablate(o, cfg, log);
    if (o.command == "sweep") return cmd_sweep(o, cfg, log);
    if (o.command == "low-resource") return cmd_low_resource(o, cfg, log);
    if (o.command == "grad-check") return cmd_grad_check(o, cfg, log);
    if (o.command == "dump-attention") return cmd_dump_attention(o, cfg, log);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace fsuie::cli
