// SPDX-License-Identifier: Apache-2.0

#include "bmoe/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "bmoe/baselines.hpp"
#include "bmoe/error.hpp"

namespace bmoe::cli {

namespace fs = std::filesystem;

namespace {

const std::map<std::string_view, std::string_view>& aliases() {
  static const std::map<std::string_view, std::string_view> table{
      {"alpha", "train.alpha"},
      {"lr", "train.learning_rate"},
      {"learning_rate", "train.learning_rate"},
      {"lambda", "train.lambda"},
      {"epochs", "train.epochs"},
      {"batch", "train.batch_size"},
      {"batch_size", "train.batch_size"},
      {"seed", "train.seed"},
      {"weight_decay", "train.weight_decay"},
      {"gradnorm", "train.gradnorm_enabled"},
      {"experts", "model.num_experts"},
      {"dropout", "model.dropout_rate"},
      {"activation", "model.activation"},
      {"data", "data.path"},
  };
  return table;
}

std::string describe(const std::vector<double>& v) {
  std::string s = "(";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_number(v[i]);
  return s + ")";
}

void print_metrics(std::ostream& out, const std::vector<std::string>& names, const std::vector<TaskMetrics>& m) {
  for (std::size_t t = 0; t < m.size(); ++t) {
    const std::string name = t < names.size() ? names[t] : "task" + std::to_string(t);
    out << name << ": RMSE=" << m[t].rmse << " MAE=" << m[t].mae << " R2=" << m[t].r2 << "\n";
  }
}

fs::path resolve_out(const std::string& flag, const RunConfig& cfg, std::string_view command) {
  if (!flag.empty()) return flag;
  if (!cfg.out.empty()) return cfg.out;
  return default_out_dir(command);
}

struct TrainedRun {
  std::unique_ptr<MultiTaskModel> model;
  TrainReport report;
};

TrainedRun train_once(const RunConfig& cfg, const SplitDataset& split) {
  TrainedRun run;
  run.model = build_model(cfg.kind, cfg.model, cfg.train.seed);
  Trainer trainer(*run.model, cfg.train);
  run.report = trainer.fit(split);
  return run;
}

void apply_sweep_value(RunConfig& cfg, std::string_view param, double value) {
  auto as_count = [&](const char* what) {
    if (!(value >= 1.0) || value != std::floor(value)) {
      throw ConfigError(std::string(what) + " sweep values must be positive integers, got " + format_number(value));
    }
    return static_cast<std::size_t>(value);
  };
  if (param == "alpha") {
    cfg.train.alpha = value;
  } else if (param == "lr") {
    cfg.train.learning_rate = value;
  } else if (param == "experts") {
    cfg.model.num_experts = as_count("experts");
  } else if (param == "batch") {
    cfg.train.batch_size = as_count("batch");
  } else {
    throw ConfigError("unknown sweep parameter '" + std::string(param) + "' (expected alpha, lr, experts or batch)");
  }
}

struct CommonOptions {
  std::string config;
  std::string data;
  std::string out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config,-c", o.config, "Run configuration JSON");
  cmd->add_option("--data", o.data, "Data CSV (overrides data.path)");
  cmd->add_option("--out,-o", o.out, "Output directory");
  cmd->add_option("--set", o.sets, "Override key=value (repeatable)")->take_all();
}

RunConfig resolve_config(const CommonOptions& o) {
  RunConfig cfg = load_run_config(o.config, o.sets);
  if (!o.data.empty()) cfg.data.path = o.data;
  return cfg;
}

int cmd_train(const CommonOptions& o, bool timing, std::ostream& out) {
  RunConfig cfg = resolve_config(o);
  const fs::path dir = resolve_out(o.out, cfg, "train");
  const SplitDataset split = load_split(cfg);
  const auto run = train_once(cfg, split);

  fs::create_directories(dir);
  write_file_atomic(dir / "report.json", report_to_json(run.report).dump(2) + "\n");
  write_file_atomic(dir / "epochs.csv", epoch_csv(run.report));
  write_file_atomic(dir / "model.json",
                    checkpoint_to_json(*run.model, &split.normalization, split.train.feature_names,
                                       split.train.target_names, cfg.data.lag)
                            .dump() +
                        "\n");
  if (cfg.train.trace) write_file_atomic(dir / "trace.csv", trace_csv(run.report.trace));

  out << "trained " << to_string(cfg.kind) << " for " << run.report.epochs.size() << " epochs (best epoch "
      << run.report.best_epoch << ")\n";
  print_metrics(out, run.report.task_names, run.report.test);
  if (timing) {
    out << "train_seconds=" << run.report.train_seconds << " infer_seconds=" << run.report.infer_seconds << "\n";
  }
  out << "wrote " << dir.string() << "\n";
  return kOk;
}

int cmd_evaluate(const std::string& model_path, const std::string& data_path, const std::string& out_flag,
                 std::ostream& out) {
  const Checkpoint cp = load_checkpoint(model_path);
  if (!cp.normalization) throw ConfigError(model_path + " carries no normalization statistics");
  const std::size_t base = cp.feature_names.size() / (cp.lag + 1);
  std::vector<std::string> features(cp.feature_names.begin(), cp.feature_names.begin() + static_cast<long>(base));
  Dataset raw = add_lags(load_csv(data_path, features, cp.target_names), cp.lag);
  const Dataset normalized = cp.normalization->apply(raw);
  const Matrix yhat = predict_denormalized(*cp.model, normalized, *cp.normalization);
  const auto metrics = column_metrics(raw.targets, yhat);

  const fs::path dir = out_flag.empty() ? default_out_dir("evaluate") : fs::path(out_flag);
  Json mj = Json::array();
  for (std::size_t t = 0; t < metrics.size(); ++t) {
    Json m = to_json(metrics[t]);
    m["task"] = cp.target_names[t];
    mj.push_back(std::move(m));
  }
  std::string pred = "row";
  for (const auto& name : cp.target_names) pred += "," + name + "," + name + "_pred";
  pred += "\n";
  for (std::size_t r = 0; r < raw.size(); ++r) {
    pred += std::to_string(r);
    for (std::size_t t = 0; t < raw.num_tasks(); ++t)
      pred += "," + format_number(raw.targets(r, t)) + "," + format_number(yhat(r, t));
    pred += "\n";
  }
  fs::create_directories(dir);
  write_file_atomic(dir / "metrics.json", mj.dump(2) + "\n");
  write_file_atomic(dir / "predictions.csv", pred);
  print_metrics(out, cp.target_names, metrics);
  return kOk;
}

struct SweepCell {
  std::size_t value_index = 0;
  double value = 0.0;
  std::uint64_t seed = 0;
  std::optional<SeedResult> result;
  std::string error;
  int code = kOk;
};

int cmd_sweep(const CommonOptions& o, const std::string& param, const std::vector<double>& values,
              std::size_t n_seeds, std::size_t jobs, std::ostream& out, std::ostream& err) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  if (n_seeds < 1) throw ConfigError("--seeds must be at least 1");
  RunConfig base = resolve_config(o);
  for (double v : values) {
    RunConfig probe = base;
    apply_sweep_value(probe, param, v);
  }
  const fs::path dir = resolve_out(o.out, base, "sweep");
  const SplitDataset split = load_split(base);

  std::vector<SweepCell> cells;
  for (std::size_t i = 0; i < values.size(); ++i)
    for (std::size_t k = 0; k < n_seeds; ++k) cells.push_back(SweepCell{i, values[i], base.train.seed + k, {}, {}, kOk});

  std::size_t next = 0;
  std::mutex lock;
  auto worker = [&] {
    while (true) {
      SweepCell* cell;
      {
        std::lock_guard guard(lock);
        if (next >= cells.size()) return;
        cell = &cells[next++];
      }
      try {
        RunConfig cfg = base;
        apply_sweep_value(cfg, param, cell->value);
        cfg.train.seed = cell->seed;
        const auto run = train_once(cfg, split);
        cell->result = SeedResult{cell->seed, run.report.test, run.report.train_seconds, run.report.infer_seconds};
      } catch (const std::exception& e) {
        cell->error = e.what();
        cell->code = exit_code_for(e);
      }
    }
  };
  jobs = std::clamp<std::size_t>(jobs, 1, cells.size());
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::string csv = "param_value,seed,task,rmse,mae,r2,train_seconds,infer_seconds\n";
  Json failures = Json::array();
  Json per_value = Json::array();
  int code = kOk;
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::vector<SeedResult> ok;
    for (const auto& cell : cells) {
      if (cell.value_index != i) continue;
      if (!cell.result) {
        failures.push_back(Json{{"param_value", cell.value}, {"seed", cell.seed}, {"error", cell.error}});
        if (code == kOk) code = cell.code;
        continue;
      }
      ok.push_back(*cell.result);
      for (std::size_t t = 0; t < cell.result->test.size(); ++t) {
        const auto& m = cell.result->test[t];
        csv += format_number(cell.value) + "," + std::to_string(cell.seed) + "," + split.train.target_names[t] + "," +
               format_number(m.rmse) + "," + format_number(m.mae) + "," + format_number(m.r2) + "," +
               format_number(cell.result->train_seconds) + "," + format_number(cell.result->infer_seconds) + "\n";
      }
    }
    const auto agg = aggregate_runs(std::move(ok));
    Json mean = Json::array(), sd = Json::array();
    for (const auto& m : agg.mean) mean.push_back(to_json(m));
    for (const auto& m : agg.stddev) sd.push_back(to_json(m));
    per_value.push_back(Json{{"param_value", values[i]}, {"runs", agg.runs.size()}, {"mean", mean}, {"std", sd}});
  }

  fs::create_directories(dir);
  write_file_atomic(dir / "sweep.csv", csv);
  write_file_atomic(dir / "summary.json", Json{{"param", param},
                                               {"values", values},
                                               {"n_seeds", n_seeds},
                                               {"tasks", split.train.target_names},
                                               {"results", per_value},
                                               {"failures", failures}}
                                                  .dump(2) +
                                              "\n");
  out << "sweep over " << param << ": " << cells.size() - failures.size() << "/" << cells.size()
      << " runs succeeded\n";
  for (const auto& f : failures) {
    err << "failed: " << param << "=" << f["param_value"].get<double>() << " seed=" << f["seed"].get<std::uint64_t>()
        << ": " << f["error"].get<std::string>() << "\n";
  }
  out << "wrote " << (dir / "sweep.csv").string() << "\n";
  return code;
}

std::vector<double> parse_weight_list(const std::string& text) {
  std::vector<double> w;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      w.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("invalid weight '" + item + "' in --weights " + text);
    }
  }
  return w;
}

int cmd_trace_weights(const CommonOptions& o, const std::vector<std::string>& weight_args, std::ostream& out) {
  RunConfig cfg = resolve_config(o);
  if (!cfg.train.gradnorm_enabled) throw ConfigError("trace-weights needs train.gradnorm_enabled = true");
  if (cfg.kind == ModelKind::single_task_mlp) {
    throw ConfigError("trace-weights needs a shared anchor layer; single_task_mlp has none");
  }
  const SplitDataset split = load_split(cfg);
  const std::size_t n = cfg.model.num_tasks;

  std::vector<std::vector<double>> settings;
  for (const auto& arg : weight_args) settings.push_back(parse_weight_list(arg));
  if (settings.empty()) {
    if (n != 2) throw ConfigError("default trace settings assume two tasks; pass --weights explicitly");
    settings = default_trace_weights();
  }
  for (const auto& w : settings) {
    if (w.size() != n) throw ConfigError("weight vector " + describe(w) + " needs " + std::to_string(n) + " entries");
    double total = 0.0;
    for (double v : w) {
      if (!(v > 0.0)) throw ConfigError("weight vector " + describe(w) + " has a non-positive entry");
      total += v;
    }
    if (std::fabs(total - static_cast<double>(n)) > 1e-6) {
      throw ConfigError("weight vector " + describe(w) + " must sum to " + std::to_string(n));
    }
  }

  const fs::path dir = resolve_out(o.out, cfg, "trace");
  fs::create_directories(dir);
  std::string summary = "setting,task,initial_weight,final_weight\n";
  for (std::size_t s = 0; s < settings.size(); ++s) {
    RunConfig run_cfg = cfg;
    run_cfg.train.initial_task_weights = settings[s];
    run_cfg.train.trace = true;
    const auto run = train_once(run_cfg, split);
    write_file_atomic(dir / ("trace_" + std::to_string(s) + ".csv"), trace_csv(run.report.trace));
    for (std::size_t t = 0; t < n; ++t) {
      summary += std::to_string(s) + "," + split.train.target_names[t] + "," + format_number(settings[s][t]) + "," +
                 format_number(run.report.final_weights[t]) + "\n";
    }
    out << "setting " << s << " " << describe(settings[s]) << " -> final weights " << describe(run.report.final_weights)
        << "\n";
  }
  write_file_atomic(dir / "trace_summary.csv", summary);
  out << "wrote " << settings.size() << " trace files to " << dir.string() << "\n";
  return kOk;
}

int cmd_gen_data(const std::string& config_path, const std::vector<std::string>& sets, const std::string& out_path,
                 std::ostream& out) {
  Json doc = config_path.empty() ? Json::object() : read_json_file(config_path);
  for (const auto& s : sets) apply_override(doc, s, false);
  const SynthConfig cfg = synth_config_from_json(doc);
  const Dataset d = gen_synthetic(cfg);
  const fs::path path = out_path.empty() ? default_out_dir("gen-data") / "synthetic.csv" : fs::path(out_path);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  write_csv(tmp, d);
  fs::rename(tmp, path);
  out << "wrote " << d.size() << " rows to " << path.string() << "\n";
  return kOk;
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const PartialResultsError*>(&e)) return kNumeric;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) return kData;
  return kUsage;
}

RunConfig run_config_from_json(const Json& j) {
  reject_unknown_keys(j, {"kind", "model", "train", "data", "out"}, "run config");
  RunConfig cfg;
  try {
    if (j.contains("kind")) cfg.kind = parse_model_kind(j.at("kind").get<std::string>());
    if (j.contains("model")) cfg.model = mmoe_config_from_json(j.at("model"));
    if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
    if (j.contains("data")) {
      const Json& d = j.at("data");
      reject_unknown_keys(d, {"path", "features", "targets", "lag"}, "data config");
      if (d.contains("path")) cfg.data.path = d.at("path").get<std::string>();
      if (d.contains("features")) cfg.data.features = d.at("features").get<std::vector<std::string>>();
      if (d.contains("targets")) cfg.data.targets = d.at("targets").get<std::vector<std::string>>();
      if (d.contains("lag")) cfg.data.lag = d.at("lag").get<std::size_t>();
    }
    if (j.contains("out")) cfg.out = j.at("out").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid run config: ") + e.what());
  }
  return cfg;
}

Json to_json(const RunConfig& cfg) {
  return Json{{"kind", to_string(cfg.kind)},
              {"model", to_json(cfg.model)},
              {"train", to_json(cfg.train)},
              {"data",
               Json{{"path", cfg.data.path},
                    {"features", cfg.data.features},
                    {"targets", cfg.data.targets},
                    {"lag", cfg.data.lag}}},
              {"out", cfg.out}};
}

void apply_override(Json& doc, std::string_view assignment, bool use_aliases) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  }
  std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  if (const auto it = aliases().find(key); use_aliases && it != aliases().end()) key = it->second;

  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty path segment");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
  Json doc = path.empty() ? Json::object() : read_json_file(path);
  for (const auto& o : overrides) apply_override(doc, o);
  return run_config_from_json(doc);
}

fs::path default_out_dir(std::string_view command) {
  const char* root = std::getenv("BMOE_OUT_ROOT");
  return fs::path(root && *root ? root : "runs") / std::string(command);
}

SplitDataset load_split(RunConfig& cfg) {
  if (cfg.data.path.empty()) throw ConfigError("no data file configured (data.path or --data)");
  Dataset raw = load_csv(cfg.data.path, cfg.data.features, cfg.data.targets);
  raw = add_lags(raw, cfg.data.lag);
  cfg.model.input_dim = raw.num_features();
  cfg.model.num_tasks = raw.num_tasks();
  return prepare_split(raw);
}

std::vector<std::vector<double>> default_trace_weights() {
  return {{1.5, 0.5}, {1.3, 0.7}, {1.0, 1.0}, {0.7, 1.3}, {0.5, 1.5}};
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Balanced mixture-of-experts multi-task regression toolkit", "bmoe"};
  app.require_subcommand(1);

  CommonOptions train_opts;
  bool timing = false;
  auto* train = app.add_subcommand("train", "Train one model and write report, epoch CSV and checkpoint");
  add_common(train, train_opts);
  train->add_flag("--timing", timing, "Print training and inference wall-clock time");

  std::string eval_model, eval_data, eval_out;
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a CSV file");
  evaluate->add_option("--model,-m", eval_model, "Checkpoint JSON")->required();
  evaluate->add_option("--data", eval_data, "Data CSV")->required();
  evaluate->add_option("--out,-o", eval_out, "Output directory");

  CommonOptions sweep_opts;
  std::string sweep_param;
  std::vector<double> sweep_values;
  std::size_t sweep_seeds = 1, sweep_jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "Grid over one hyperparameter and several seeds");
  add_common(sweep, sweep_opts);
  sweep->add_option("--param", sweep_param, "alpha, lr, experts or batch")
      ->required()
      ->check(CLI::IsMember({"alpha", "lr", "experts", "batch"}));
  sweep->add_option("--values", sweep_values, "Comma-separated values")->required()->delimiter(',');
  sweep->add_option("--seeds", sweep_seeds, "Seeds per value");
  sweep->add_option("--jobs,-j", sweep_jobs, "Parallel runs");

  CommonOptions trace_opts;
  std::vector<std::string> trace_weights;
  auto* trace = app.add_subcommand("trace-weights", "Per-step task-weight traces for several initial weightings");
  add_common(trace, trace_opts);
  trace->add_option("--weights", trace_weights, "Initial weights, e.g. 1.5,0.5 (repeatable)");

  std::string gen_config, gen_out;
  std::vector<std::string> gen_sets;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic multi-task CSV");
  gen->add_option("--config,-c", gen_config, "Synthetic data config JSON");
  gen->add_option("--out,-o", gen_out, "Output CSV path");
  gen->add_option("--set", gen_sets, "Override key=value (repeatable)")->take_all();

  try {
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(train_opts, timing, out);
    if (*evaluate) return cmd_evaluate(eval_model, eval_data, eval_out, out);
    if (*sweep) return cmd_sweep(sweep_opts, sweep_param, sweep_values, sweep_seeds, sweep_jobs, out, err);
    if (*trace) return cmd_trace_weights(trace_opts, trace_weights, out);
    if (*gen) return cmd_gen_data(gen_config, gen_sets, gen_out, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kUsage;
}

}  // namespace bmoe::cli
