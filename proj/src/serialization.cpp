// SPDX-License-Identifier: Apache-2.0

#include "bmoe/serialization.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "bmoe/baselines.hpp"
#include "bmoe/error.hpp"

namespace bmoe {

namespace {

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return rows;
}

Matrix matrix_from_json(const Json& j, const std::string& name) {
  if (!j.is_array() || j.empty() || !j.front().is_array()) {
    throw ConfigError("parameter " + name + " must be a non-empty nested list");
  }
  Matrix m(j.size(), j.front().size());
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (j[r].size() != m.cols()) throw ConfigError("parameter " + name + " has ragged rows");
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

std::string csv_number(double v) { return std::isfinite(v) ? format_number(v) : std::string("nan"); }

}  // namespace

void reject_unknown_keys(const Json& obj, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

Json to_json(const MmoeConfig& c) {
  return Json{{"input_dim", c.input_dim},       {"embed_dim", c.embed_dim},
              {"num_experts", c.num_experts},   {"expert_hidden", c.expert_hidden},
              {"num_tasks", c.num_tasks},       {"tower_hidden", c.tower_hidden},
              {"dropout_rate", c.dropout_rate}, {"activation", to_string(c.activation)}};
}

MmoeConfig mmoe_config_from_json(const Json& j) {
  reject_unknown_keys(j,
                      {"input_dim", "embed_dim", "num_experts", "expert_hidden", "num_tasks", "tower_hidden",
                       "dropout_rate", "activation"},
                      "model config");
  MmoeConfig c;
  c.input_dim = get_or(j, "input_dim", c.input_dim);
  c.embed_dim = get_or(j, "embed_dim", c.embed_dim);
  c.num_experts = get_or(j, "num_experts", c.num_experts);
  c.expert_hidden = get_or(j, "expert_hidden", c.expert_hidden);
  c.num_tasks = get_or(j, "num_tasks", c.num_tasks);
  c.tower_hidden = get_or(j, "tower_hidden", c.tower_hidden);
  c.dropout_rate = get_or(j, "dropout_rate", c.dropout_rate);
  c.activation = parse_activation(get_or<std::string>(j, "activation", to_string(c.activation)));
  return c;
}

Json to_json(const TrainConfig& c) {
  Json j{{"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"learning_rate", c.learning_rate},
         {"weight_decay", c.weight_decay},
         {"lr_decay_epoch", c.lr_decay_epoch},
         {"lr_decay_factor", c.lr_decay_factor},
         {"alpha", c.alpha},
         {"lambda", nullptr},
         {"initial_task_weights", c.initial_task_weights},
         {"seed", c.seed},
         {"gradnorm_enabled", c.gradnorm_enabled},
         {"optimizer", to_string(c.optimizer)},
         {"shuffle", c.shuffle},
         {"track_grad_norms", c.track_grad_norms},
         {"trace", c.trace}};
  if (c.lambda) j["lambda"] = *c.lambda;
  return j;
}

TrainConfig train_config_from_json(const Json& j) {
  reject_unknown_keys(j,
                      {"epochs", "batch_size", "learning_rate", "weight_decay", "lr_decay_epoch", "lr_decay_factor",
                       "alpha", "lambda", "initial_task_weights", "seed", "gradnorm_enabled", "optimizer", "shuffle",
                       "track_grad_norms", "trace"},
                      "train config");
  TrainConfig c;
  c.epochs = get_or(j, "epochs", c.epochs);
  c.batch_size = get_or(j, "batch_size", c.batch_size);
  c.learning_rate = get_or(j, "learning_rate", c.learning_rate);
  c.weight_decay = get_or(j, "weight_decay", c.weight_decay);
  c.lr_decay_epoch = get_or(j, "lr_decay_epoch", c.lr_decay_epoch);
  c.lr_decay_factor = get_or(j, "lr_decay_factor", c.lr_decay_factor);
  c.alpha = get_or(j, "alpha", c.alpha);
  if (j.contains("lambda") && !j.at("lambda").is_null()) c.lambda = get_or(j, "lambda", 0.0);
  c.initial_task_weights = get_or(j, "initial_task_weights", c.initial_task_weights);
  c.seed = get_or(j, "seed", c.seed);
  c.gradnorm_enabled = get_or(j, "gradnorm_enabled", c.gradnorm_enabled);
  c.optimizer = parse_optimizer(get_or<std::string>(j, "optimizer", to_string(c.optimizer)));
  c.shuffle = get_or(j, "shuffle", c.shuffle);
  c.track_grad_norms = get_or(j, "track_grad_norms", c.track_grad_norms);
  c.trace = get_or(j, "trace", c.trace);
  return c;
}

Json to_json(const SynthConfig& c) {
  return Json{{"num_samples", c.num_samples}, {"num_features", c.num_features}, {"num_tasks", c.num_tasks},
              {"relatedness", c.relatedness}, {"noise_std", c.noise_std},       {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const Json& j) {
  reject_unknown_keys(j, {"num_samples", "num_features", "num_tasks", "relatedness", "noise_std", "seed"},
                      "synthetic config");
  SynthConfig c;
  c.num_samples = get_or(j, "num_samples", c.num_samples);
  c.num_features = get_or(j, "num_features", c.num_features);
  c.num_tasks = get_or(j, "num_tasks", c.num_tasks);
  c.relatedness = get_or(j, "relatedness", c.relatedness);
  c.noise_std = get_or(j, "noise_std", c.noise_std);
  c.seed = get_or(j, "seed", c.seed);
  return c;
}

Json to_json(const TaskMetrics& m) { return Json{{"rmse", m.rmse}, {"mae", m.mae}, {"r2", m.r2}}; }

Json to_json(const Normalizer& n) {
  return Json{{"feature_mean", n.features.mean},
              {"feature_std", n.features.stddev},
              {"target_mean", n.targets.mean},
              {"target_std", n.targets.stddev}};
}

Normalizer normalizer_from_json(const Json& j) {
  reject_unknown_keys(j, {"feature_mean", "feature_std", "target_mean", "target_std"}, "normalization");
  Normalizer n;
  n.features.mean = j.at("feature_mean").get<std::vector<double>>();
  n.features.stddev = j.at("feature_std").get<std::vector<double>>();
  n.targets.mean = j.at("target_mean").get<std::vector<double>>();
  n.targets.stddev = j.at("target_std").get<std::vector<double>>();
  return n;
}

Json checkpoint_to_json(const MultiTaskModel& model, const Normalizer* normalization,
                        std::span<const std::string> feature_names, std::span<const std::string> target_names, std::size_t lag) {
  Json params = Json::object();
  for (const auto& p : model.parameters()) params[p.name] = matrix_to_json(p.var.value());
  Json j{{"kind", to_string(model.kind())},
         {"config", to_json(model.config())},
         {"rng_seed", model.seed()},
         {"parameters", std::move(params)}};
  if (normalization) j["normalization"] = to_json(*normalization);
  if (!feature_names.empty()) j["feature_names"] = std::vector<std::string>(feature_names.begin(), feature_names.end());
  if (!target_names.empty()) j["target_names"] = std::vector<std::string>(target_names.begin(), target_names.end());
  if (lag > 0) j["lag"] = lag;
  return j;
}

Checkpoint checkpoint_from_json(const Json& j) {
  reject_unknown_keys(j, {"kind", "config", "rng_seed", "parameters", "normalization", "feature_names", "target_names",
                          "lag"},
                      "checkpoint");
  Checkpoint cp;
  try {
    const auto kind = parse_model_kind(j.at("kind").get<std::string>());
    const auto cfg = mmoe_config_from_json(j.at("config"));
    cp.model = build_model(kind, cfg, j.at("rng_seed").get<std::uint64_t>());
    const Json& params = j.at("parameters");
    std::vector<Matrix> values;
    for (const auto& p : cp.model->parameters()) {
      if (!params.contains(p.name)) throw ConfigError("checkpoint lacks parameter " + p.name);
      values.push_back(matrix_from_json(params.at(p.name), p.name));
    }
    if (params.size() != values.size()) throw ConfigError("checkpoint has unexpected extra parameters");
    cp.model->restore(values);
    if (j.contains("normalization")) cp.normalization = normalizer_from_json(j.at("normalization"));
    cp.feature_names = get_or(j, "feature_names", std::vector<std::string>{});
    cp.target_names = get_or(j, "target_names", std::vector<std::string>{});
    cp.lag = get_or<std::size_t>(j, "lag", 0);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  } catch (const DimensionError& e) {
    throw ConfigError(std::string("checkpoint does not match its config: ") + e.what());
  }
  return cp;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_json_file(path)); }

Json report_to_json(const TrainReport& r) {
  Json epochs = Json::array();
  for (const auto& e : r.epochs) {
    Json val = Json::array();
    for (const auto& m : e.val) val.push_back(to_json(m));
    epochs.push_back(Json{{"epoch", e.epoch},
                          {"learning_rate", e.learning_rate},
                          {"total_loss", e.total_loss},
                          {"train_loss", e.train_loss},
                          {"weights", e.weights},
                          {"grad_norms", e.grad_norms},
                          {"val", std::move(val)},
                          {"seconds", e.seconds}});
  }
  Json test = Json::array();
  for (const auto& m : r.test) test.push_back(to_json(m));
  Json best = Json::array();
  for (const auto& m : r.best_val) best.push_back(to_json(m));
  return Json{{"kind", to_string(r.kind)},
              {"task_names", r.task_names},
              {"steps", r.steps},
              {"balance_steps", r.balance_steps},
              {"initial_losses", r.initial_losses},
              {"final_weights", r.final_weights},
              {"best_epoch", r.best_epoch},
              {"best_val", std::move(best)},
              {"test", std::move(test)},
              {"train_seconds", r.train_seconds},
              {"infer_seconds", r.infer_seconds},
              {"epochs", std::move(epochs)}};
}

std::string epoch_csv(const TrainReport& r) {
  std::string out = "epoch,task,loss,weight,grad_norm,val_rmse,val_mae,val_r2\n";
  for (const auto& e : r.epochs) {
    for (std::size_t t = 0; t < e.train_loss.size(); ++t) {
      const double g = t < e.grad_norms.size() ? e.grad_norms[t] : std::nan("");
      const TaskMetrics v = t < e.val.size() ? e.val[t] : TaskMetrics{std::nan(""), std::nan(""), std::nan("")};
      out += std::to_string(e.epoch) + "," + std::to_string(t) + "," + csv_number(e.train_loss[t]) + "," +
             csv_number(e.weights[t]) + "," + csv_number(g) + "," + csv_number(v.rmse) + "," + csv_number(v.mae) +
             "," + csv_number(v.r2) + "\n";
    }
  }
  return out;
}

std::string trace_csv(std::span<const TraceRow> rows) {
  std::string out = "step,task,loss,loss_ratio,ritr,grad_norm,weight\n";
  for (const auto& row : rows) {
    out += std::to_string(row.step) + "," + std::to_string(row.task) + "," + csv_number(row.loss) + "," +
           csv_number(row.loss_ratio) + "," + csv_number(row.ritr) + "," + csv_number(row.grad_norm) + "," +
           csv_number(row.weight) + "\n";
  }
  return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  static std::atomic<unsigned> counter{0};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ostringstream suffix;
  suffix << ".tmp." << std::this_thread::get_id() << "." << counter++;
  const auto tmp = std::filesystem::path(path.string() + suffix.str());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw DataError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
}

}  // namespace bmoe
