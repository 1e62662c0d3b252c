// SPDX-License-Identifier: Apache-2.0
//
// JSON and CSV encodings: model checkpoints, configuration sections, training
// reports and the plotting CSVs. Configuration readers reject unknown keys.

#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bmoe/data.hpp"
#include "bmoe/model.hpp"
#include "bmoe/trainer.hpp"

namespace bmoe {

using Json = nlohmann::ordered_json;

/// Throws ConfigError naming the first key of `obj` not in `allowed`.
void reject_unknown_keys(const Json& obj, std::initializer_list<std::string_view> allowed, std::string_view where);

Json to_json(const MmoeConfig& cfg);
/// Missing keys keep their defaults.
MmoeConfig mmoe_config_from_json(const Json& j);

Json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const Json& j);

Json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const Json& j);

Json to_json(const TaskMetrics& m);
Json to_json(const Normalizer& n);
Normalizer normalizer_from_json(const Json& j);

struct Checkpoint {
  std::unique_ptr<MultiTaskModel> model;
  std::optional<Normalizer> normalization;
  std::vector<std::string> feature_names;
  std::vector<std::string> target_names;
  std::size_t lag = 0;
};

/// {kind, config, rng_seed, parameters: {name: [[...], ...]}, [normalization,
/// feature_names, target_names]}. Doubles are written in round-trip form so a
/// reload reproduces predictions bit for bit.
Json checkpoint_to_json(const MultiTaskModel& model, const Normalizer* normalization = nullptr,
                        std::span<const std::string> feature_names = {},
                        std::span<const std::string> target_names = {}, std::size_t lag = 0);
Checkpoint checkpoint_from_json(const Json& j);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Json report_to_json(const TrainReport& report);

/// epoch,task,loss,weight,grad_norm,val_rmse,val_mae,val_r2
std::string epoch_csv(const TrainReport& report);
/// step,task,loss,loss_ratio,ritr,grad_norm,weight
std::string trace_csv(std::span<const TraceRow> rows);

/// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
Json read_json_file(const std::filesystem::path& path);

}  // namespace bmoe
