// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: train, evaluate, sweep, trace-weights, gen-data.
//
// Exit codes are a stable contract for scripts:
//   0 success, 1 usage or configuration error, 2 data error, 3 numeric failure.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "bmoe/serialization.hpp"

namespace bmoe::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

/// Exit code for an exception thrown while running a command.
int exit_code_for(const std::exception& e);

struct DataConfig {
  std::string path;
  std::vector<std::string> features;  // empty: x1..x5
  std::vector<std::string> targets;   // empty: y1, y2
  std::size_t lag = 0;
};

/// The JSON run document: {kind, model, train, data, out}.
struct RunConfig {
  ModelKind kind = ModelKind::bmoe;
  MmoeConfig model;
  TrainConfig train;
  DataConfig data;
  std::string out;
};

RunConfig run_config_from_json(const Json& j);
Json to_json(const RunConfig& cfg);

/// Applies "key=value" to a raw config document. Keys are dot paths
/// (train.alpha) or short aliases (alpha, lr, lambda, epochs, batch, seed,
/// experts, dropout, kind, data). Values are parsed as JSON when possible and
/// kept as strings otherwise.
void apply_override(Json& doc, std::string_view assignment, bool use_aliases = true);

/// Reads a run config file (or starts from defaults when path is empty) and
/// applies the overrides in order.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

/// Output directory used when --out is absent: $BMOE_OUT_ROOT/<command>, or
/// runs/<command>.
std::filesystem::path default_out_dir(std::string_view command);

/// Loads the configured CSV, applies the lag window and returns a normalized
/// 6:2:2 split. Fills model.input_dim and model.num_tasks from the data.
SplitDataset load_split(RunConfig& cfg);

/// Five initial-weight settings for two tasks, from (1.5, 0.5) to (0.5, 1.5).
std::vector<std::vector<double>> default_trace_weights();

/// Entry point shared by the bmoe executable and the tests.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bmoe::cli
