// SPDX-License-Identifier: Apache-2.0
//
// Process-data ingestion: CSV loading, chronological 6:2:2 splitting, z-score
// normalization fitted on the training split, lag windows and a seeded
// synthetic multi-task generator with controllable task relatedness.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bmoe/matrix.hpp"

namespace bmoe {

struct Dataset {
  Matrix features;  // M x F
  Matrix targets;   // M x N
  std::vector<std::string> feature_names;
  std::vector<std::string> target_names;

  std::size_t size() const noexcept { return features.rows(); }
  std::size_t num_features() const noexcept { return features.cols(); }
  std::size_t num_tasks() const noexcept { return targets.cols(); }

  /// Rows [begin, end).
  Dataset slice(std::size_t begin, std::size_t end) const;
  /// Throws DataError on non-finite cells or mismatched shapes.
  void validate() const;
};

/// Loads a headered CSV. Empty column lists default to x1..x5 and y1, y2.
Dataset load_csv(const std::filesystem::path& path, std::vector<std::string> feature_columns = {},
                 std::vector<std::string> target_columns = {});

/// Header plus one row per sample, features first. Numbers use the shortest
/// round-trip decimal form so output is byte-stable.
void write_csv(const std::filesystem::path& path, const Dataset& d);
std::string format_number(double v);

struct ColumnStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // population; 1 for constant columns
};

ColumnStats fit_column_stats(const Matrix& m);
Matrix normalize_columns(const Matrix& m, const ColumnStats& stats);
Matrix denormalize_columns(const Matrix& m, const ColumnStats& stats);

struct Normalizer {
  ColumnStats features;
  ColumnStats targets;

  bool empty() const noexcept { return features.mean.empty(); }
  Dataset apply(const Dataset& d) const;
  Dataset invert(const Dataset& d) const;
  Matrix denormalize_targets(const Matrix& t) const { return denormalize_columns(t, targets); }
};

Normalizer fit_normalizer(const Dataset& train);
Dataset apply_normalizer(const Normalizer& stats, const Dataset& d);

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

/// floor(0.6 M) / floor(0.2 M) / remainder. Throws DataError for M < 5.
SplitSizes split_sizes_622(std::size_t rows);

struct SplitDataset {
  Dataset train;
  Dataset val;
  Dataset test;
  // Empty until normalize_split has run.
  Normalizer normalization;
};

/// Chronological split, no shuffling, no normalization.
SplitDataset split_622(const Dataset& d);
/// Fits statistics on train and applies them to every subset.
SplitDataset normalize_split(SplitDataset split);
/// split_622 followed by normalize_split.
SplitDataset prepare_split(const Dataset& d);

/// Appends the previous `lags` rows of every feature as extra columns
/// (named <name>_lag<k>). The first `lags` rows are dropped.
Dataset add_lags(const Dataset& d, std::size_t lags);

struct SynthConfig {
  std::size_t num_samples = 1000;
  std::size_t num_features = 5;
  std::size_t num_tasks = 2;
  double relatedness = 0.5;
  double noise_std = 0.1;
  std::uint64_t seed = 42;
};

/// Synthetic tasks
///   y_i = sign_i sqrt(|rho|) s(x) + sqrt(1 - |rho|) p_i(x) + noise
/// where s and p_i are random linear+tanh functions, each reading its own block
/// of orthonormal projections of standard-normal features, scaled to unit
/// variance. The signals are independent, so the noise-free correlation of two
/// tasks is rho. sign_i alternates (+, -, +, ...) when rho < 0.
/// Requires num_features >= num_tasks + 1.
Dataset gen_synthetic(const SynthConfig& cfg);

/// Noise-free part of the generator output for the same config.
Matrix synthetic_signal(const SynthConfig& cfg, const Matrix& features);

}  // namespace bmoe
