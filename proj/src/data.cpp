// SPDX-License-Identifier: Apache-2.0

#include "bmoe/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string_view>

#include "bmoe/error.hpp"
#include "bmoe/rng.hpp"

namespace bmoe {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

bool parse_finite(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size() && std::isfinite(out);
}

std::size_t find_column(const std::vector<std::string_view>& header, const std::string& name,
                        const std::filesystem::path& path) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw DataError(path.string() + ": missing column \"" + name + "\"");
  return static_cast<std::size_t>(it - header.begin());
}

}  // namespace

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  return Dataset{features.slice_rows(begin, end), targets.slice_rows(begin, end), feature_names, target_names};
}

void Dataset::validate() const {
  if (features.rows() != targets.rows()) {
    throw DataError("feature rows (" + std::to_string(features.rows()) + ") and target rows (" +
                    std::to_string(targets.rows()) + ") differ");
  }
  if (feature_names.size() != features.cols() || target_names.size() != targets.cols()) {
    throw DataError("column names do not match matrix widths");
  }
  for (const Matrix* m : {&features, &targets})
    for (double v : m->data())
      if (!std::isfinite(v)) throw DataError("dataset contains a non-finite value");
}

Dataset load_csv(const std::filesystem::path& path, std::vector<std::string> feature_columns,
                 std::vector<std::string> target_columns) {
  if (feature_columns.empty()) feature_columns = {"x1", "x2", "x3", "x4", "x5"};
  if (target_columns.empty()) target_columns = {"y1", "y2"};

  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file " + path.string());

  std::string header_line;
  if (!std::getline(in, header_line)) throw DataError(path.string() + ": empty file, header row expected");
  const auto header = split_fields(header_line);

  std::vector<std::size_t> feature_idx, target_idx;
  for (const auto& c : feature_columns) feature_idx.push_back(find_column(header, c, path));
  for (const auto& c : target_columns) target_idx.push_back(find_column(header, c, path));

  std::vector<double> fvals, tvals;
  std::vector<std::size_t> bad_rows;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto fields = split_fields(line);
    bool ok = true;
    auto read = [&](std::size_t idx, std::vector<double>& dst) {
      double v = 0.0;
      if (idx >= fields.size() || !parse_finite(fields[idx], v)) ok = false;
      dst.push_back(v);
    };
    for (auto i : feature_idx) read(i, fvals);
    for (auto i : target_idx) read(i, tvals);
    if (!ok) bad_rows.push_back(row);
  }

  if (!bad_rows.empty()) {
    std::ostringstream msg;
    msg << path.string() << ": rejected " << bad_rows.size() << " row(s) with missing or non-numeric cells: ";
    const std::size_t shown = std::min<std::size_t>(bad_rows.size(), 20);
    for (std::size_t i = 0; i < shown; ++i) msg << (i ? ", " : "") << "row " << bad_rows[i];
    if (shown < bad_rows.size()) msg << ", ...";
    throw DataError(msg.str());
  }

  Dataset d;
  d.features = Matrix(row, feature_idx.size());
  d.targets = Matrix(row, target_idx.size());
  std::copy(fvals.begin(), fvals.end(), d.features.data().begin());
  std::copy(tvals.begin(), tvals.end(), d.targets.data().begin());
  d.feature_names = std::move(feature_columns);
  d.target_names = std::move(target_columns);
  return d;
}

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void write_csv(const std::filesystem::path& path, const Dataset& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  std::string line;
  for (std::size_t c = 0; c < d.feature_names.size(); ++c) line += (c ? "," : "") + d.feature_names[c];
  for (const auto& name : d.target_names) line += (line.empty() ? "" : ",") + name;
  out << line << '\n';
  for (std::size_t r = 0; r < d.size(); ++r) {
    line.clear();
    for (double v : d.features.row(r)) line += (line.empty() ? "" : ",") + format_number(v);
    for (double v : d.targets.row(r)) line += (line.empty() ? "" : ",") + format_number(v);
    out << line << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

ColumnStats fit_column_stats(const Matrix& m) {
  if (m.rows() == 0) throw ContractError("cannot fit normalization on an empty matrix");
  ColumnStats s;
  s.mean.assign(m.cols(), 0.0);
  s.stddev.assign(m.cols(), 0.0);
  const double n = static_cast<double>(m.rows());
  for (std::size_t c = 0; c < m.cols(); ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) acc += m(r, c);
    const double mu = acc / n;
    double var = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) var += (m(r, c) - mu) * (m(r, c) - mu);
    const double sd = std::sqrt(var / n);
    s.mean[c] = mu;
    s.stddev[c] = sd < 1e-12 ? 1.0 : sd;
  }
  return s;
}

Matrix normalize_columns(const Matrix& m, const ColumnStats& stats) {
  if (stats.mean.size() != m.cols()) throw DimensionError("normalization width mismatch");
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = (m(r, c) - stats.mean[c]) / stats.stddev[c];
  return out;
}

Matrix denormalize_columns(const Matrix& m, const ColumnStats& stats) {
  if (stats.mean.size() != m.cols()) throw DimensionError("normalization width mismatch");
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(r, c) * stats.stddev[c] + stats.mean[c];
  return out;
}

Dataset Normalizer::apply(const Dataset& d) const {
  return Dataset{normalize_columns(d.features, features), normalize_columns(d.targets, targets), d.feature_names,
                 d.target_names};
}

Dataset Normalizer::invert(const Dataset& d) const {
  return Dataset{denormalize_columns(d.features, features), denormalize_columns(d.targets, targets),
                 d.feature_names, d.target_names};
}

Normalizer fit_normalizer(const Dataset& train) {
  return Normalizer{fit_column_stats(train.features), fit_column_stats(train.targets)};
}

Dataset apply_normalizer(const Normalizer& stats, const Dataset& d) { return stats.apply(d); }

SplitSizes split_sizes_622(std::size_t rows) {
  if (rows < 5) throw DataError("need at least 5 rows for a 6:2:2 split, got " + std::to_string(rows));
  SplitSizes s;
  s.train = rows * 6 / 10;
  s.val = rows * 2 / 10;
  s.test = rows - s.train - s.val;
  return s;
}

SplitDataset split_622(const Dataset& d) {
  const auto s = split_sizes_622(d.size());
  return SplitDataset{d.slice(0, s.train), d.slice(s.train, s.train + s.val), d.slice(s.train + s.val, d.size()),
                      {}};
}

SplitDataset normalize_split(SplitDataset split) {
  split.normalization = fit_normalizer(split.train);
  split.train = split.normalization.apply(split.train);
  split.val = split.normalization.apply(split.val);
  split.test = split.normalization.apply(split.test);
  return split;
}

SplitDataset prepare_split(const Dataset& d) { return normalize_split(split_622(d)); }

Dataset add_lags(const Dataset& d, std::size_t lags) {
  if (lags == 0) return d;
  if (d.size() <= lags) throw DataError("lag window " + std::to_string(lags) + " exceeds dataset length");
  const std::size_t f = d.num_features();
  const std::size_t rows = d.size() - lags;
  Dataset out;
  out.features = Matrix(rows, f * (lags + 1));
  out.targets = d.targets.slice_rows(lags, d.size());
  out.target_names = d.target_names;
  out.feature_names = d.feature_names;
  for (std::size_t k = 1; k <= lags; ++k)
    for (const auto& name : d.feature_names) out.feature_names.push_back(name + "_lag" + std::to_string(k));
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t src = r + lags;
    for (std::size_t k = 0; k <= lags; ++k)
      for (std::size_t c = 0; c < f; ++c) out.features(r, k * f + c) = d.features(src - k, c);
  }
  return out;
}

namespace {

constexpr std::size_t kHiddenUnits = 8;
constexpr std::size_t kCalibrationSamples = 8192;
constexpr std::uint64_t kCalibrationStream = 0xC2B2AE3D27D4EB4FULL;

// One random function per signal: a linear term plus a tanh layer, acting on
// the signal's own orthonormal subspace of the feature space.
struct SignalNet {
  Matrix basis;   // d x F, orthonormal rows
  Matrix hidden;  // kHiddenUnits x d
  std::vector<double> bias;
  std::vector<double> out;
  std::vector<double> linear;  // d
  double offset = 0.0;
  double scale = 1.0;

  double raw(std::span<const double> x) const {
    std::vector<double> proj(basis.rows(), 0.0);
    for (std::size_t u = 0; u < basis.rows(); ++u)
      for (std::size_t c = 0; c < x.size(); ++c) proj[u] += basis(u, c) * x[c];
    double acc = 0.0;
    for (std::size_t u = 0; u < proj.size(); ++u) acc += linear[u] * proj[u];
    for (std::size_t h = 0; h < hidden.rows(); ++h) {
      double pre = bias[h];
      for (std::size_t u = 0; u < proj.size(); ++u) pre += hidden(h, u) * proj[u];
      acc += out[h] * std::tanh(pre);
    }
    return acc;
  }
  double operator()(std::span<const double> x) const { return (raw(x) - offset) / scale; }
};

void check_synth_config(const SynthConfig& cfg) {
  if (!(cfg.relatedness >= -1.0 && cfg.relatedness <= 1.0)) {
    throw ContractError("relatedness must lie in [-1, 1], got " + std::to_string(cfg.relatedness));
  }
  if (!(cfg.noise_std >= 0.0)) throw ContractError("noise_std must be non-negative");
  if (cfg.num_tasks == 0) throw ContractError("num_tasks must be at least 1");
  if (cfg.num_features < cfg.num_tasks + 1) {
    throw ContractError("synthetic generator needs num_features >= num_tasks + 1");
  }
}

// Consumes the first draws of rng; gen_synthetic relies on that order.
// Signal 0 is shared, signal i + 1 is private to task i.
std::vector<SignalNet> draw_signals(const SynthConfig& cfg, Rng& rng) {
  const std::size_t n_signals = cfg.num_tasks + 1;
  const std::size_t dim = cfg.num_features / n_signals;

  Matrix directions(n_signals * dim, cfg.num_features);
  for (std::size_t i = 0; i < directions.rows(); ++i) {
    auto v = directions.row(i);
    for (double& x : v) x = rng.normal();
    // Gram-Schmidt against earlier rows, twice for stability.
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < i; ++j) {
        auto u = directions.row(j);
        double dot = 0.0;
        for (std::size_t c = 0; c < v.size(); ++c) dot += v[c] * u[c];
        for (std::size_t c = 0; c < v.size(); ++c) v[c] -= dot * u[c];
      }
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }

  std::vector<SignalNet> nets(n_signals);
  const double gain = 2.0 / std::sqrt(static_cast<double>(dim));
  for (std::size_t s = 0; s < n_signals; ++s) {
    auto& net = nets[s];
    net.basis = directions.slice_rows(s * dim, (s + 1) * dim);
    net.hidden = Matrix(kHiddenUnits, dim);
    for (double& w : net.hidden.data()) w = gain * rng.normal();
    for (std::size_t h = 0; h < kHiddenUnits; ++h) net.bias.push_back(rng.uniform(-1.0, 1.0));
    for (std::size_t h = 0; h < kHiddenUnits; ++h) net.out.push_back(rng.normal());
    for (std::size_t u = 0; u < dim; ++u) net.linear.push_back(0.5 * rng.normal() / std::sqrt(static_cast<double>(dim)));
  }

  // Standardize every signal on a fixed calibration sample so all of them
  // have zero mean and unit variance regardless of num_samples.
  Rng calib(cfg.seed ^ kCalibrationStream);
  Matrix probe(kCalibrationSamples, cfg.num_features);
  for (double& v : probe.data()) v = calib.normal();
  for (auto& net : nets) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t r = 0; r < probe.rows(); ++r) {
      const double v = net.raw(probe.row(r));
      mean += v;
      sq += v * v;
    }
    mean /= static_cast<double>(probe.rows());
    const double var = sq / static_cast<double>(probe.rows()) - mean * mean;
    net.offset = mean;
    net.scale = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  return nets;
}

Matrix signal_from_nets(const SynthConfig& cfg, const std::vector<SignalNet>& nets, const Matrix& features) {
  const double shared_scale = std::sqrt(std::fabs(cfg.relatedness));
  const double private_scale = std::sqrt(1.0 - std::fabs(cfg.relatedness));
  Matrix out(features.rows(), cfg.num_tasks);
  for (std::size_t r = 0; r < features.rows(); ++r) {
    const auto x = features.row(r);
    const double shared = nets[0](x);
    for (std::size_t t = 0; t < cfg.num_tasks; ++t) {
      const double sign = (cfg.relatedness < 0.0 && t % 2 == 1) ? -1.0 : 1.0;
      out(r, t) = sign * shared_scale * shared + private_scale * nets[t + 1](x);
    }
  }
  return out;
}

}  // namespace

Matrix synthetic_signal(const SynthConfig& cfg, const Matrix& features) {
  check_synth_config(cfg);
  if (features.cols() != cfg.num_features) throw DimensionError("feature width does not match config");
  Rng rng(cfg.seed);
  return signal_from_nets(cfg, draw_signals(cfg, rng), features);
}

Dataset gen_synthetic(const SynthConfig& cfg) {
  check_synth_config(cfg);
  Rng rng(cfg.seed);
  const auto nets = draw_signals(cfg, rng);

  Dataset d;
  d.features = Matrix(cfg.num_samples, cfg.num_features);
  for (double& v : d.features.data()) v = rng.normal();
  d.targets = signal_from_nets(cfg, nets, d.features);
  if (cfg.noise_std > 0.0)
    for (double& v : d.targets.data()) v += cfg.noise_std * rng.normal();
  for (std::size_t c = 0; c < cfg.num_features; ++c) d.feature_names.push_back("x" + std::to_string(c + 1));
  for (std::size_t t = 0; t < cfg.num_tasks; ++t) d.target_names.push_back("y" + std::to_string(t + 1));
  return d;
}

}  // namespace bmoe
