// SPDX-License-Identifier: Apache-2.0

#include "bmoe/metrics.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "bmoe/error.hpp"

namespace bmoe {

namespace {

void check_pair(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size()) {
    throw DimensionError("metric inputs differ in length: " + std::to_string(y.size()) + " vs " +
                         std::to_string(yhat.size()));
  }
  if (y.empty()) throw ContractError("metrics need at least one sample");
}

double sum_squared_residual(std::span<const double> y, std::span<const double> yhat) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return acc;
}

double total_sum_of_squares(std::span<const double> y) {
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double acc = 0.0;
  for (double v : y) acc += (v - mean) * (v - mean);
  return acc;
}

}  // namespace

double rmse(std::span<const double> y, std::span<const double> yhat) {
  check_pair(y, yhat);
  return std::sqrt(sum_squared_residual(y, yhat) / static_cast<double>(y.size()));
}

double mae(std::span<const double> y, std::span<const double> yhat) {
  check_pair(y, yhat);
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += std::fabs(y[i] - yhat[i]);
  return acc / static_cast<double>(y.size());
}

double r2(std::span<const double> y, std::span<const double> yhat) {
  check_pair(y, yhat);
  const double total = total_sum_of_squares(y);
  if (!(total > 0.0)) throw ContractError("R2 is undefined for a constant target vector");
  return 1.0 - sum_squared_residual(y, yhat) / total;
}

TaskMetrics task_metrics(std::span<const double> y, std::span<const double> yhat) {
  TaskMetrics m{rmse(y, yhat), mae(y, yhat), std::numeric_limits<double>::quiet_NaN()};
  if (total_sum_of_squares(y) > 0.0) m.r2 = r2(y, yhat);
  return m;
}

std::vector<TaskMetrics> column_metrics(const Matrix& y, const Matrix& yhat) {
  if (!y.same_shape(yhat)) {
    throw DimensionError("metric matrices differ: " + y.shape_string() + " vs " + yhat.shape_string());
  }
  std::vector<TaskMetrics> out;
  for (std::size_t c = 0; c < y.cols(); ++c) {
    const auto a = y.col(c);
    const auto b = yhat.col(c);
    out.push_back(task_metrics(a, b));
  }
  return out;
}

}  // namespace bmoe
