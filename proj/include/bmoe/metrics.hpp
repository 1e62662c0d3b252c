// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "bmoe/matrix.hpp"

namespace bmoe {

struct TaskMetrics {
  double rmse = 0.0;
  double mae = 0.0;
  double r2 = 0.0;
};

double rmse(std::span<const double> y, std::span<const double> yhat);
double mae(std::span<const double> y, std::span<const double> yhat);
/// 1 - SS_res / SS_tot with the mean of y itself. Throws ContractError for constant y.
double r2(std::span<const double> y, std::span<const double> yhat);

/// All three metrics. r2 is NaN when y is constant.
TaskMetrics task_metrics(std::span<const double> y, std::span<const double> yhat);

/// One TaskMetrics per column of two equally shaped M x N matrices.
std::vector<TaskMetrics> column_metrics(const Matrix& y, const Matrix& yhat);

}  // namespace bmoe
