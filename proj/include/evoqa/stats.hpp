#pragma once

#include <vector>

namespace evoqa {

/// Linear-interpolation sample quantile (Hyndman-Fan type 7), q in [0, 1].
double quantile(std::vector<double> values, double q);
double median(std::vector<double> values);

/// Average ranks (1-based); ties share the mean of their positions.
std::vector<double> average_ranks(const std::vector<double>& values);

/// Pearson correlation of the average ranks. 0 when either side is constant.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace evoqa
