#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace suslab::stats {

/// Throws Precondition for mismatched lengths or n < 3, UndefinedStatistic
/// when either input is constant.
double pearson(std::span<const double> x, std::span<const double> y);

/// Pearson on average ranks (ties share the mean of their positions, 1-based).
double spearman(std::span<const double> x, std::span<const double> y);

std::vector<double> average_ranks(std::span<const double> x);

enum class Correlation { Pearson, Spearman };

/// Two-sided permutation p-value: (1 + #{|r_perm| >= |r_obs|}) / (1 + shuffles).
double permutation_pvalue(std::span<const double> x, std::span<const double> y, Correlation kind,
                          int shuffles, std::uint64_t seed);

struct Interval {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

/// Percentile bootstrap interval of the mean. Throws Precondition on empty input.
Interval bootstrap_mean(std::span<const double> values, int resamples, std::uint64_t seed, double level = 0.95);

/// Ordinary least squares y = a + b x; returns {a, b}. Needs two distinct x.
std::pair<double, double> least_squares(std::span<const double> x, std::span<const double> y);

}  // namespace suslab::stats
