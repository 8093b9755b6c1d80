#include "suslab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "suslab/error.hpp"

namespace suslab::stats {
namespace {

void check_pair(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorKind::Precondition,
          "correlation inputs differ in length (" + std::to_string(x.size()) + " vs " + std::to_string(y.size()) + ")");
  require(x.size() >= 3, ErrorKind::Precondition, "correlation needs at least 3 points");
}

double pearson_unchecked(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  require(sxx > 0.0 && syy > 0.0, ErrorKind::UndefinedStatistic, "correlation of a constant input is undefined");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  return pearson_unchecked(x, y);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson_unchecked(rx, ry);
}

double permutation_pvalue(std::span<const double> x, std::span<const double> y, Correlation kind, int shuffles,
                          std::uint64_t seed) {
  check_pair(x, y);
  require(shuffles > 0, ErrorKind::Precondition, "permutation test needs at least one shuffle");
  std::vector<double> a(x.begin(), x.end());
  std::vector<double> b(y.begin(), y.end());
  if (kind == Correlation::Spearman) {
    a = average_ranks(x);
    b = average_ranks(y);
  }
  const double observed = std::abs(pearson_unchecked(a, b));
  std::mt19937_64 rng(seed);
  int hits = 0;
  for (int s = 0; s < shuffles; ++s) {
    std::shuffle(b.begin(), b.end(), rng);
    if (std::abs(pearson_unchecked(a, b)) >= observed - 1e-12) ++hits;
  }
  return static_cast<double>(hits + 1) / static_cast<double>(shuffles + 1);
}

Interval bootstrap_mean(std::span<const double> values, int resamples, std::uint64_t seed, double level) {
  require(!values.empty(), ErrorKind::Precondition, "bootstrap of an empty sample");
  require(resamples > 0 && level > 0.0 && level < 1.0, ErrorKind::Precondition, "invalid bootstrap settings");
  const double n = static_cast<double>(values.size());
  Interval out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[pick(rng)];
    m = s / n;
  }
  std::sort(means.begin(), means.end());
  const double tail = 0.5 * (1.0 - level);
  const auto at = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(means.size() - 1) + 0.5));
    return means[std::min(idx, means.size() - 1)];
  };
  // The sample mean is always inside the reported interval.
  out.lo = std::min(at(tail), out.mean);
  out.hi = std::max(at(1.0 - tail), out.mean);
  return out;
}

std::pair<double, double> least_squares(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorKind::Precondition, "least squares needs two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  require(sxx > 0.0, ErrorKind::UndefinedStatistic, "least squares needs two distinct x values");
  const double b = sxy / sxx;
  return {my - b * mx, b};
}

}  // namespace suslab::stats
