#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "suslab/error.hpp"
#include "suslab/stats.hpp"

namespace st = suslab::stats;
using suslab::Error;
using suslab::ErrorKind;

namespace {

double naive_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

// Ranks by counting: r_i = 1 + #{x_j < x_i} + (#{x_j == x_i} - 1) / 2.
std::vector<double> naive_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (double v : x) {
      less += v < x[i];
      equal += v == x[i];
    }
    r[i] = 1.0 + less + (equal - 1.0) / 2.0;
  }
  return r;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no exception";
  return ErrorKind::Io;
}

}  // namespace

TEST(Stats, MatchesBruteForceOnRandomVectors) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> coarse(0, 6);  // forces ties
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3 + trial % 40;
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = trial % 2 ? g(rng) : coarse(rng);
      y[i] = 0.5 * x[i] + g(rng);
    }
    if (naive_ranks(x) == std::vector<double>(n, (n + 1) / 2.0)) continue;  // constant draw
    EXPECT_NEAR(st::pearson(x, y), naive_pearson(x, y), 1e-12);
    EXPECT_NEAR(st::spearman(x, y), naive_pearson(naive_ranks(x), naive_ranks(y)), 1e-12);
    EXPECT_EQ(st::average_ranks(x), naive_ranks(x));
  }
}

TEST(Stats, KnownValues) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(st::pearson(x, std::vector<double>{2, 4, 6, 8, 10}), 1.0);
  EXPECT_DOUBLE_EQ(st::pearson(x, std::vector<double>{5, 4, 3, 2, 1}), -1.0);
  // Monotone but non-linear: Spearman is exactly 1, Pearson is not.
  const std::vector<double> cube{1, 8, 27, 64, 125};
  EXPECT_DOUBLE_EQ(st::spearman(x, cube), 1.0);
  EXPECT_LT(st::pearson(x, cube), 1.0);
  EXPECT_EQ(st::average_ranks(std::vector<double>{10, 20, 20, 30}), (std::vector<double>{1, 2.5, 2.5, 4}));
}

TEST(Stats, Errors) {
  const std::vector<double> a{1, 2, 3};
  const std::vector<double> flat{2, 2, 2};
  EXPECT_EQ(kind_of([&] { st::pearson(a, flat); }), ErrorKind::UndefinedStatistic);
  EXPECT_EQ(kind_of([&] { st::spearman(flat, a); }), ErrorKind::UndefinedStatistic);
  EXPECT_EQ(kind_of([&] { st::pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2}); }),
            ErrorKind::Precondition);
  EXPECT_EQ(kind_of([&] { st::pearson(a, std::vector<double>{1, 2, 3, 4}); }), ErrorKind::Precondition);
  EXPECT_EQ(kind_of([&] { st::bootstrap_mean(std::vector<double>{}, 10, 1); }), ErrorKind::Precondition);
  EXPECT_EQ(kind_of([&] { st::least_squares(flat, a); }), ErrorKind::UndefinedStatistic);
}

TEST(Stats, PermutationPValue) {
  std::vector<double> x(30), y(30), noise(30);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (int i = 0; i < 30; ++i) {
    x[i] = i;
    y[i] = i + 0.1 * g(rng);
    noise[i] = g(rng);
  }
  const double strong = st::permutation_pvalue(x, y, st::Correlation::Spearman, 2000, 9);
  EXPECT_DOUBLE_EQ(strong, 1.0 / 2001.0);  // no shuffle reaches a near-perfect rank correlation
  const double weak = st::permutation_pvalue(x, noise, st::Correlation::Pearson, 2000, 9);
  EXPECT_GT(weak, 0.01);
  EXPECT_LE(weak, 1.0);
  EXPECT_EQ(weak, st::permutation_pvalue(x, noise, st::Correlation::Pearson, 2000, 9));
}

TEST(Stats, BootstrapContainsMeanAndIsSeeded) {
  std::vector<double> v;
  std::mt19937_64 rng(2);
  std::exponential_distribution<double> e(1.0);
  for (int i = 0; i < 200; ++i) v.push_back(e(rng));
  const auto iv = st::bootstrap_mean(v, 1000, 4);
  EXPECT_LE(iv.lo, iv.mean);
  EXPECT_GE(iv.hi, iv.mean);
  EXPECT_LT(iv.hi - iv.lo, 0.5);
  const auto again = st::bootstrap_mean(v, 1000, 4);
  EXPECT_EQ(iv.lo, again.lo);
  EXPECT_EQ(iv.hi, again.hi);
  const auto single = st::bootstrap_mean(std::vector<double>{3.5}, 50, 1);
  EXPECT_EQ(single.lo, 3.5);
  EXPECT_EQ(single.hi, 3.5);
}

TEST(Stats, LeastSquaresRecoversLine) {
  const auto [a, b] = st::least_squares(std::vector<double>{0, 1, 2, 3}, std::vector<double>{1, 3, 5, 7});
  EXPECT_NEAR(a, 1.0, 1e-14);
  EXPECT_NEAR(b, 2.0, 1e-14);
}
