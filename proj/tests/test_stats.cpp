#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "airwayseg/error.hpp"
#include "airwayseg/stats.hpp"
#include "test_util.hpp"

using namespace airwayseg;
using namespace airwayseg::stats;

namespace {

// Independent oracles: naive ranking, textbook Pearson, brute enumeration and
// Simpson quadrature of the t density.

std::vector<double> naive_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double w : v) {
      less += w < v[i];
      equal += w == v[i];
    }
    r[i] = less + (equal + 1) / 2;
  }
  return r;
}

double naive_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

double enumerated_p(const std::vector<double>& x, const std::vector<double>& y, Sidedness side) {
  const auto rx = naive_ranks(x);
  const auto ry = naive_ranks(y);
  const double obs = naive_pearson(rx, ry);
  std::vector<std::size_t> perm(y.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::size_t hit = 0, total = 0;
  do {
    std::vector<double> py(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) py[i] = ry[perm[i]];
    const double r = naive_pearson(rx, py);
    constexpr double eps = 1e-9;
    if (side == Sidedness::TwoSided) {
      hit += std::abs(r) >= std::abs(obs) - eps;
    } else {
      hit += obs >= 0 ? r >= obs - eps : r <= obs + eps;
    }
    ++total;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(hit) / static_cast<double>(total);
}

double t_density(double t, double nu) {
  const double logc = std::lgamma((nu + 1) / 2) - std::lgamma(nu / 2) - 0.5 * std::log(nu * std::numbers::pi);
  return std::exp(logc - (nu + 1) / 2 * std::log1p(t * t / nu));
}

// P(T <= t) for t <= 0 via the substitution u = 1/(1 - s), integrating the tail.
double quadrature_t_cdf(double t, double nu) {
  const double a = std::atan(t);
  const int n = 20000;
  const double lo = -std::numbers::pi / 2, h = (a - lo) / n;
  auto f = [&](double theta) {
    if (theta <= lo) return nu == 1.0 ? 1.0 / std::numbers::pi : 0.0;
    const double c = std::cos(theta);
    return t_density(std::tan(theta), nu) / (c * c);
  };
  double s = f(lo) + f(a);
  for (int i = 1; i < n; ++i) s += f(lo + i * h) * (i % 2 ? 4 : 2);
  return s * h / 3;
}

PairedSample sample(std::vector<double> x, std::vector<double> y) { return {{}, std::move(x), std::move(y)}; }

}  // namespace

TEST(Ranks, Examples) {
  EXPECT_EQ(rank_average_ties(std::vector<double>{10, 20, 30}), (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(rank_average_ties(std::vector<double>{5, 5, 9}), (std::vector<double>{1.5, 1.5, 3}));
  EXPECT_EQ(rank_average_ties(std::vector<double>{7, 7, 7}), (std::vector<double>{2, 2, 2}));
}

TEST(Ranks, MatchNaiveRanks) {
  XorShift64Star rng(3);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> v(1 + rng.below(30));
    for (auto& x : v) x = static_cast<double>(rng.below(10));
    EXPECT_EQ(rank_average_ties(v), naive_ranks(v));
  }
}

TEST(Spearman, MonotoneExamples) {
  const auto r = spearman(sample({1, 2, 3, 4, 5}, {10, 20, 30, 40, 50}));
  EXPECT_EQ(r.rho, 1.0);
  const auto d = spearman(sample({1, 2, 3}, {3, 2, 1}));
  EXPECT_EQ(d.rho, -1.0);
  EXPECT_EQ(d.method, PValueMethod::ExactPermutation);
  EXPECT_NEAR(d.p_value, 2.0 / 6.0, 1e-15);
}

TEST(Spearman, ExactPermutationMatchesEnumeration) {
  XorShift64Star rng(5);
  for (std::size_t n = 3; n <= 7; ++n) {
    for (int t = 0; t < 12; ++t) {
      std::vector<double> x(n), y(n);
      // Coarse values produce ties in about half of the draws.
      const std::uint64_t levels = t % 2 ? 4 : 1000;
      for (auto& v : x) v = static_cast<double>(rng.below(levels));
      for (auto& v : y) v = static_cast<double>(rng.below(levels));
      if (naive_ranks(x) == std::vector<double>(n, (n + 1) / 2.0) ||
          naive_ranks(y) == std::vector<double>(n, (n + 1) / 2.0)) {
        continue;
      }
      for (auto side : {Sidedness::TwoSided, Sidedness::OneSided}) {
        const auto r = spearman(sample(x, y), side);
        EXPECT_EQ(r.method, PValueMethod::ExactPermutation);
        EXPECT_NEAR(r.rho, naive_pearson(naive_ranks(x), naive_ranks(y)), 1e-12);
        EXPECT_NEAR(r.p_value, enumerated_p(x, y, side), 1e-12) << "n=" << n;
      }
    }
  }
}

TEST(Spearman, StudentTMatchesQuadrature) {
  for (double nu : {1.0, 3.0, 7.5, 23.0, 60.0}) {
    for (double t : {-0.3, -1.0, -2.3, -4.0}) {
      EXPECT_NEAR(student_t_cdf(t, nu), quadrature_t_cdf(t, nu), 1e-9) << "t=" << t << " nu=" << nu;
      EXPECT_NEAR(student_t_cdf(-t, nu), 1 - quadrature_t_cdf(t, nu), 1e-9);
    }
  }
  EXPECT_EQ(student_t_cdf(0.0, 5.0), 0.5);
}

TEST(Spearman, IncompleteBetaKnownValues) {
  EXPECT_NEAR(incomplete_beta(1, 1, 0.3), 0.3, 1e-14);
  EXPECT_NEAR(incomplete_beta(2, 3, 0.4), 0.5248, 1e-12);
  EXPECT_EQ(incomplete_beta(2, 3, 0.0), 0.0);
  EXPECT_EQ(incomplete_beta(2, 3, 1.0), 1.0);
  EXPECT_THROW(incomplete_beta(0, 3, 0.5), Error);
}

TEST(Spearman, TApproximationAtRhoMinus046) {
  // rho = -0.46 on 25 cases: two-sided p from the t approximation.
  const double rho = -0.46, dof = 23;
  const double t = rho * std::sqrt(dof / (1 - rho * rho));
  const double p = 2 * student_t_cdf(t, dof);
  EXPECT_NEAR(p, 2 * quadrature_t_cdf(t, dof), 1e-9);
  EXPECT_NEAR(p, 0.021, 0.002);
}

TEST(Spearman, LargeSampleUsesTApproximation) {
  XorShift64Star rng(9);
  std::vector<double> x(25), y(25);
  for (std::size_t i = 0; i < 25; ++i) {
    x[i] = rng.uniform();
    y[i] = x[i] + rng.uniform();
  }
  const auto r = spearman(sample(x, y));
  EXPECT_EQ(r.method, PValueMethod::TApproximation);
  const double t = r.rho * std::sqrt(23 / (1 - r.rho * r.rho));
  EXPECT_NEAR(r.p_value, 2 * quadrature_t_cdf(-std::abs(t), 23), 1e-9);
  EXPECT_NEAR(spearman(sample(x, y), Sidedness::OneSided).p_value, r.p_value / 2, 1e-15);
}

TEST(Spearman, PerfectLargeSampleUsesPermutationBound) {
  std::vector<double> x(12), y(12);
  for (std::size_t i = 0; i < 12; ++i) {
    x[i] = static_cast<double>(i);
    y[i] = 100.0 - 3.0 * static_cast<double>(i);
  }
  const auto r = spearman(sample(x, y));
  EXPECT_EQ(r.rho, -1.0);
  EXPECT_NEAR(r.p_value, 2.0 / 479001600.0, 1e-20);
}

TEST(Spearman, InvariantUnderIncreasingTransforms) {
  XorShift64Star rng(11);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 3 + rng.below(30);
    std::vector<double> x(n), y(n), fx(n), gy(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.uniform() * 10 - 5;
      y[i] = rng.uniform() * 10 - 5;
      fx[i] = std::exp(x[i]) + 3;
      gy[i] = y[i] * y[i] * y[i] - 7;
    }
    if (n <= kExactPermutationMaxN) {
      EXPECT_EQ(spearman(sample(x, y)).rho, spearman(sample(fx, gy)).rho);
    } else {
      EXPECT_EQ(spearman_rho(x, y), spearman_rho(fx, gy));
    }
  }
}

TEST(Spearman, Errors) {
  EXPECT_THROW(spearman(sample({1, 2}, {2, 1})), Error);
  EXPECT_THROW(spearman(sample({1, 2, 3}, {2, 1})), Error);
  EXPECT_THROW(spearman(sample({1, 1, 1}, {1, 2, 3})), UndefinedError);
  EXPECT_THROW(spearman(sample({1, std::nan(""), 3}, {1, 2, 3})), Error);
}

TEST(CorrelateVolumes, AntiMonotoneCohortAndDegenerateClass) {
  const auto classes = ClassTable::lesion_defaults();
  std::map<std::string, std::vector<double>> volumes;
  std::map<std::string, double> fev1;
  for (int i = 0; i < 10; ++i) {
    const std::string id = "c" + std::to_string(i);
    const double f = 40.0 + 5.0 * i;
    fev1[id] = f;
    volumes[id] = {100 - f, 2 * (100 - f), (100 - f) * (100 - f), 1000 / f, 0.0};
  }
  const auto rows = correlate_volumes(classes, volumes, fev1);
  ASSERT_EQ(rows.size(), 5u);
  for (std::size_t c = 0; c < 4; ++c) {
    ASSERT_TRUE(rows[c].result.has_value());
    EXPECT_EQ(rows[c].result->rho, -1.0);
  }
  EXPECT_FALSE(rows[4].result.has_value());
  EXPECT_EQ(rows[4].reason, "undefined correlation");
  EXPECT_EQ(rows[4].class_name, "Consolidation");
}

TEST(CorrelateVolumes, ShuffledRanksMatchDirectFormula) {
  // Distinct ranks: rho = 1 - 6 sum d^2 / (n (n^2 - 1)).
  const std::vector<int> perm{3, 7, 1, 9, 0, 5, 2, 8, 6, 4};
  std::map<std::string, std::vector<double>> volumes;
  std::map<std::string, double> fev1;
  double d2 = 0;
  for (int i = 0; i < 10; ++i) {
    const std::string id = "k" + std::to_string(i);
    fev1[id] = 50.0 + i;
    volumes[id] = {static_cast<double>(perm[static_cast<std::size_t>(i)])};
    d2 += std::pow(i - perm[static_cast<std::size_t>(i)], 2);
  }
  const auto rows = correlate_volumes(ClassTable::numbered(1), volumes, fev1);
  EXPECT_NEAR(rows[0].result->rho, 1 - 6 * d2 / (10 * 99.0), 1e-12);
}

TEST(CorrelateVolumes, MissingIdsAndSmallCohortsThrow) {
  const auto t = ClassTable::numbered(1);
  EXPECT_THROW(correlate_volumes(t, {{"a", {1}}, {"b", {2}}, {"c", {3}}}, {{"a", 50}, {"b", 60}}), Error);
  EXPECT_THROW(correlate_volumes(t, {{"a", {1}}, {"b", {2}}}, {{"a", 50}, {"b", 60}}), Error);
}

TEST(ClassVolumes, CountsTimesVoxelVolume) {
  const LabelVolume v({2, 2, 1}, VoxelSpacing(0.5, 0.5, 2.0), {0, 1, 1, 5});
  const auto vol = class_volumes_mm3(v);
  EXPECT_EQ(vol, (std::vector<double>{1.0, 0.0, 0.0, 0.0, 0.5}));
}
