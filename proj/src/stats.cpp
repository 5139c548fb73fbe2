#include "airwayseg/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>

#include "airwayseg/error.hpp"

namespace airwayseg::stats {

std::string to_string(Sidedness s) { return s == Sidedness::TwoSided ? "two-sided" : "one-sided"; }

std::string to_string(PValueMethod m) {
  return m == PValueMethod::TApproximation ? "t-approximation" : "exact-permutation";
}

std::vector<double> rank_average_ties(std::span<const double> values) {
  if (values.empty()) throw Error("rank: empty input");
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = mean_rank;
    i = j;
  }
  return ranks;
}

namespace {

void require_sample(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw Error("paired sample lengths differ: " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  }
  if (x.size() < 3) throw Error("paired sample needs at least 3 cases, got " + std::to_string(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw Error("paired sample has a non-finite value");
  }
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw UndefinedError("undefined correlation: zero rank variance");
  const double r = sab / std::sqrt(saa * sbb);
  // Perfectly monotone ranks can land an ulp short of +/-1.
  if (1.0 - std::abs(r) < 1e-12) return std::copysign(1.0, r);
  return r;
}

// Doubled fractional ranks are integers, so the permutation statistic
// n * sum(2rx * 2ry) - sum(2rx) * sum(2ry), which orders permutations exactly
// as rho does, is computed without rounding.
double exact_permutation_p(const std::vector<double>& rx, const std::vector<double>& ry, Sidedness sidedness) {
  const std::size_t n = rx.size();
  std::vector<std::int64_t> ax(n), by(n);
  for (std::size_t i = 0; i < n; ++i) {
    ax[i] = std::llround(2.0 * rx[i]);
    by[i] = std::llround(2.0 * ry[i]);
  }
  const std::int64_t sa = std::accumulate(ax.begin(), ax.end(), std::int64_t{0});
  const std::int64_t sb = std::accumulate(by.begin(), by.end(), std::int64_t{0});
  const auto n64 = static_cast<std::int64_t>(n);
  auto statistic = [&](const std::vector<std::size_t>& perm) {
    std::int64_t s = 0;
    for (std::size_t i = 0; i < n; ++i) s += ax[i] * by[perm[i]];
    return n64 * s - sa * sb;
  };
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  const std::int64_t observed = statistic(perm);
  std::uint64_t extreme = 0, total = 0;
  do {
    const std::int64_t c = statistic(perm);
    bool hit = false;
    if (sidedness == Sidedness::TwoSided) {
      hit = std::llabs(c) >= std::llabs(observed);
    } else {
      hit = observed >= 0 ? c >= observed : c <= observed;
    }
    extreme += hit ? 1 : 0;
    ++total;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(extreme) / static_cast<double>(total);
}

// Fraction of the n! rank permutations that reach |rho| = 1.
double perfect_correlation_p(const std::vector<double>& rx, Sidedness sidedness) {
  std::vector<double> sorted(rx);
  std::sort(sorted.begin(), sorted.end());
  double log_count = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i + 1;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    log_count += std::lgamma(static_cast<double>(j - i) + 1.0);
    i = j;
  }
  const double log_total = std::lgamma(static_cast<double>(sorted.size()) + 1.0);
  const double tails = sidedness == Sidedness::TwoSided ? 2.0 : 1.0;
  return std::clamp(tails * std::exp(log_count - log_total), std::numeric_limits<double>::min(), 1.0);
}

double continued_fraction_beta(double a, double b, double x) {
  constexpr int kMaxIterations = 500;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw Error("incomplete beta needs positive shape parameters");
  if (!(x >= 0.0 && x <= 1.0)) throw Error("incomplete beta argument outside [0,1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  // Use the continued fraction where it converges quickly, symmetry elsewhere.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * continued_fraction_beta(a, b, x) / a;
  return 1.0 - front * continued_fraction_beta(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof) {
  if (!(dof > 0.0)) throw Error("student t needs positive degrees of freedom");
  if (std::isnan(t)) throw Error("student t: NaN argument");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
  return t > 0 ? 1.0 - tail : tail;
}

double spearman_rho(std::span<const double> x, std::span<const double> y) {
  require_sample(x, y);
  return pearson(rank_average_ties(x), rank_average_ties(y));
}

CorrelationResult spearman(const PairedSample& s, Sidedness sidedness) {
  require_sample(s.x, s.y);
  if (!s.ids.empty() && s.ids.size() != s.x.size()) throw Error("paired sample ids do not match the values");
  const auto rx = rank_average_ties(s.x);
  const auto ry = rank_average_ties(s.y);
  CorrelationResult r;
  r.n = s.x.size();
  r.sidedness = sidedness;
  r.rho = pearson(rx, ry);
  if (r.n <= kExactPermutationMaxN) {
    r.method = PValueMethod::ExactPermutation;
    r.p_value = exact_permutation_p(rx, ry, sidedness);
  } else if (std::abs(r.rho) >= 1.0) {
    r.method = PValueMethod::ExactPermutation;
    r.p_value = perfect_correlation_p(rx, sidedness);
  } else {
    r.method = PValueMethod::TApproximation;
    const double dof = static_cast<double>(r.n) - 2.0;
    const double t = r.rho * std::sqrt(dof / (1.0 - r.rho * r.rho));
    const double tail = student_t_cdf(-std::abs(t), dof);
    const double p = sidedness == Sidedness::TwoSided ? 2.0 * tail : tail;
    r.p_value = std::clamp(p, std::numeric_limits<double>::min(), 1.0);
  }
  return r;
}

std::vector<double> class_volumes_mm3(const LabelVolume& pred) {
  std::vector<std::uint64_t> counts(pred.classes().size(), 0);
  for (auto l : pred.labels()) ++counts[l];
  std::vector<double> out;
  for (std::size_t c = 1; c < counts.size(); ++c) {
    out.push_back(static_cast<double>(counts[c]) * pred.spacing().voxel_volume());
  }
  return out;
}

std::vector<CorrelationRow> correlate_volumes(const ClassTable& classes,
                                              const std::map<std::string, std::vector<double>>& volumes,
                                              const std::map<std::string, double>& fev1, Sidedness sidedness) {
  std::string missing;
  for (const auto& [id, v] : volumes) {
    if (!fev1.contains(id)) missing += (missing.empty() ? "" : ", ") + id;
    if (v.size() + 1 != classes.size()) {
      throw Error("case '" + id + "' has " + std::to_string(v.size()) + " class volumes, expected " +
                  std::to_string(classes.size() - 1));
    }
  }
  if (!missing.empty()) throw Error("cases missing from the FEV1 table: " + missing);
  if (volumes.size() < 3) {
    throw Error("correlation needs at least 3 cases, got " + std::to_string(volumes.size()));
  }

  std::vector<CorrelationRow> rows;
  for (std::size_t c = 1; c < classes.size(); ++c) {
    PairedSample sample;
    for (const auto& [id, v] : volumes) {
      sample.ids.push_back(id);
      sample.x.push_back(v[c - 1]);
      sample.y.push_back(fev1.at(id));
    }
    CorrelationRow row;
    row.class_id = static_cast<int>(c);
    row.class_name = classes.name(static_cast<int>(c));
    try {
      row.result = spearman(sample, sidedness);
    } catch (const UndefinedError&) {
      row.reason = "undefined correlation";
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace airwayseg::stats
