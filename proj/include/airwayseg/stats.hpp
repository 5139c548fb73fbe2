#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "airwayseg/volgrid.hpp"

namespace airwayseg::stats {

enum class Sidedness { TwoSided, OneSided };
enum class PValueMethod { TApproximation, ExactPermutation };

std::string to_string(Sidedness s);
std::string to_string(PValueMethod m);

/// Largest n for which the p-value comes from full permutation enumeration.
inline constexpr std::size_t kExactPermutationMaxN = 8;

/// Case-paired predicted volumes (x) and FEV1% values (y).
struct PairedSample {
  std::vector<std::string> ids;
  std::vector<double> x;
  std::vector<double> y;
};

struct CorrelationResult {
  double rho = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
  PValueMethod method = PValueMethod::TApproximation;
  Sidedness sidedness = Sidedness::TwoSided;
};

/// Fractional ranks 1..n; tied values share the mean of their rank span.
std::vector<double> rank_average_ties(std::span<const double> values);

/// Pearson correlation of the fractional ranks. Throws UndefinedError when
/// either variable has zero rank variance.
double spearman_rho(std::span<const double> x, std::span<const double> y);

/// Spearman test. One-sided p-values test in the direction of the observed rho.
CorrelationResult spearman(const PairedSample& s, Sidedness sidedness = Sidedness::TwoSided);

/// Regularised incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// Student-t cumulative distribution with `dof` degrees of freedom.
double student_t_cdf(double t, double dof);

/// One row of an external-validation table; rho/p undefined rows keep a reason.
struct CorrelationRow {
  int class_id = 0;
  std::string class_name;
  std::optional<CorrelationResult> result;
  std::string reason;
};

/// Predicted volume in mm^3 of every foreground class of a label volume.
std::vector<double> class_volumes_mm3(const LabelVolume& pred);

/// Spearman of per-class predicted volume against FEV1% for every foreground
/// class, ordered by class id. Every case in `volumes` must appear in `fev1`.
std::vector<CorrelationRow> correlate_volumes(const ClassTable& classes,
                                              const std::map<std::string, std::vector<double>>& volumes,
                                              const std::map<std::string, double>& fev1,
                                              Sidedness sidedness = Sidedness::TwoSided);

}  // namespace airwayseg::stats
