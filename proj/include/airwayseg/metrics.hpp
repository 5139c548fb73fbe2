#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "airwayseg/volgrid.hpp"

namespace airwayseg::metrics {

/// 3 voxels at 0.6 mm in-plane spacing.
inline constexpr double kDefaultToleranceMm = 1.8;

/// A metric that is either a number in [0,1] or undefined with a reason.
struct MetricValue {
  std::optional<double> value;
  std::string reason;

  static MetricValue of(double v) { return MetricValue{v, {}}; }
  static MetricValue undefined(std::string why) { return MetricValue{std::nullopt, std::move(why)}; }
  bool defined() const { return value.has_value(); }
  bool operator==(const MetricValue&) const = default;
};

/// Boundary face centre on the half-voxel lattice: physical position along
/// axis a is half[a] * spacing[a] / 2 millimetres.
struct SurfacePoint {
  std::int32_t hx = 0;
  std::int32_t hy = 0;
  std::int32_t hz = 0;
  bool operator==(const SurfacePoint&) const = default;
};

/// Face centres of every foreground voxel face that borders background or
/// the volume edge (6-connectivity), ordered by voxel index then face
/// (-x, +x, -y, +y, -z, +z).
class SurfacePointSet {
 public:
  SurfacePointSet(Dims dims, VoxelSpacing spacing, std::vector<SurfacePoint> points)
      : dims_(dims), spacing_(spacing), points_(std::move(points)) {}

  const Dims& dims() const { return dims_; }
  const VoxelSpacing& spacing() const { return spacing_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  std::span<const SurfacePoint> points() const { return points_; }
  std::array<double, 3> point_mm(std::size_t i) const;

 private:
  Dims dims_;
  VoxelSpacing spacing_;
  std::vector<SurfacePoint> points_;
};

/// Squared Euclidean distance in mm between two lattice points.
double squared_distance_mm(const SurfacePoint& a, const SurfacePoint& b, const VoxelSpacing& spacing);

/// Inclusive tolerance test on a squared distance; the one predicate every
/// surface-distance computation uses.
inline bool within_tolerance(double squared_distance, double tolerance_mm) {
  return squared_distance <= tolerance_mm * tolerance_mm;
}

SurfacePointSet extract_boundary(const BinaryMask& mask, unsigned threads = 1);

MetricValue dice_score(const BinaryMask& gt, const BinaryMask& pred);

/// Symmetric normalised surface distance at an inclusive tolerance.
MetricValue nsd(const BinaryMask& gt, const BinaryMask& pred, double tolerance_mm, unsigned threads = 1);
MetricValue nsd(const SurfacePointSet& gt, const SurfacePointSet& pred, double tolerance_mm, unsigned threads = 1);

/// Number of points of `from` within tolerance of some point of `to`.
std::size_t count_within_tolerance(const SurfacePointSet& from, const SurfacePointSet& to, double tolerance_mm,
                                   unsigned threads = 1);

MetricValue sensitivity(const ConfusionCounts& c);
MetricValue specificity(const ConfusionCounts& c);

/// Deterministic stratified thinning for very large volumes: when a class has
/// more than `max_per_class` positives (or negatives), every ceil(P / max)-th
/// one in voxel order is kept. 0 disables thinning.
struct AucSampling {
  std::size_t max_per_class = 0;
};

/// Voxel-level one-vs-rest AUC (Mann-Whitney with ties counted half).
MetricValue auc(const BinaryMask& gt, std::span<const double> scores, const BinaryMask* region = nullptr,
                AucSampling sampling = {});

enum class MetricKind { Dice, Nsd, Sensitivity, Specificity, Auc };
inline constexpr std::array<MetricKind, 5> kAllMetrics = {MetricKind::Dice, MetricKind::Nsd, MetricKind::Sensitivity,
                                                          MetricKind::Specificity, MetricKind::Auc};
/// Row labels used in reports ("Sensibility" follows the published table).
std::string_view metric_label(MetricKind kind);

struct MetricRow {
  int class_id = 0;
  std::string class_name;
  MetricValue dice;
  MetricValue nsd;
  MetricValue sensitivity;
  MetricValue specificity;
  MetricValue auc;
  std::uint64_t gt_voxels = 0;
  std::uint64_t pred_voxels = 0;

  const MetricValue& get(MetricKind kind) const;
};

struct CaseReport {
  std::string case_id;
  ClassTable classes = ClassTable::lesion_defaults();
  std::vector<MetricRow> rows;
  bool region_used = false;
  double tolerance_mm = kDefaultToleranceMm;
  bool auc_computed = true;
  std::size_t auc_max_per_class = 0;
};

struct EvaluationOptions {
  double tolerance_mm = kDefaultToleranceMm;
  bool compute_auc = true;
  AucSampling auc_sampling;
  unsigned threads = 1;
};

/// One row per foreground class. AUC needs `prob`; without it the AUC cells
/// are undefined("no probabilities").
CaseReport evaluate_case(const std::string& case_id, const LabelVolume& gt, const LabelVolume& pred,
                         const ProbVolume* prob = nullptr, const BinaryMask* region = nullptr,
                         const EvaluationOptions& options = {});

struct AggregateCell {
  std::optional<double> mean;
  std::size_t defined_cases = 0;
  std::size_t excluded_cases = 0;
};

struct AggregateReport {
  ClassTable classes = ClassTable::lesion_defaults();
  std::size_t case_count = 0;
  bool region_used = false;
  double tolerance_mm = kDefaultToleranceMm;
  /// cells[metric][foreground class index]
  std::array<std::vector<AggregateCell>, 5> cells;
  /// Mean of the per-class means that are defined.
  std::array<std::optional<double>, 5> average;

  const AggregateCell& cell(MetricKind kind, std::size_t class_index) const;
  std::optional<double> avg(MetricKind kind) const;
};

AggregateReport aggregate(const std::vector<CaseReport>& reports);

}  // namespace airwayseg::metrics
