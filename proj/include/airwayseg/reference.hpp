#pragma once

#include <span>
#include <vector>

#include "airwayseg/metrics.hpp"
#include "airwayseg/volgrid.hpp"

// Brute-force reference computations. They share definitions (boundary faces,
// distance, tolerance predicate) with the metrics module but none of its search
// or counting code; the phantom generator and the test suites use them as
// oracles.
namespace airwayseg::reference {

/// Every foreground face that touches background or the grid edge.
std::vector<metrics::SurfacePoint> boundary_faces(const BinaryMask& mask);

/// All-pairs symmetric NSD.
metrics::MetricValue nsd_all_pairs(const BinaryMask& gt, const BinaryMask& pred, double tolerance_mm);

/// Enumerates every (positive, negative) voxel pair.
metrics::MetricValue auc_all_pairs(const BinaryMask& gt, std::span<const double> scores);

/// Groups voxels by exact score and enumerates pairs of groups.
metrics::MetricValue auc_by_score_groups(const BinaryMask& gt, std::span<const double> scores);

/// Direct tally of one class in two label grids.
ConfusionCounts count_class(const LabelVolume& gt, const LabelVolume& pred, int class_id);

}  // namespace airwayseg::reference
