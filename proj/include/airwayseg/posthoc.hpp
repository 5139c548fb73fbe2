#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "airwayseg/volgrid.hpp"

namespace airwayseg::posthoc {

enum class VarianceEstimator {
  Population,  // divide by K
  Sample,      // divide by K - 1
};

struct VarianceSummary {
  Dims dims;
  VoxelSpacing spacing;
  std::size_t num_classes = 0;
  std::size_t members = 0;
  VarianceEstimator estimator = VarianceEstimator::Population;
  bool region_used = false;
  /// Channel-major, same layout as the member probability volumes.
  std::vector<double> variance;
  /// Mean per-voxel variance of each class channel.
  std::vector<double> per_class_mean;
  /// Mean per-voxel variance over all channels.
  double global_mean = 0.0;
  /// sqrt(global_mean).
  double global_std = 0.0;
  double max_variance = 0.0;
};

/// Per-voxel variance of K >= 2 aligned member predictions. Means are taken
/// over `region` when given. The result does not depend on member order.
VarianceSummary ensemble_variance(std::span<const ProbVolume> members,
                                  VarianceEstimator estimator = VarianceEstimator::Population,
                                  const BinaryMask* region = nullptr);

/// Activations or gradients exported from a network layer: `channels` feature
/// maps on a 2D (nz == 1) or 3D grid, channel-major. Rank-2 tensors carry a
/// unit z spacing.
class FeatureTensor {
 public:
  FeatureTensor(std::size_t channels, Dims dims, int spatial_rank, std::vector<double> values,
                VoxelSpacing spacing = {});

  std::size_t channels() const { return channels_; }
  const Dims& dims() const { return dims_; }
  int spatial_rank() const { return rank_; }
  const VoxelSpacing& spacing() const { return spacing_; }
  std::span<const double> values() const { return values_; }
  std::span<const double> channel(std::size_t k) const;
  bool operator==(const FeatureTensor&) const = default;

 private:
  std::size_t channels_;
  Dims dims_;
  int rank_;
  VoxelSpacing spacing_;
  std::vector<double> values_;
};

/// Non-negative map on a 2D or 3D grid.
class Heatmap {
 public:
  Heatmap(Dims dims, int spatial_rank, std::vector<double> values, VoxelSpacing spacing = {});

  const Dims& dims() const { return dims_; }
  int spatial_rank() const { return rank_; }
  const VoxelSpacing& spacing() const { return spacing_; }
  std::span<const double> values() const { return values_; }
  double max() const;
  bool operator==(const Heatmap&) const = default;

 private:
  Dims dims_;
  int rank_;
  VoxelSpacing spacing_;
  std::vector<double> values_;
};

/// Channel weights: spatial mean of each gradient channel.
std::vector<double> grad_cam_weights(const FeatureTensor& gradients);

/// sum_k w_k * A^k before the ReLU.
std::vector<double> grad_cam_linear(const FeatureTensor& activations, const FeatureTensor& gradients);

/// ReLU(sum_k w_k * A^k), not normalised.
Heatmap grad_cam(const FeatureTensor& activations, const FeatureTensor& gradients);

/// Multi-linear resampling with half-voxel alignment and edge clamping.
/// Spacing is rescaled so the physical extent is unchanged.
Heatmap resample_heatmap(const Heatmap& h, Dims target);

struct NormalizedHeatmap {
  Heatmap map;
  bool all_zero = false;
};

/// Divides by the maximum; an identically zero map is returned unchanged and flagged.
NormalizedHeatmap normalize_heatmap(const Heatmap& h);

}  // namespace airwayseg::posthoc
