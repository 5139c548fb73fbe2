#include "airwayseg/posthoc.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "airwayseg/error.hpp"

namespace airwayseg::posthoc {
namespace {

void require_rank(const Dims& dims, int rank) {
  if (rank != 2 && rank != 3) throw Error("spatial rank must be 2 or 3, got " + std::to_string(rank));
  if (dims.count() == 0) throw Error("spatial dims must be at least 1 per axis");
  if (rank == 2 && dims.nz != 1) throw Error("2D grids must have nz == 1, got " + to_string(dims));
}

}  // namespace

VarianceSummary ensemble_variance(std::span<const ProbVolume> members, VarianceEstimator estimator,
                                  const BinaryMask* region) {
  if (members.size() < 2) {
    throw Error("ensemble variance needs at least 2 members, got " + std::to_string(members.size()));
  }
  const ProbVolume& first = members.front();
  for (std::size_t m = 1; m < members.size(); ++m) {
    require_aligned(first.dims(), first.spacing(), members[m].dims(), members[m].spacing(), "ensemble member");
    if (members[m].num_classes() != first.num_classes()) {
      throw ShapeError("ensemble member " + std::to_string(m) + " has " + std::to_string(members[m].num_classes()) +
                       " channels, expected " + std::to_string(first.num_classes()));
    }
  }
  if (region) require_aligned(first.dims(), first.spacing(), region->dims(), region->spacing(), "ensemble region");

  const std::size_t k = members.size();
  const std::size_t n = first.voxel_count();
  const std::size_t c_count = first.num_classes();
  const double divisor = estimator == VarianceEstimator::Population ? static_cast<double>(k) : static_cast<double>(k - 1);

  VarianceSummary out;
  out.dims = first.dims();
  out.spacing = first.spacing();
  out.num_classes = c_count;
  out.members = k;
  out.estimator = estimator;
  out.region_used = region != nullptr;
  out.variance.assign(n * c_count, 0.0);
  out.per_class_mean.assign(c_count, 0.0);

  std::vector<double> sample(k);
  std::size_t counted = 0;
  double total = 0.0;
  for (std::size_t c = 0; c < c_count; ++c) {
    double channel_sum = 0.0;
    counted = 0;
    for (std::size_t v = 0; v < n; ++v) {
      const std::size_t idx = c * n + v;
      for (std::size_t m = 0; m < k; ++m) sample[m] = members[m].values()[idx];
      // Sorted accumulation makes the result independent of member order.
      std::sort(sample.begin(), sample.end());
      double var = 0.0;
      if (sample.front() != sample.back()) {
        double mean = 0.0;
        for (double x : sample) mean += x;
        mean /= static_cast<double>(k);
        double ss = 0.0;
        for (double x : sample) ss += (x - mean) * (x - mean);
        var = ss / divisor;
      }
      out.variance[idx] = var;
      out.max_variance = std::max(out.max_variance, var);
      if (!region || (*region)[v]) {
        channel_sum += var;
        ++counted;
      }
    }
    out.per_class_mean[c] = counted == 0 ? 0.0 : channel_sum / static_cast<double>(counted);
    total += channel_sum;
  }
  const double cells = static_cast<double>(counted * c_count);
  out.global_mean = cells == 0.0 ? 0.0 : total / cells;
  out.global_std = std::sqrt(out.global_mean);
  return out;
}

FeatureTensor::FeatureTensor(std::size_t channels, Dims dims, int spatial_rank, std::vector<double> values,
                             VoxelSpacing spacing)
    : channels_(channels), dims_(dims), rank_(spatial_rank), spacing_(spacing), values_(std::move(values)) {
  require_rank(dims_, rank_);
  if (rank_ == 2) spacing_ = VoxelSpacing(spacing_.dx(), spacing_.dy(), 1.0);
  if (channels_ == 0) throw Error("feature tensor needs at least one channel");
  if (values_.size() != channels_ * dims_.count()) {
    throw ShapeError("feature tensor " + std::to_string(channels_) + " x " + to_string(dims_) + " needs " +
                std::to_string(channels_ * dims_.count()) + " values, got " + std::to_string(values_.size()));
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw Error("feature tensor contains a non-finite value");
  }
}

std::span<const double> FeatureTensor::channel(std::size_t k) const {
  if (k >= channels_) throw Error("feature channel " + std::to_string(k) + " out of range");
  return std::span<const double>(values_).subspan(k * dims_.count(), dims_.count());
}

Heatmap::Heatmap(Dims dims, int spatial_rank, std::vector<double> values, VoxelSpacing spacing)
    : dims_(dims), rank_(spatial_rank), spacing_(spacing), values_(std::move(values)) {
  require_rank(dims_, rank_);
  if (rank_ == 2) spacing_ = VoxelSpacing(spacing_.dx(), spacing_.dy(), 1.0);
  if (values_.size() != dims_.count()) {
    throw ShapeError("heatmap " + to_string(dims_) + " needs " + std::to_string(dims_.count()) + " values");
  }
  for (double v : values_) {
    if (!std::isfinite(v) || v < 0.0) throw Error("heatmap values must be finite and non-negative");
  }
}

double Heatmap::max() const { return *std::max_element(values_.begin(), values_.end()); }

std::vector<double> grad_cam_weights(const FeatureTensor& gradients) {
  std::vector<double> w(gradients.channels());
  const double n = static_cast<double>(gradients.dims().count());
  for (std::size_t k = 0; k < gradients.channels(); ++k) {
    double sum = 0.0;
    for (double g : gradients.channel(k)) sum += g;
    w[k] = sum / n;
  }
  return w;
}

std::vector<double> grad_cam_linear(const FeatureTensor& activations, const FeatureTensor& gradients) {
  if (activations.channels() != gradients.channels() || activations.dims() != gradients.dims() ||
      activations.spatial_rank() != gradients.spatial_rank()) {
    throw ShapeError("grad-cam: activations " + std::to_string(activations.channels()) + " x " +
                     to_string(activations.dims()) + " do not match gradients " +
                     std::to_string(gradients.channels()) + " x " + to_string(gradients.dims()));
  }
  const auto w = grad_cam_weights(gradients);
  std::vector<double> out(activations.dims().count(), 0.0);
  for (std::size_t k = 0; k < w.size(); ++k) {
    const auto a = activations.channel(k);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[k] * a[i];
  }
  return out;
}

Heatmap grad_cam(const FeatureTensor& activations, const FeatureTensor& gradients) {
  auto values = grad_cam_linear(activations, gradients);
  for (auto& v : values) v = std::max(v, 0.0);
  return Heatmap(activations.dims(), activations.spatial_rank(), std::move(values), activations.spacing());
}

namespace {

struct AxisSample {
  std::size_t lo;
  std::size_t hi;
  double weight;
};

std::vector<AxisSample> axis_samples(std::size_t source, std::size_t target) {
  std::vector<AxisSample> out(target);
  const double scale = static_cast<double>(source) / static_cast<double>(target);
  for (std::size_t d = 0; d < target; ++d) {
    const double pos = std::clamp((static_cast<double>(d) + 0.5) * scale - 0.5, 0.0, static_cast<double>(source - 1));
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, source - 1);
    out[d] = {lo, hi, pos - static_cast<double>(lo)};
  }
  return out;
}

// Equal endpoints give the endpoint back exactly; the clamp keeps the result
// inside [a, b] despite rounding.
double lerp(double a, double b, double w) {
  const double v = a + w * (b - a);
  return std::clamp(v, std::min(a, b), std::max(a, b));
}

}  // namespace

Heatmap resample_heatmap(const Heatmap& h, Dims target) {
  require_rank(target, h.spatial_rank());
  const Dims src = h.dims();
  const auto sx = axis_samples(src.nx, target.nx);
  const auto sy = axis_samples(src.ny, target.ny);
  const auto sz = axis_samples(src.nz, target.nz);
  const auto v = h.values();
  auto at = [&](std::size_t i, std::size_t j, std::size_t k) { return v[src.index(i, j, k)]; };

  std::vector<double> out(target.count());
  for (std::size_t k = 0; k < target.nz; ++k) {
    for (std::size_t j = 0; j < target.ny; ++j) {
      for (std::size_t i = 0; i < target.nx; ++i) {
        const auto& x = sx[i];
        const auto& y = sy[j];
        const auto& z = sz[k];
        const double c00 = lerp(at(x.lo, y.lo, z.lo), at(x.hi, y.lo, z.lo), x.weight);
        const double c10 = lerp(at(x.lo, y.hi, z.lo), at(x.hi, y.hi, z.lo), x.weight);
        const double c01 = lerp(at(x.lo, y.lo, z.hi), at(x.hi, y.lo, z.hi), x.weight);
        const double c11 = lerp(at(x.lo, y.hi, z.hi), at(x.hi, y.hi, z.hi), x.weight);
        out[target.index(i, j, k)] = lerp(lerp(c00, c10, y.weight), lerp(c01, c11, y.weight), z.weight);
      }
    }
  }
  const VoxelSpacing& s = h.spacing();
  const VoxelSpacing spacing(s.dx() * static_cast<double>(src.nx) / static_cast<double>(target.nx),
                             s.dy() * static_cast<double>(src.ny) / static_cast<double>(target.ny),
                             s.dz() * static_cast<double>(src.nz) / static_cast<double>(target.nz));
  return Heatmap(target, h.spatial_rank(), std::move(out), spacing);
}

NormalizedHeatmap normalize_heatmap(const Heatmap& h) {
  const double peak = h.max();
  if (peak == 0.0) return {h, true};
  std::vector<double> values(h.values().begin(), h.values().end());
  for (auto& v : values) v /= peak;
  return {Heatmap(h.dims(), h.spatial_rank(), std::move(values), h.spacing()), false};
}

}  // namespace airwayseg::posthoc
