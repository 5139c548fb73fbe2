#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace airwayseg {

/// Voxel counts along each axis. Storage everywhere is x-fastest:
/// linear index = i + nx * (j + ny * k).
struct Dims {
  std::size_t nx = 1;
  std::size_t ny = 1;
  std::size_t nz = 1;

  std::size_t count() const { return nx * ny * nz; }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return i + nx * (j + ny * k); }
  bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& d);

/// Millimetres per voxel along x, y, z.
class VoxelSpacing {
 public:
  VoxelSpacing() = default;
  VoxelSpacing(double dx, double dy, double dz);

  double dx() const { return dx_; }
  double dy() const { return dy_; }
  double dz() const { return dz_; }
  double operator[](std::size_t axis) const { return axis == 0 ? dx_ : axis == 1 ? dy_ : dz_; }
  double voxel_volume() const { return dx_ * dy_ * dz_; }
  bool operator==(const VoxelSpacing&) const = default;

 private:
  double dx_ = 1.0;
  double dy_ = 1.0;
  double dz_ = 1.0;
};

std::string to_string(const VoxelSpacing& s);

struct ClassEntry {
  std::uint8_t id = 0;
  std::string name;
  bool operator==(const ClassEntry&) const = default;
};

/// Ordered class names with ids contiguous from 0; id 0 is background.
class ClassTable {
 public:
  /// Entries must have unique ids covering 0..n-1 (any order); stored sorted by id.
  explicit ClassTable(std::vector<ClassEntry> entries);

  /// Background plus the five airway lesion classes.
  static ClassTable lesion_defaults();
  /// Background plus `foreground` generically named classes.
  static ClassTable numbered(std::size_t foreground);

  std::size_t size() const { return entries_.size(); }
  bool contains(int id) const { return id >= 0 && static_cast<std::size_t>(id) < entries_.size(); }
  const std::string& name(int id) const;
  const std::vector<ClassEntry>& entries() const { return entries_; }
  std::vector<std::uint8_t> foreground_ids() const;
  bool operator==(const ClassTable&) const = default;

 private:
  std::vector<ClassEntry> entries_;
};

/// Integer class labels on a voxel grid.
class LabelVolume {
 public:
  LabelVolume(Dims dims, VoxelSpacing spacing, std::vector<std::uint8_t> labels,
              ClassTable classes = ClassTable::lesion_defaults());

  const Dims& dims() const { return dims_; }
  const VoxelSpacing& spacing() const { return spacing_; }
  const ClassTable& classes() const { return classes_; }
  std::span<const std::uint8_t> labels() const { return labels_; }
  std::uint8_t at(std::size_t i, std::size_t j, std::size_t k) const { return labels_[dims_.index(i, j, k)]; }
  bool operator==(const LabelVolume&) const = default;

 private:
  Dims dims_;
  VoxelSpacing spacing_;
  std::vector<std::uint8_t> labels_;
  ClassTable classes_;
};

/// One byte per voxel, 0 or 1.
class BinaryMask {
 public:
  BinaryMask(Dims dims, VoxelSpacing spacing, std::vector<std::uint8_t> values);
  static BinaryMask filled(Dims dims, VoxelSpacing spacing, bool value);

  const Dims& dims() const { return dims_; }
  const VoxelSpacing& spacing() const { return spacing_; }
  std::span<const std::uint8_t> values() const { return values_; }
  bool operator[](std::size_t idx) const { return values_[idx] != 0; }
  bool at(std::size_t i, std::size_t j, std::size_t k) const { return values_[dims_.index(i, j, k)] != 0; }
  std::size_t count() const;
  bool operator==(const BinaryMask&) const = default;

 private:
  Dims dims_;
  VoxelSpacing spacing_;
  std::vector<std::uint8_t> values_;
};

/// Per-class probability grids stored channel-major: channel c occupies
/// values[c * voxels, (c + 1) * voxels).
class ProbVolume {
 public:
  static constexpr double kNormalizationTolerance = 1e-6;

  ProbVolume(Dims dims, VoxelSpacing spacing, std::size_t num_classes, std::vector<double> values,
             bool normalized = false);

  const Dims& dims() const { return dims_; }
  const VoxelSpacing& spacing() const { return spacing_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t voxel_count() const { return dims_.count(); }
  bool normalized() const { return normalized_; }
  std::span<const double> values() const { return values_; }
  std::span<const double> channel(std::size_t c) const;
  bool operator==(const ProbVolume&) const = default;

 private:
  Dims dims_;
  VoxelSpacing spacing_;
  std::size_t num_classes_ = 0;
  std::vector<double> values_;
  bool normalized_ = false;
};

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Throws ShapeError naming both grids when dims or spacing differ.
void require_aligned(const Dims& a, const VoxelSpacing& sa, const Dims& b, const VoxelSpacing& sb,
                     const char* what);

BinaryMask class_mask(const LabelVolume& vol, int class_id);
ProbVolume one_hot(const LabelVolume& vol);
/// Ties resolve to the smallest class id.
LabelVolume argmax_labels(const ProbVolume& p, const ClassTable& classes);
LabelVolume argmax_labels(const ProbVolume& p);

BinaryMask apply_region_mask(const BinaryMask& mask, const BinaryMask& region);
ProbVolume apply_region_mask(const ProbVolume& prob, const BinaryMask& region);

/// Voxel tallies for one class. With a region only voxels inside it are counted.
ConfusionCounts confusion_counts(const BinaryMask& gt, const BinaryMask& pred, const BinaryMask* region = nullptr);

}  // namespace airwayseg
