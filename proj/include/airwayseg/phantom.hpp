#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "airwayseg/metrics.hpp"
#include "airwayseg/volgrid.hpp"

namespace airwayseg::io {

/// Shapes are given in voxel index coordinates; radii in voxels.
struct Primitive {
  enum class Kind { Sphere, Tube, Blob };
  Kind kind = Kind::Sphere;
  int class_id = 1;
  /// Sphere centre, tube start, or blob start.
  std::array<double, 3> start{};
  /// Tube end (unused otherwise).
  std::array<double, 3> end{};
  double radius = 1.0;
  /// Blob random-walk length.
  std::size_t steps = 0;
};

/// How the "prediction" copy departs from the ground truth, applied in order:
/// integer shift, per-class dilation (positive) or erosion (negative) with
/// 6-connectivity, then random label flips.
struct Perturbation {
  std::array<int, 3> shift{0, 0, 0};
  int morphology = 0;
  double flip_probability = 0.0;
};

struct PhantomSpec {
  std::string case_id = "phantom";
  Dims dims{16, 16, 16};
  VoxelSpacing spacing;
  ClassTable classes = ClassTable::lesion_defaults();
  std::vector<Primitive> primitives;
  Perturbation perturbation;
  std::uint64_t seed = 0;
  double tolerance_mm = metrics::kDefaultToleranceMm;
  /// Brute-force expected card; disable for very large grids.
  bool compute_expected = true;
};

struct Phantom {
  LabelVolume gt;
  LabelVolume pred;
  ProbVolume prob;
  /// Expected metrics per foreground class from brute-force oracles.
  std::vector<metrics::MetricRow> expected;
};

/// Deterministic for a given spec (xorshift64* seeded from spec.seed). Throws
/// when a primitive does not fit inside the grid.
Phantom synthesize_phantom(const PhantomSpec& spec);

PhantomSpec parse_phantom_spec(const std::string& json_text);
std::string phantom_spec_to_json(const PhantomSpec& spec);

}  // namespace airwayseg::io
