#include "airwayseg/volgrid.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <utility>

#include "airwayseg/error.hpp"

namespace airwayseg {

std::string to_string(const Dims& d) {
  std::ostringstream os;
  os << d.nx << "x" << d.ny << "x" << d.nz;
  return os.str();
}

VoxelSpacing::VoxelSpacing(double dx, double dy, double dz) : dx_(dx), dy_(dy), dz_(dz) {
  for (double v : {dx, dy, dz}) {
    if (!std::isfinite(v) || v <= 0.0) {
      throw Error("voxel spacing must be positive and finite, got " + to_string(*this));
    }
  }
}

namespace {

std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string to_string(const VoxelSpacing& s) {
  return "(" + shortest(s.dx()) + ", " + shortest(s.dy()) + ", " + shortest(s.dz()) + ") mm";
}

ClassTable::ClassTable(std::vector<ClassEntry> entries) : entries_(std::move(entries)) {
  if (entries_.size() < 2 || entries_.size() > 256) {
    throw Error("class table needs between 2 and 256 entries, got " + std::to_string(entries_.size()));
  }
  std::sort(entries_.begin(), entries_.end(), [](const ClassEntry& a, const ClassEntry& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].id != i) {
      throw Error("class ids must be unique and contiguous from 0; missing or duplicate id near " +
                  std::to_string(i));
    }
  }
}

ClassTable ClassTable::lesion_defaults() {
  return ClassTable({{0, "Background"},
                     {1, "Bronchiectasis"},
                     {2, "Peribronchial Thickening"},
                     {3, "Bronchial mucus"},
                     {4, "Bronchiolar mucus"},
                     {5, "Consolidation"}});
}

ClassTable ClassTable::numbered(std::size_t foreground) {
  std::vector<ClassEntry> entries{{0, "Background"}};
  for (std::size_t i = 1; i <= foreground; ++i) {
    entries.push_back({static_cast<std::uint8_t>(i), "Class " + std::to_string(i)});
  }
  return ClassTable(std::move(entries));
}

const std::string& ClassTable::name(int id) const {
  if (!contains(id)) throw Error("unknown class id " + std::to_string(id));
  return entries_[static_cast<std::size_t>(id)].name;
}

std::vector<std::uint8_t> ClassTable::foreground_ids() const {
  std::vector<std::uint8_t> ids;
  for (std::size_t i = 1; i < entries_.size(); ++i) ids.push_back(static_cast<std::uint8_t>(i));
  return ids;
}

LabelVolume::LabelVolume(Dims dims, VoxelSpacing spacing, std::vector<std::uint8_t> labels, ClassTable classes)
    : dims_(dims), spacing_(spacing), labels_(std::move(labels)), classes_(std::move(classes)) {
  if (dims_.count() == 0) throw Error("label volume dims must be at least 1 per axis, got " + to_string(dims_));
  if (labels_.size() != dims_.count()) {
    throw ShapeError("label volume " + to_string(dims_) + " needs " + std::to_string(dims_.count()) + " labels, got " +
                std::to_string(labels_.size()));
  }
  const auto max_label = *std::max_element(labels_.begin(), labels_.end());
  if (!classes_.contains(max_label)) {
    throw Error("label " + std::to_string(max_label) + " is not in the class table (" +
                std::to_string(classes_.size()) + " classes)");
  }
}

BinaryMask::BinaryMask(Dims dims, VoxelSpacing spacing, std::vector<std::uint8_t> values)
    : dims_(dims), spacing_(spacing), values_(std::move(values)) {
  if (dims_.count() == 0) throw Error("mask dims must be at least 1 per axis, got " + to_string(dims_));
  if (values_.size() != dims_.count()) {
    throw ShapeError("mask " + to_string(dims_) + " needs " + std::to_string(dims_.count()) + " values, got " +
                std::to_string(values_.size()));
  }
  for (auto& v : values_) v = v != 0 ? 1 : 0;
}

BinaryMask BinaryMask::filled(Dims dims, VoxelSpacing spacing, bool value) {
  return BinaryMask(dims, spacing, std::vector<std::uint8_t>(dims.count(), value ? 1 : 0));
}

std::size_t BinaryMask::count() const {
  std::size_t n = 0;
  for (auto v : values_) n += v;
  return n;
}

ProbVolume::ProbVolume(Dims dims, VoxelSpacing spacing, std::size_t num_classes, std::vector<double> values,
                       bool normalized)
    : dims_(dims), spacing_(spacing), num_classes_(num_classes), values_(std::move(values)), normalized_(normalized) {
  if (dims_.count() == 0) throw Error("probability volume dims must be at least 1 per axis");
  if (num_classes_ == 0) throw Error("probability volume needs at least one channel");
  if (values_.size() != dims_.count() * num_classes_) {
    throw ShapeError("probability volume " + to_string(dims_) + " x " + std::to_string(num_classes_) + " needs " +
                std::to_string(dims_.count() * num_classes_) + " values, got " + std::to_string(values_.size()));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const double v = values_[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw Error("probability at flat index " + std::to_string(i) + " is outside [0,1]");
    }
  }
  if (normalized_) {
    const std::size_t n = dims_.count();
    for (std::size_t v = 0; v < n; ++v) {
      double sum = 0.0;
      for (std::size_t c = 0; c < num_classes_; ++c) sum += values_[c * n + v];
      if (std::abs(sum - 1.0) > kNormalizationTolerance) {
        throw Error("voxel " + std::to_string(v) + " class probabilities sum to " + std::to_string(sum) +
                    ", expected 1");
      }
    }
  }
}

std::span<const double> ProbVolume::channel(std::size_t c) const {
  if (c >= num_classes_) throw Error("channel " + std::to_string(c) + " out of range");
  const std::size_t n = dims_.count();
  return std::span<const double>(values_).subspan(c * n, n);
}

void require_aligned(const Dims& a, const VoxelSpacing& sa, const Dims& b, const VoxelSpacing& sb, const char* what) {
  if (a != b || sa != sb) {
    throw ShapeError(std::string(what) + ": grids differ, " + to_string(a) + " " + to_string(sa) + " vs " +
                     to_string(b) + " " + to_string(sb));
  }
}

BinaryMask class_mask(const LabelVolume& vol, int class_id) {
  if (!vol.classes().contains(class_id)) throw Error("unknown class id " + std::to_string(class_id));
  const auto labels = vol.labels();
  std::vector<std::uint8_t> out(labels.size());
  const auto id = static_cast<std::uint8_t>(class_id);
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] == id ? 1 : 0;
  return BinaryMask(vol.dims(), vol.spacing(), std::move(out));
}

ProbVolume one_hot(const LabelVolume& vol) {
  const std::size_t n = vol.dims().count();
  const std::size_t c = vol.classes().size();
  std::vector<double> values(n * c, 0.0);
  const auto labels = vol.labels();
  for (std::size_t v = 0; v < n; ++v) values[labels[v] * n + v] = 1.0;
  return ProbVolume(vol.dims(), vol.spacing(), c, std::move(values), true);
}

LabelVolume argmax_labels(const ProbVolume& p, const ClassTable& classes) {
  if (p.num_classes() < 2) throw Error("argmax needs at least two channels");
  if (classes.size() != p.num_classes()) {
    throw Error("class table has " + std::to_string(classes.size()) + " entries but probabilities have " +
                std::to_string(p.num_classes()) + " channels");
  }
  const std::size_t n = p.voxel_count();
  const auto values = p.values();
  std::vector<std::uint8_t> labels(n, 0);
  for (std::size_t v = 0; v < n; ++v) {
    double best = values[v];
    std::uint8_t best_id = 0;
    for (std::size_t c = 1; c < p.num_classes(); ++c) {
      if (values[c * n + v] > best) {
        best = values[c * n + v];
        best_id = static_cast<std::uint8_t>(c);
      }
    }
    labels[v] = best_id;
  }
  return LabelVolume(p.dims(), p.spacing(), std::move(labels), classes);
}

LabelVolume argmax_labels(const ProbVolume& p) {
  const auto classes = p.num_classes() == 6 ? ClassTable::lesion_defaults() : ClassTable::numbered(p.num_classes() - 1);
  return argmax_labels(p, classes);
}

BinaryMask apply_region_mask(const BinaryMask& mask, const BinaryMask& region) {
  require_aligned(mask.dims(), mask.spacing(), region.dims(), region.spacing(), "region mask");
  const auto m = mask.values();
  const auto r = region.values();
  std::vector<std::uint8_t> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] & r[i];
  return BinaryMask(mask.dims(), mask.spacing(), std::move(out));
}

ProbVolume apply_region_mask(const ProbVolume& prob, const BinaryMask& region) {
  require_aligned(prob.dims(), prob.spacing(), region.dims(), region.spacing(), "region mask");
  const std::size_t n = prob.voxel_count();
  const auto r = region.values();
  std::vector<double> out(prob.values().begin(), prob.values().end());
  for (std::size_t c = 0; c < prob.num_classes(); ++c) {
    for (std::size_t v = 0; v < n; ++v) {
      if (!r[v]) out[c * n + v] = 0.0;
    }
  }
  // Zeroed voxels no longer sum to one.
  return ProbVolume(prob.dims(), prob.spacing(), prob.num_classes(), std::move(out), false);
}

ConfusionCounts confusion_counts(const BinaryMask& gt, const BinaryMask& pred, const BinaryMask* region) {
  require_aligned(gt.dims(), gt.spacing(), pred.dims(), pred.spacing(), "confusion counts");
  if (region) require_aligned(gt.dims(), gt.spacing(), region->dims(), region->spacing(), "confusion counts region");
  const auto g = gt.values();
  const auto p = pred.values();
  // Indexed by (gt << 1) | pred: tn, fp, fn, tp.
  std::uint64_t tally[4] = {0, 0, 0, 0};
  if (region) {
    const auto r = region->values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (r[i]) ++tally[(g[i] << 1) | p[i]];
    }
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) ++tally[(g[i] << 1) | p[i]];
  }
  return ConfusionCounts{tally[3], tally[1], tally[2], tally[0]};
}

}  // namespace airwayseg
