#include "airwayseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "airwayseg/error.hpp"
#include "airwayseg/parallel.hpp"

namespace airwayseg::metrics {

std::array<double, 3> SurfacePointSet::point_mm(std::size_t i) const {
  const auto& p = points_.at(i);
  return {(p.hx - 1) * (spacing_.dx() * 0.5), (p.hy - 1) * (spacing_.dy() * 0.5), (p.hz - 1) * (spacing_.dz() * 0.5)};
}

double squared_distance_mm(const SurfacePoint& a, const SurfacePoint& b, const VoxelSpacing& spacing) {
  const double dx = static_cast<double>(a.hx - b.hx) * (spacing.dx() * 0.5);
  const double dy = static_cast<double>(a.hy - b.hy) * (spacing.dy() * 0.5);
  const double dz = static_cast<double>(a.hz - b.hz) * (spacing.dz() * 0.5);
  return dx * dx + dy * dy + dz * dz;
}

SurfacePointSet extract_boundary(const BinaryMask& mask, unsigned threads) {
  const Dims d = mask.dims();
  const auto m = mask.values();
  const std::size_t nx = d.nx, ny = d.ny, nz = d.nz;
  const std::size_t slice = nx * ny;

  // Each chunk covers a contiguous range of z-slices; concatenating chunks in
  // order keeps the voxel-index ordering.
  const unsigned chunks = std::max(1u, std::min<unsigned>(resolve_threads(threads), static_cast<unsigned>(nz)));
  std::vector<std::vector<SurfacePoint>> parts(chunks);
  parallel_chunks(nz, chunks, [&](std::size_t z0, std::size_t z1, unsigned chunk) {
    auto& out = parts[chunk];
    for (std::size_t k = z0; k < z1; ++k) {
      for (std::size_t j = 0; j < ny; ++j) {
        const std::size_t row = nx * (j + ny * k);
        for (std::size_t i = 0; i < nx; ++i) {
          const std::size_t idx = row + i;
          if (!m[idx]) continue;
          const auto cx = static_cast<std::int32_t>(2 * i + 1);
          const auto cy = static_cast<std::int32_t>(2 * j + 1);
          const auto cz = static_cast<std::int32_t>(2 * k + 1);
          if (i == 0 || !m[idx - 1]) out.push_back({cx - 1, cy, cz});
          if (i + 1 == nx || !m[idx + 1]) out.push_back({cx + 1, cy, cz});
          if (j == 0 || !m[idx - nx]) out.push_back({cx, cy - 1, cz});
          if (j + 1 == ny || !m[idx + nx]) out.push_back({cx, cy + 1, cz});
          if (k == 0 || !m[idx - slice]) out.push_back({cx, cy, cz - 1});
          if (k + 1 == nz || !m[idx + slice]) out.push_back({cx, cy, cz + 1});
        }
      }
    }
  });
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  std::vector<SurfacePoint> points;
  points.reserve(total);
  for (auto& p : parts) points.insert(points.end(), p.begin(), p.end());
  return SurfacePointSet(d, mask.spacing(), std::move(points));
}

MetricValue dice_score(const BinaryMask& gt, const BinaryMask& pred) {
  require_aligned(gt.dims(), gt.spacing(), pred.dims(), pred.spacing(), "dice");
  const auto g = gt.values();
  const auto p = pred.values();
  std::uint64_t inter = 0, ng = 0, np = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    inter += g[i] & p[i];
    ng += g[i];
    np += p[i];
  }
  if (ng + np == 0) return MetricValue::undefined("both empty");
  return MetricValue::of(2.0 * static_cast<double>(inter) / static_cast<double>(ng + np));
}

namespace {

// Uniform bucket grid over the half-voxel lattice. Cells are at least as wide
// as the search reach, so a query only visits the cells its reach box touches.
class LatticeIndex {
 public:
  LatticeIndex(std::span<const SurfacePoint> points, const VoxelSpacing& spacing, double tolerance_mm)
      : points_(points), spacing_(spacing), tolerance_(tolerance_mm) {
    lo_ = {points[0].hx, points[0].hy, points[0].hz};
    std::array<std::int64_t, 3> hi = lo_;
    for (const auto& p : points) {
      const std::array<std::int64_t, 3> c{p.hx, p.hy, p.hz};
      for (int a = 0; a < 3; ++a) {
        lo_[a] = std::min(lo_[a], c[a]);
        hi[a] = std::max(hi[a], c[a]);
      }
    }
    for (int a = 0; a < 3; ++a) {
      const double half = spacing[static_cast<std::size_t>(a)] * 0.5;
      const double ratio = std::min(tolerance_mm / half, 1e12);
      // +1 absorbs any rounding in the ratio; the exact test happens per pair.
      reach_[a] = static_cast<std::int64_t>(std::floor(ratio)) + 1;
      extent_[a] = hi[a] - lo_[a] + 1;
      cell_[a] = std::clamp<std::int64_t>(reach_[a], 1, extent_[a]);
    }
    // Keep the dense cell grid proportional to the point count.
    const double limit = 4.0 * static_cast<double>(points.size()) + 4096.0;
    while (cell_count() > limit) {
      for (int a = 0; a < 3; ++a) cell_[a] = std::min(extent_[a], cell_[a] * 2);
    }
    for (int a = 0; a < 3; ++a) cells_[a] = (extent_[a] + cell_[a] - 1) / cell_[a];

    const auto ncells = static_cast<std::size_t>(cells_[0] * cells_[1] * cells_[2]);
    offsets_.assign(ncells + 1, 0);
    for (const auto& p : points) ++offsets_[cell_of(p) + 1];
    for (std::size_t c = 0; c < ncells; ++c) offsets_[c + 1] += offsets_[c];
    order_.resize(points.size());
    std::vector<std::uint64_t> fill(offsets_.begin(), offsets_.end() - 1);
    for (std::size_t i = 0; i < points.size(); ++i) order_[fill[cell_of(points[i])]++] = static_cast<std::uint32_t>(i);
  }

  bool any_within(const SurfacePoint& q) const {
    const std::array<std::int64_t, 3> c{q.hx, q.hy, q.hz};
    std::array<std::int64_t, 3> first{}, last{};
    for (int a = 0; a < 3; ++a) {
      const std::int64_t from = c[a] - reach_[a] - lo_[a];
      const std::int64_t to = c[a] + reach_[a] - lo_[a];
      if (to < 0 || from >= extent_[a]) return false;
      first[a] = std::max<std::int64_t>(0, from) / cell_[a];
      last[a] = std::min<std::int64_t>(extent_[a] - 1, to) / cell_[a];
    }
    for (std::int64_t z = first[2]; z <= last[2]; ++z) {
      for (std::int64_t y = first[1]; y <= last[1]; ++y) {
        for (std::int64_t x = first[0]; x <= last[0]; ++x) {
          const auto cell = static_cast<std::size_t>(x + cells_[0] * (y + cells_[1] * z));
          for (auto k = offsets_[cell]; k < offsets_[cell + 1]; ++k) {
            if (within_tolerance(squared_distance_mm(q, points_[order_[k]], spacing_), tolerance_)) return true;
          }
        }
      }
    }
    return false;
  }

 private:
  double cell_count() const {
    double n = 1.0;
    for (int a = 0; a < 3; ++a) n *= static_cast<double>((extent_[a] + cell_[a] - 1) / cell_[a]);
    return n;
  }

  std::size_t cell_of(const SurfacePoint& p) const {
    const std::int64_t x = (p.hx - lo_[0]) / cell_[0];
    const std::int64_t y = (p.hy - lo_[1]) / cell_[1];
    const std::int64_t z = (p.hz - lo_[2]) / cell_[2];
    return static_cast<std::size_t>(x + cells_[0] * (y + cells_[1] * z));
  }

  std::span<const SurfacePoint> points_;
  VoxelSpacing spacing_;
  double tolerance_;
  std::array<std::int64_t, 3> lo_{}, extent_{}, reach_{}, cell_{}, cells_{};
  std::vector<std::uint64_t> offsets_;
  std::vector<std::uint32_t> order_;
};

void require_tolerance(double tolerance_mm) {
  if (!(tolerance_mm >= 0.0)) throw Error("NSD tolerance must be a non-negative number of mm");
}

}  // namespace

std::size_t count_within_tolerance(const SurfacePointSet& from, const SurfacePointSet& to, double tolerance_mm,
                                   unsigned threads) {
  require_tolerance(tolerance_mm);
  if (from.empty() || to.empty()) return 0;
  const LatticeIndex index(to.points(), to.spacing(), tolerance_mm);
  const auto queries = from.points();
  const unsigned chunks = resolve_threads(threads);
  std::vector<std::size_t> partial(chunks, 0);
  parallel_chunks(queries.size(), chunks, [&](std::size_t b, std::size_t e, unsigned t) {
    std::size_t n = 0;
    for (std::size_t i = b; i < e; ++i) n += index.any_within(queries[i]) ? 1 : 0;
    partial[t] = n;
  });
  std::size_t total = 0;
  for (auto n : partial) total += n;
  return total;
}

MetricValue nsd(const SurfacePointSet& gt, const SurfacePointSet& pred, double tolerance_mm, unsigned threads) {
  require_aligned(gt.dims(), gt.spacing(), pred.dims(), pred.spacing(), "nsd");
  require_tolerance(tolerance_mm);
  if (gt.empty() && pred.empty()) return MetricValue::undefined("both empty");
  if (gt.empty() || pred.empty()) return MetricValue::of(0.0);
  const std::size_t hits = count_within_tolerance(gt, pred, tolerance_mm, threads) +
                           count_within_tolerance(pred, gt, tolerance_mm, threads);
  return MetricValue::of(static_cast<double>(hits) / static_cast<double>(gt.size() + pred.size()));
}

MetricValue nsd(const BinaryMask& gt, const BinaryMask& pred, double tolerance_mm, unsigned threads) {
  require_aligned(gt.dims(), gt.spacing(), pred.dims(), pred.spacing(), "nsd");
  return nsd(extract_boundary(gt, threads), extract_boundary(pred, threads), tolerance_mm, threads);
}

MetricValue sensitivity(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0) return MetricValue::undefined("no positives");
  return MetricValue::of(static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn));
}

MetricValue specificity(const ConfusionCounts& c) {
  if (c.tn + c.fp == 0) return MetricValue::undefined("no negatives");
  return MetricValue::of(static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp));
}

MetricValue auc(const BinaryMask& gt, std::span<const double> scores, const BinaryMask* region, AucSampling sampling) {
  const auto g = gt.values();
  if (scores.size() != g.size()) {
    throw ShapeError("auc: " + std::to_string(scores.size()) + " scores for a " + to_string(gt.dims()) + " mask");
  }
  if (region) require_aligned(gt.dims(), gt.spacing(), region->dims(), region->spacing(), "auc region");

  std::uint64_t positives = 0, negatives = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (region && !(*region)[i]) continue;
    if (!std::isfinite(scores[i])) throw Error("auc: non-finite score at voxel " + std::to_string(i));
    (g[i] ? positives : negatives) += 1;
  }
  if (positives == 0) return MetricValue::undefined("no positives");
  if (negatives == 0) return MetricValue::undefined("no negatives");

  auto stride_for = [&](std::uint64_t n) -> std::uint64_t {
    if (sampling.max_per_class == 0 || n <= sampling.max_per_class) return 1;
    return (n + sampling.max_per_class - 1) / sampling.max_per_class;
  };
  const std::uint64_t pos_stride = stride_for(positives);
  const std::uint64_t neg_stride = stride_for(negatives);

  std::vector<std::pair<double, std::uint8_t>> samples;
  samples.reserve(positives / pos_stride + negatives / neg_stride + 2);
  std::uint64_t pos_seen = 0, neg_seen = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (region && !(*region)[i]) continue;
    if (g[i]) {
      if (pos_seen++ % pos_stride == 0) samples.emplace_back(scores[i], 1);
    } else {
      if (neg_seen++ % neg_stride == 0) samples.emplace_back(scores[i], 0);
    }
  }
  std::sort(samples.begin(), samples.end());

  // Twice the Mann-Whitney count: 2 per strictly ordered pair, 1 per tie.
  unsigned __int128 twice_pairs = 0;
  std::uint64_t neg_below = 0, pos_total = 0, neg_total = 0;
  for (std::size_t i = 0; i < samples.size();) {
    std::size_t j = i;
    std::uint64_t pos = 0, neg = 0;
    while (j < samples.size() && samples[j].first == samples[i].first) {
      (samples[j].second ? pos : neg) += 1;
      ++j;
    }
    twice_pairs += static_cast<unsigned __int128>(pos) * (2 * neg_below + neg);
    neg_below += neg;
    pos_total += pos;
    neg_total += neg;
    i = j;
  }
  return MetricValue::of(static_cast<double>(twice_pairs) /
                         (2.0 * static_cast<double>(pos_total) * static_cast<double>(neg_total)));
}

std::string_view metric_label(MetricKind kind) {
  switch (kind) {
    case MetricKind::Dice: return "Dice";
    case MetricKind::Nsd: return "NSD";
    case MetricKind::Sensitivity: return "Sensibility";
    case MetricKind::Specificity: return "Specificity";
    case MetricKind::Auc: return "AUC";
  }
  return "?";
}

const MetricValue& MetricRow::get(MetricKind kind) const {
  switch (kind) {
    case MetricKind::Dice: return dice;
    case MetricKind::Nsd: return nsd;
    case MetricKind::Sensitivity: return sensitivity;
    case MetricKind::Specificity: return specificity;
    case MetricKind::Auc: return auc;
  }
  return dice;
}

CaseReport evaluate_case(const std::string& case_id, const LabelVolume& gt, const LabelVolume& pred,
                         const ProbVolume* prob, const BinaryMask* region, const EvaluationOptions& options) {
  require_aligned(gt.dims(), gt.spacing(), pred.dims(), pred.spacing(), "evaluate_case prediction");
  if (gt.classes().size() != pred.classes().size()) {
    throw ShapeError("evaluate_case: ground truth has " + std::to_string(gt.classes().size()) +
                     " classes, prediction has " + std::to_string(pred.classes().size()));
  }
  if (prob) {
    require_aligned(gt.dims(), gt.spacing(), prob->dims(), prob->spacing(), "evaluate_case probabilities");
    if (prob->num_classes() != gt.classes().size()) {
      throw ShapeError("evaluate_case: probabilities have " + std::to_string(prob->num_classes()) +
                       " channels for " + std::to_string(gt.classes().size()) + " classes");
    }
  }
  if (region) require_aligned(gt.dims(), gt.spacing(), region->dims(), region->spacing(), "evaluate_case region");
  require_tolerance(options.tolerance_mm);

  CaseReport report;
  report.case_id = case_id;
  report.classes = gt.classes();
  report.region_used = region != nullptr;
  report.tolerance_mm = options.tolerance_mm;
  report.auc_computed = options.compute_auc && prob != nullptr;
  report.auc_max_per_class = options.auc_sampling.max_per_class;

  const auto ids = gt.classes().foreground_ids();
  report.rows.resize(ids.size());
  const unsigned threads = resolve_threads(options.threads);
  const unsigned class_workers = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(ids.size(), 1)));
  const unsigned inner = std::max(1u, threads / class_workers);

  parallel_for(ids.size(), class_workers, [&](std::size_t r) {
    const int id = ids[r];
    BinaryMask g = class_mask(gt, id);
    BinaryMask p = class_mask(pred, id);
    if (region) {
      g = apply_region_mask(g, *region);
      p = apply_region_mask(p, *region);
    }
    MetricRow row;
    row.class_id = id;
    row.class_name = gt.classes().name(id);
    const ConfusionCounts counts = confusion_counts(g, p, region);
    row.gt_voxels = counts.tp + counts.fn;
    row.pred_voxels = counts.tp + counts.fp;
    row.dice = dice_score(g, p);
    row.nsd = nsd(g, p, options.tolerance_mm, inner);
    row.sensitivity = sensitivity(counts);
    row.specificity = specificity(counts);
    if (!prob) {
      row.auc = MetricValue::undefined("no probabilities");
    } else if (!options.compute_auc) {
      row.auc = MetricValue::undefined("auc disabled");
    } else {
      row.auc = auc(g, prob->channel(static_cast<std::size_t>(id)), region, options.auc_sampling);
    }
    report.rows[r] = std::move(row);
  });
  return report;
}

const AggregateCell& AggregateReport::cell(MetricKind kind, std::size_t class_index) const {
  return cells[static_cast<std::size_t>(kind)].at(class_index);
}

std::optional<double> AggregateReport::avg(MetricKind kind) const { return average[static_cast<std::size_t>(kind)]; }

AggregateReport aggregate(const std::vector<CaseReport>& reports) {
  if (reports.empty()) throw Error("aggregate: no case reports");
  const ClassTable& classes = reports.front().classes;
  for (const auto& r : reports) {
    if (!(r.classes == classes)) throw Error("aggregate: case '" + r.case_id + "' uses a different class table");
    if (r.rows.size() + 1 != classes.size()) throw Error("aggregate: case '" + r.case_id + "' has a malformed row set");
  }
  AggregateReport out;
  out.classes = classes;
  out.case_count = reports.size();
  out.region_used = reports.front().region_used;
  out.tolerance_mm = reports.front().tolerance_mm;
  const std::size_t nclass = classes.size() - 1;
  for (auto kind : kAllMetrics) {
    const auto m = static_cast<std::size_t>(kind);
    out.cells[m].resize(nclass);
    double class_sum = 0.0;
    std::size_t class_defined = 0;
    for (std::size_t c = 0; c < nclass; ++c) {
      AggregateCell& cell = out.cells[m][c];
      double sum = 0.0;
      for (const auto& r : reports) {
        const MetricValue& v = r.rows[c].get(kind);
        if (v.defined()) {
          sum += *v.value;
          ++cell.defined_cases;
        } else {
          ++cell.excluded_cases;
        }
      }
      if (cell.defined_cases > 0) {
        cell.mean = sum / static_cast<double>(cell.defined_cases);
        class_sum += *cell.mean;
        ++class_defined;
      }
    }
    if (class_defined > 0) out.average[m] = class_sum / static_cast<double>(class_defined);
  }
  return out;
}

}  // namespace airwayseg::metrics
