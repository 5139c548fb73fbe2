#include "airwayseg/reference.hpp"

#include <array>
#include <map>

#include "airwayseg/error.hpp"

namespace airwayseg::reference {

std::vector<metrics::SurfacePoint> boundary_faces(const BinaryMask& mask) {
  static constexpr std::array<std::array<int, 3>, 6> kOffsets = {
      {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}}};
  const Dims d = mask.dims();
  auto foreground = [&](long i, long j, long k) {
    if (i < 0 || j < 0 || k < 0) return false;
    if (i >= static_cast<long>(d.nx) || j >= static_cast<long>(d.ny) || k >= static_cast<long>(d.nz)) return false;
    return mask.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j), static_cast<std::size_t>(k));
  };
  std::vector<metrics::SurfacePoint> out;
  for (long k = 0; k < static_cast<long>(d.nz); ++k) {
    for (long j = 0; j < static_cast<long>(d.ny); ++j) {
      for (long i = 0; i < static_cast<long>(d.nx); ++i) {
        if (!foreground(i, j, k)) continue;
        for (const auto& o : kOffsets) {
          if (foreground(i + o[0], j + o[1], k + o[2])) continue;
          out.push_back({static_cast<std::int32_t>(2 * i + 1 + o[0]), static_cast<std::int32_t>(2 * j + 1 + o[1]),
                         static_cast<std::int32_t>(2 * k + 1 + o[2])});
        }
      }
    }
  }
  return out;
}

metrics::MetricValue nsd_all_pairs(const BinaryMask& gt, const BinaryMask& pred, double tolerance_mm) {
  require_aligned(gt.dims(), gt.spacing(), pred.dims(), pred.spacing(), "reference nsd");
  const auto a = boundary_faces(gt);
  const auto b = boundary_faces(pred);
  if (a.empty() && b.empty()) return metrics::MetricValue::undefined("both empty");
  if (a.empty() || b.empty()) return metrics::MetricValue::of(0.0);
  auto covered = [&](const std::vector<metrics::SurfacePoint>& from, const std::vector<metrics::SurfacePoint>& to) {
    std::size_t n = 0;
    for (const auto& p : from) {
      for (const auto& q : to) {
        if (metrics::within_tolerance(metrics::squared_distance_mm(p, q, gt.spacing()), tolerance_mm)) {
          ++n;
          break;
        }
      }
    }
    return n;
  };
  const std::size_t hits = covered(a, b) + covered(b, a);
  return metrics::MetricValue::of(static_cast<double>(hits) / static_cast<double>(a.size() + b.size()));
}

metrics::MetricValue auc_all_pairs(const BinaryMask& gt, std::span<const double> scores) {
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i) (gt[i] ? pos : neg).push_back(scores[i]);
  if (pos.empty()) return metrics::MetricValue::undefined("no positives");
  if (neg.empty()) return metrics::MetricValue::undefined("no negatives");
  std::uint64_t twice = 0;
  for (double p : pos) {
    for (double q : neg) twice += p > q ? 2 : (p == q ? 1 : 0);
  }
  return metrics::MetricValue::of(static_cast<double>(twice) /
                                  (2.0 * static_cast<double>(pos.size()) * static_cast<double>(neg.size())));
}

metrics::MetricValue auc_by_score_groups(const BinaryMask& gt, std::span<const double> scores) {
  std::map<double, std::array<std::uint64_t, 2>> groups;  // score -> {negatives, positives}
  std::uint64_t npos = 0, nneg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    ++groups[scores[i]][gt[i] ? 1 : 0];
    (gt[i] ? npos : nneg) += 1;
  }
  if (npos == 0) return metrics::MetricValue::undefined("no positives");
  if (nneg == 0) return metrics::MetricValue::undefined("no negatives");
  unsigned __int128 twice = 0;
  for (const auto& [sp, cp] : groups) {
    for (const auto& [sn, cn] : groups) {
      const std::uint64_t w = sp > sn ? 2 : (sp == sn ? 1 : 0);
      twice += static_cast<unsigned __int128>(cp[1]) * cn[0] * w;
    }
  }
  return metrics::MetricValue::of(static_cast<double>(twice) / (2.0 * static_cast<double>(npos) * static_cast<double>(nneg)));
}

ConfusionCounts count_class(const LabelVolume& gt, const LabelVolume& pred, int class_id) {
  require_aligned(gt.dims(), gt.spacing(), pred.dims(), pred.spacing(), "reference counts");
  ConfusionCounts c;
  const auto g = gt.labels();
  const auto p = pred.labels();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const bool in_gt = g[i] == class_id;
    const bool in_pred = p[i] == class_id;
    if (in_gt && in_pred) ++c.tp;
    else if (in_pred) ++c.fp;
    else if (in_gt) ++c.fn;
    else ++c.tn;
  }
  return c;
}

}  // namespace airwayseg::reference
