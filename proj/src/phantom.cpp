#include "airwayseg/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "airwayseg/error.hpp"
#include "airwayseg/reference.hpp"
#include "airwayseg/rng.hpp"
#include "json.hpp"

namespace airwayseg::io {
namespace {

using Labels = std::vector<std::uint8_t>;

std::array<std::size_t, 3> extent(const Dims& d) { return {d.nx, d.ny, d.nz}; }

void require_inside(const Dims& d, const std::array<double, 3>& p, double r, std::size_t index) {
  const auto n = extent(d);
  for (int a = 0; a < 3; ++a) {
    const double lo = p[static_cast<std::size_t>(a)] - r;
    const double hi = p[static_cast<std::size_t>(a)] + r;
    if (!(lo >= 0.0 && hi <= static_cast<double>(n[static_cast<std::size_t>(a)] - 1))) {
      throw Error("phantom primitive " + std::to_string(index) + " does not fit inside the " + to_string(d) + " grid");
    }
  }
}

// Calls fn(i, j, k) for voxels of the bounding box of a ball around p.
template <class F>
void for_box(const Dims& d, const std::array<double, 3>& lo, const std::array<double, 3>& hi, F&& fn) {
  const auto n = extent(d);
  std::array<std::size_t, 3> a{}, b{};
  for (std::size_t ax = 0; ax < 3; ++ax) {
    a[ax] = static_cast<std::size_t>(std::max(0.0, std::floor(lo[ax])));
    b[ax] = static_cast<std::size_t>(std::min(static_cast<double>(n[ax] - 1), std::ceil(hi[ax])));
  }
  for (std::size_t k = a[2]; k <= b[2]; ++k)
    for (std::size_t j = a[1]; j <= b[1]; ++j)
      for (std::size_t i = a[0]; i <= b[0]; ++i) fn(i, j, k);
}

void stamp_sphere(Labels& out, const Dims& d, const std::array<double, 3>& c, double r, std::uint8_t id) {
  for_box(d, {c[0] - r, c[1] - r, c[2] - r}, {c[0] + r, c[1] + r, c[2] + r},
          [&](std::size_t i, std::size_t j, std::size_t k) {
            const double dx = static_cast<double>(i) - c[0];
            const double dy = static_cast<double>(j) - c[1];
            const double dz = static_cast<double>(k) - c[2];
            if (dx * dx + dy * dy + dz * dz <= r * r) out[d.index(i, j, k)] = id;
          });
}

void stamp_tube(Labels& out, const Dims& d, const Primitive& p, std::uint8_t id) {
  const auto& a = p.start;
  const auto& b = p.end;
  const double r = p.radius;
  std::array<double, 3> lo{}, hi{};
  for (std::size_t ax = 0; ax < 3; ++ax) {
    lo[ax] = std::min(a[ax], b[ax]) - r;
    hi[ax] = std::max(a[ax], b[ax]) + r;
  }
  const std::array<double, 3> ab{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const double len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
  for_box(d, lo, hi, [&](std::size_t i, std::size_t j, std::size_t k) {
    const std::array<double, 3> ap{static_cast<double>(i) - a[0], static_cast<double>(j) - a[1],
                                   static_cast<double>(k) - a[2]};
    double t = len2 > 0 ? (ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    double dist2 = 0.0;
    for (std::size_t ax = 0; ax < 3; ++ax) {
      const double e = ap[ax] - t * ab[ax];
      dist2 += e * e;
    }
    if (dist2 <= r * r) out[d.index(i, j, k)] = id;
  });
}

void stamp_blob(Labels& out, const Dims& d, const Primitive& p, std::uint8_t id, XorShift64Star& rng) {
  const auto n = extent(d);
  std::array<double, 3> c = p.start;
  stamp_sphere(out, d, c, p.radius, id);
  for (std::size_t s = 0; s < p.steps; ++s) {
    const auto axis = static_cast<std::size_t>(rng.below(3));
    const double step = rng.below(2) == 0 ? -1.0 : 1.0;
    c[axis] = std::clamp(c[axis] + step, p.radius, static_cast<double>(n[axis] - 1) - p.radius);
    stamp_sphere(out, d, c, p.radius, id);
  }
}

Labels shifted(const Labels& in, const Dims& d, const std::array<int, 3>& shift) {
  Labels out(in.size(), 0);
  for (std::size_t k = 0; k < d.nz; ++k)
    for (std::size_t j = 0; j < d.ny; ++j)
      for (std::size_t i = 0; i < d.nx; ++i) {
        const long si = static_cast<long>(i) - shift[0];
        const long sj = static_cast<long>(j) - shift[1];
        const long sk = static_cast<long>(k) - shift[2];
        if (si < 0 || sj < 0 || sk < 0 || si >= static_cast<long>(d.nx) || sj >= static_cast<long>(d.ny) ||
            sk >= static_cast<long>(d.nz)) {
          continue;
        }
        out[d.index(i, j, k)] = in[d.index(static_cast<std::size_t>(si), static_cast<std::size_t>(sj),
                                           static_cast<std::size_t>(sk))];
      }
  return out;
}

// One dilation (grow into background) or erosion (shrink to background) step of
// class `id`. The grid edge counts as background.
Labels morph_step(const Labels& in, const Dims& d, std::uint8_t id, bool dilate) {
  Labels out = in;
  auto label_at = [&](long i, long j, long k) -> int {
    if (i < 0 || j < 0 || k < 0 || i >= static_cast<long>(d.nx) || j >= static_cast<long>(d.ny) ||
        k >= static_cast<long>(d.nz)) {
      return 0;
    }
    return in[d.index(static_cast<std::size_t>(i), static_cast<std::size_t>(j), static_cast<std::size_t>(k))];
  };
  static constexpr int kOff[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
  for (long k = 0; k < static_cast<long>(d.nz); ++k)
    for (long j = 0; j < static_cast<long>(d.ny); ++j)
      for (long i = 0; i < static_cast<long>(d.nx); ++i) {
        const int here = label_at(i, j, k);
        const auto idx = d.index(static_cast<std::size_t>(i), static_cast<std::size_t>(j), static_cast<std::size_t>(k));
        for (const auto& o : kOff) {
          const int there = label_at(i + o[0], j + o[1], k + o[2]);
          if (dilate && here == 0 && there == id) {
            out[idx] = id;
            break;
          }
          if (!dilate && here == id && there != id) {
            out[idx] = 0;
            break;
          }
        }
      }
  return out;
}

metrics::MetricRow expected_row(const LabelVolume& gt, const LabelVolume& pred, const ProbVolume& prob, int id,
                                double tolerance_mm) {
  metrics::MetricRow row;
  row.class_id = id;
  row.class_name = gt.classes().name(id);
  const ConfusionCounts c = reference::count_class(gt, pred, id);
  row.gt_voxels = c.tp + c.fn;
  row.pred_voxels = c.tp + c.fp;
  const std::uint64_t dice_den = 2 * c.tp + c.fp + c.fn;
  row.dice = dice_den == 0 ? metrics::MetricValue::undefined("both empty")
                           : metrics::MetricValue::of(2.0 * static_cast<double>(c.tp) / static_cast<double>(dice_den));
  row.sensitivity = c.tp + c.fn == 0
                        ? metrics::MetricValue::undefined("no positives")
                        : metrics::MetricValue::of(static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn));
  row.specificity = c.tn + c.fp == 0
                        ? metrics::MetricValue::undefined("no negatives")
                        : metrics::MetricValue::of(static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp));
  const BinaryMask g = class_mask(gt, id);
  row.nsd = reference::nsd_all_pairs(g, class_mask(pred, id), tolerance_mm);
  row.auc = reference::auc_by_score_groups(g, prob.channel(static_cast<std::size_t>(id)));
  return row;
}

std::array<double, 3> vec3(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw FormatError(std::string("phantom spec: ") + what + " must be [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

Phantom synthesize_phantom(const PhantomSpec& spec) {
  const Dims& d = spec.dims;
  if (d.count() == 0) throw Error("phantom dims must be at least 1 per axis");
  const std::size_t nclasses = spec.classes.size();
  const auto& pert = spec.perturbation;
  if (!(pert.flip_probability >= 0.0 && pert.flip_probability <= 1.0)) {
    throw Error("phantom flip probability must lie in [0, 1]");
  }
  XorShift64Star rng(spec.seed);

  Labels gt(d.count(), 0);
  for (std::size_t n = 0; n < spec.primitives.size(); ++n) {
    const Primitive& p = spec.primitives[n];
    if (!spec.classes.contains(p.class_id) || p.class_id == 0) {
      throw Error("phantom primitive " + std::to_string(n) + " has invalid class id " + std::to_string(p.class_id));
    }
    if (!(p.radius >= 0.0)) throw Error("phantom primitive " + std::to_string(n) + " has a negative radius");
    require_inside(d, p.start, p.radius, n);
    const auto id = static_cast<std::uint8_t>(p.class_id);
    switch (p.kind) {
      case Primitive::Kind::Sphere: stamp_sphere(gt, d, p.start, p.radius, id); break;
      case Primitive::Kind::Tube:
        require_inside(d, p.end, p.radius, n);
        stamp_tube(gt, d, p, id);
        break;
      case Primitive::Kind::Blob: stamp_blob(gt, d, p, id, rng); break;
    }
  }

  Labels pred = shifted(gt, d, pert.shift);
  if (pert.morphology != 0) {
    for (std::size_t id = 1; id < nclasses; ++id) {
      for (int s = 0; s < std::abs(pert.morphology); ++s) {
        pred = morph_step(pred, d, static_cast<std::uint8_t>(id), pert.morphology > 0);
      }
    }
  }
  if (pert.flip_probability > 0.0) {
    for (auto& l : pred) {
      if (rng.uniform() < pert.flip_probability) {
        l = static_cast<std::uint8_t>((l + 1 + rng.below(nclasses - 1)) % nclasses);
      }
    }
  }

  // Predicted class gets 0.5 + k/512 (k uniform in 0..255); the rest is shared
  // equally, so scores take a small set of exact values.
  const std::size_t n = d.count();
  std::vector<double> prob(n * nclasses);
  for (std::size_t v = 0; v < n; ++v) {
    const double top = 0.5 + static_cast<double>(rng.below(256)) / 512.0;
    const double rest = (1.0 - top) / static_cast<double>(nclasses - 1);
    for (std::size_t c = 0; c < nclasses; ++c) prob[c * n + v] = c == pred[v] ? top : rest;
  }

  Phantom out{LabelVolume(d, spec.spacing, std::move(gt), spec.classes),
              LabelVolume(d, spec.spacing, std::move(pred), spec.classes),
              ProbVolume(d, spec.spacing, nclasses, std::move(prob), true),
              {}};
  if (spec.compute_expected) {
    for (auto id : spec.classes.foreground_ids()) {
      out.expected.push_back(expected_row(out.gt, out.pred, out.prob, id, spec.tolerance_mm));
    }
  }
  return out;
}

PhantomSpec parse_phantom_spec(const std::string& json_text) {
  PhantomSpec spec;
  try {
    const auto j = nlohmann::json::parse(json_text);
    if (j.contains("case_id")) spec.case_id = j["case_id"].get<std::string>();
    const auto dims = j.at("dims");
    if (!dims.is_array() || dims.size() != 3) throw FormatError("phantom spec: dims must be [nx, ny, nz]");
    spec.dims = {dims[0].get<std::size_t>(), dims[1].get<std::size_t>(), dims[2].get<std::size_t>()};
    if (j.contains("spacing")) {
      const auto s = vec3(j["spacing"], "spacing");
      spec.spacing = VoxelSpacing(s[0], s[1], s[2]);
    }
    if (j.contains("classes")) {
      std::vector<ClassEntry> entries;
      for (const auto& name : j["classes"]) {
        entries.push_back({static_cast<std::uint8_t>(entries.size()), name.get<std::string>()});
      }
      spec.classes = ClassTable(std::move(entries));
    }
    spec.seed = j.value("seed", std::uint64_t{0});
    spec.tolerance_mm = j.value("tolerance_mm", metrics::kDefaultToleranceMm);
    spec.compute_expected = j.value("compute_expected", true);
    for (const auto& pj : j.value("primitives", nlohmann::json::array())) {
      Primitive p;
      const auto type = pj.at("type").get<std::string>();
      p.class_id = pj.at("class_id").get<int>();
      p.radius = pj.at("radius").get<double>();
      if (type == "sphere") {
        p.kind = Primitive::Kind::Sphere;
        p.start = vec3(pj.at("center"), "sphere center");
      } else if (type == "tube") {
        p.kind = Primitive::Kind::Tube;
        p.start = vec3(pj.at("start"), "tube start");
        p.end = vec3(pj.at("end"), "tube end");
      } else if (type == "blob") {
        p.kind = Primitive::Kind::Blob;
        p.start = vec3(pj.at("start"), "blob start");
        p.steps = pj.at("steps").get<std::size_t>();
      } else {
        throw FormatError("phantom spec: unknown primitive type '" + type + "'");
      }
      spec.primitives.push_back(p);
    }
    if (j.contains("perturbation")) {
      const auto& pj = j["perturbation"];
      if (pj.contains("shift")) {
        const auto s = pj["shift"];
        if (!s.is_array() || s.size() != 3) throw FormatError("phantom spec: shift must be [dx, dy, dz]");
        spec.perturbation.shift = {s[0].get<int>(), s[1].get<int>(), s[2].get<int>()};
      }
      spec.perturbation.morphology = pj.value("morphology", 0);
      spec.perturbation.flip_probability = pj.value("flip_probability", 0.0);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("phantom spec: ") + e.what());
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(std::string("phantom spec: ") + e.what());
  }
  return spec;
}

std::string phantom_spec_to_json(const PhantomSpec& spec) {
  nlohmann::ordered_json j;
  j["case_id"] = spec.case_id;
  j["dims"] = {spec.dims.nx, spec.dims.ny, spec.dims.nz};
  j["spacing"] = {spec.spacing.dx(), spec.spacing.dy(), spec.spacing.dz()};
  j["classes"] = nlohmann::ordered_json::array();
  for (const auto& e : spec.classes.entries()) j["classes"].push_back(e.name);
  j["seed"] = spec.seed;
  j["tolerance_mm"] = spec.tolerance_mm;
  j["compute_expected"] = spec.compute_expected;
  j["primitives"] = nlohmann::ordered_json::array();
  for (const auto& p : spec.primitives) {
    nlohmann::ordered_json pj;
    switch (p.kind) {
      case Primitive::Kind::Sphere:
        pj["type"] = "sphere";
        pj["center"] = p.start;
        break;
      case Primitive::Kind::Tube:
        pj["type"] = "tube";
        pj["start"] = p.start;
        pj["end"] = p.end;
        break;
      case Primitive::Kind::Blob:
        pj["type"] = "blob";
        pj["start"] = p.start;
        pj["steps"] = p.steps;
        break;
    }
    pj["class_id"] = p.class_id;
    pj["radius"] = p.radius;
    j["primitives"].push_back(pj);
  }
  j["perturbation"] = {{"shift", spec.perturbation.shift},
                       {"morphology", spec.perturbation.morphology},
                       {"flip_probability", spec.perturbation.flip_probability}};
  return j.dump(2) + "\n";
}

}  // namespace airwayseg::io
