#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "airwayseg/error.hpp"
#include "airwayseg/losses.hpp"
#include "airwayseg/metrics.hpp"
#include "airwayseg/parallel.hpp"
#include "airwayseg/phantom.hpp"
#include "airwayseg/posthoc.hpp"
#include "airwayseg/rng.hpp"
#include "airwayseg/stats.hpp"
#include "airwayseg/volgrid.hpp"
#include "airwayseg/volio.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace airwayseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitPartial = 2;

struct CommonOptions {
  unsigned threads = 0;
  std::string format = "json";
};

unsigned effective_threads(unsigned requested) {
  if (requested != 0) return requested;
  if (const char* env = std::getenv("AIRWAYSEG_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
    throw Error(std::string("AIRWAYSEG_THREADS must be a positive integer, got '") + env + "'");
  }
  return resolve_threads(0);
}

io::ReportFormat parse_format(const std::string& s) {
  if (s == "json") return io::ReportFormat::Json;
  if (s == "csv") return io::ReportFormat::Csv;
  throw Error("unknown format '" + s + "' (json or csv)");
}

std::string extension(io::ReportFormat f) { return f == io::ReportFormat::Json ? ".json" : ".csv"; }

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::istringstream is(text);
  for (std::string tok; std::getline(is, tok, ',');) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != tok.size()) throw Error("'" + tok + "' is not a number in list '" + text + "'");
    out.push_back(v);
  }
  return out;
}

Dims parse_dims(const std::string& text) {
  const auto v = parse_list(text);
  if (v.size() != 3) throw Error("dims must be nx,ny,nz");
  for (double d : v) {
    if (!(d >= 1 && d == std::floor(d) && d <= 1e6)) throw Error("invalid dims '" + text + "'");
  }
  return {static_cast<std::size_t>(v[0]), static_cast<std::size_t>(v[1]), static_cast<std::size_t>(v[2])};
}

std::optional<ClassTable> read_class_file(const std::string& path) {
  if (path.empty()) return std::nullopt;
  std::ifstream in(path);
  if (!in) throw Error("cannot open class table " + path);
  try {
    const auto j = nlohmann::json::parse(in);
    std::vector<ClassEntry> entries;
    for (const auto& name : j) entries.push_back({static_cast<std::uint8_t>(entries.size()), name.get<std::string>()});
    return ClassTable(std::move(entries));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

LabelVolume with_classes(LabelVolume v, const std::optional<ClassTable>& classes) {
  if (!classes) return v;
  return LabelVolume(v.dims(), v.spacing(), {v.labels().begin(), v.labels().end()}, *classes);
}

BinaryMask read_region(const fs::path& path) {
  const LabelVolume v = io::read_labels(path);
  std::vector<std::uint8_t> bits(v.labels().size());
  std::transform(v.labels().begin(), v.labels().end(), bits.begin(), [](std::uint8_t l) { return l != 0 ? 1 : 0; });
  return BinaryMask(v.dims(), v.spacing(), std::move(bits));
}

// ---------------------------------------------------------------------------
// Case discovery

struct CaseFiles {
  std::string id;
  fs::path gt, pred, prob, region;
};

std::vector<CaseFiles> read_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw Error("cannot open manifest " + manifest.string());
  const fs::path base = manifest.parent_path();
  auto resolve = [&](const nlohmann::json& c, const char* key) -> fs::path {
    if (!c.contains(key) || c[key].is_null()) return {};
    fs::path p = c[key].get<std::string>();
    return p.is_absolute() ? p : base / p;
  };
  std::vector<CaseFiles> cases;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& c : j.at("cases")) {
      cases.push_back({c.at("id").get<std::string>(), resolve(c, "gt"), resolve(c, "pred"), resolve(c, "prob"),
                       resolve(c, "region")});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  }
  std::set<std::string> seen;
  for (const auto& c : cases) {
    if (!seen.insert(c.id).second) throw Error("manifest lists case '" + c.id + "' twice");
  }
  std::sort(cases.begin(), cases.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return cases;
}

std::vector<CaseFiles> discover_cases(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("input directory " + dir.string() + " does not exist");
  std::map<std::string, CaseFiles> by_id;
  static const std::pair<const char*, fs::path CaseFiles::*> kRoles[] = {
      {"_gt.mhd", &CaseFiles::gt}, {"_pred.mhd", &CaseFiles::pred}, {"_prob.mhd", &CaseFiles::prob},
      {"_region.mhd", &CaseFiles::region}};
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    for (const auto& [suffix, member] : kRoles) {
      const std::string s = suffix;
      if (name.size() > s.size() && name.ends_with(s)) {
        const std::string id = name.substr(0, name.size() - s.size());
        auto& c = by_id[id];
        c.id = id;
        c.*member = entry.path();
      }
    }
  }
  std::vector<CaseFiles> out;
  for (auto& [id, c] : by_id) out.push_back(std::move(c));
  return out;
}

std::vector<CaseFiles> gather_cases(const std::string& input, const std::string& manifest) {
  if (!manifest.empty()) return read_manifest(manifest);
  if (input.empty()) throw Error("either --input or --manifest is required");
  return discover_cases(input);
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateConfig {
  std::string input, manifest, out, region, classes;
  std::optional<double> tolerance_mm;
  std::optional<double> tolerance_px;
  bool no_auc = false;
  std::size_t auc_max_per_class = 0;
};

int cmd_evaluate(const EvaluateConfig& cfg, const CommonOptions& common) {
  const auto format = parse_format(common.format);
  const unsigned threads = effective_threads(common.threads);
  if (cfg.tolerance_mm && cfg.tolerance_px) throw Error("--tolerance-mm and --tolerance-px are exclusive");
  if (cfg.tolerance_mm && !(*cfg.tolerance_mm >= 0.0)) throw Error("--tolerance-mm must be non-negative");
  if (cfg.tolerance_px && !(*cfg.tolerance_px >= 0.0)) throw Error("--tolerance-px must be non-negative");
  const auto classes = read_class_file(cfg.classes);
  const std::optional<BinaryMask> shared_region =
      cfg.region.empty() ? std::nullopt : std::optional<BinaryMask>(read_region(cfg.region));

  const auto all = gather_cases(cfg.input, cfg.manifest);
  std::vector<CaseFiles> cases;
  std::vector<std::string> failures;
  for (const auto& c : all) {
    if (c.gt.empty() || c.pred.empty()) {
      failures.push_back(c.id + ": missing " + std::string(c.gt.empty() ? "ground truth" : "prediction") + " volume");
    } else {
      cases.push_back(c);
    }
  }
  if (cases.empty()) {
    std::cerr << "error: no matched ground-truth/prediction pairs\n";
    for (const auto& f : failures) std::cerr << "  " << f << "\n";
    return kExitInput;
  }

  const unsigned workers = std::min<unsigned>(threads, static_cast<unsigned>(cases.size()));
  const unsigned inner = std::max(1u, threads / workers);
  std::vector<std::optional<metrics::CaseReport>> reports(cases.size());
  std::vector<std::string> errors(cases.size());
  parallel_chunks(cases.size(), workers, [&](std::size_t begin, std::size_t end, unsigned) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& c = cases[i];
      try {
        const LabelVolume gt = with_classes(io::read_labels(c.gt), classes);
        const LabelVolume pred = with_classes(io::read_labels(c.pred), classes);
        std::optional<ProbVolume> prob;
        if (!cfg.no_auc && !c.prob.empty()) prob = io::read_probabilities(c.prob);
        std::optional<BinaryMask> region;
        if (!c.region.empty()) region = read_region(c.region);
        const BinaryMask* r = shared_region ? &*shared_region : region ? &*region : nullptr;
        metrics::EvaluationOptions opts;
        opts.tolerance_mm = cfg.tolerance_mm.value_or(metrics::kDefaultToleranceMm);
        if (cfg.tolerance_px) {
          opts.tolerance_mm = *cfg.tolerance_px * std::max(gt.spacing().dx(), gt.spacing().dy());
        }
        opts.compute_auc = !cfg.no_auc;
        opts.auc_sampling.max_per_class = cfg.auc_max_per_class;
        opts.threads = inner;
        reports[i] = metrics::evaluate_case(c.id, gt, pred, prob ? &*prob : nullptr, r, opts);
      } catch (const std::exception& e) {
        errors[i] = c.id + ": " + e.what();
      }
    }
  });

  io::ReportMetadata meta;
  if (cfg.tolerance_px) {
    meta.emplace_back("tolerance_px", io::format_real(*cfg.tolerance_px));
  } else {
    meta.emplace_back("tolerance_mm", io::format_real(cfg.tolerance_mm.value_or(metrics::kDefaultToleranceMm)));
  }
  meta.emplace_back("region", cfg.region.empty() ? "per-case" : fs::path(cfg.region).filename().string());
  meta.emplace_back("auc", cfg.no_auc ? "off" : "on");
  meta.emplace_back("auc_max_per_class", std::to_string(cfg.auc_max_per_class));
  meta.emplace_back("classes", cfg.classes.empty() ? "header" : fs::path(cfg.classes).filename().string());

  fs::create_directories(cfg.out);
  std::vector<metrics::CaseReport> done;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (reports[i]) {
      io::write_report(*reports[i], fs::path(cfg.out) / (cases[i].id + extension(format)), format, meta);
      done.push_back(std::move(*reports[i]));
    } else {
      failures.push_back(errors[i]);
    }
  }
  if (!done.empty()) {
    io::write_report(metrics::aggregate(done), fs::path(cfg.out) / ("aggregate" + extension(format)), format, meta);
  }
  std::sort(failures.begin(), failures.end());
  for (const auto& f : failures) std::cerr << "failed: " << f << "\n";
  std::cout << "evaluated " << done.size() << " case(s), " << failures.size() << " failure(s)\n";
  if (done.empty()) return kExitInput;
  return failures.empty() ? kExitOk : kExitPartial;
}

// ---------------------------------------------------------------------------
// correlate

struct CorrelateConfig {
  std::string input, manifest, pft, out, classes;
  std::string sidedness = "two";
};

int cmd_correlate(const CorrelateConfig& cfg, const CommonOptions& common) {
  const auto format = parse_format(common.format);
  const unsigned threads = effective_threads(common.threads);
  stats::Sidedness sided;
  if (cfg.sidedness == "two") {
    sided = stats::Sidedness::TwoSided;
  } else if (cfg.sidedness == "one") {
    sided = stats::Sidedness::OneSided;
  } else {
    throw Error("--sidedness must be 'two' or 'one'");
  }
  const auto class_override = read_class_file(cfg.classes);
  std::vector<CaseFiles> cases;
  for (auto& c : gather_cases(cfg.input, cfg.manifest)) {
    if (!c.pred.empty()) cases.push_back(std::move(c));
  }
  if (cases.empty()) {
    std::cerr << "error: no prediction volumes found\n";
    return kExitInput;
  }
  const auto fev1 = io::read_pft_csv(cfg.pft).by_case();

  std::vector<std::string> no_pft, no_pred;
  std::set<std::string> have;
  for (const auto& c : cases) {
    have.insert(c.id);
    if (!fev1.count(c.id)) no_pft.push_back(c.id);
  }
  for (const auto& [id, v] : fev1) {
    if (!have.count(id)) no_pred.push_back(id);
  }
  if (!no_pft.empty() || !no_pred.empty()) {
    std::cerr << "error: case ids do not match between predictions and " << cfg.pft << "\n";
    for (const auto& id : no_pft) std::cerr << "  no FEV1% for " << id << "\n";
    for (const auto& id : no_pred) std::cerr << "  no prediction for " << id << "\n";
    return kExitInput;
  }

  std::vector<std::optional<LabelVolume>> preds(cases.size());
  parallel_for(cases.size(), threads, [&](std::size_t i) {
    preds[i] = with_classes(io::read_labels(cases[i].pred), class_override);
  });
  const ClassTable classes = preds.front()->classes();
  std::map<std::string, std::vector<double>> volumes;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (!(preds[i]->classes() == classes)) throw Error(cases[i].id + ": class table differs from the first case");
    volumes[cases[i].id] = stats::class_volumes_mm3(*preds[i]);
  }
  const auto rows = stats::correlate_volumes(classes, volumes, fev1, sided);

  io::ReportMetadata meta{{"sidedness", stats::to_string(sided)},
                          {"cases", std::to_string(cases.size())},
                          {"classes", cfg.classes.empty() ? "header" : fs::path(cfg.classes).filename().string()}};
  io::write_report(rows, cfg.out, format, meta);
  for (const auto& r : rows) {
    std::cout << r.class_name << ": ";
    if (r.result) {
      std::cout << "rho=" << io::format_real(r.result->rho) << " p=" << io::format_real(r.result->p_value) << " ("
                << stats::to_string(r.result->method) << ")\n";
    } else {
      std::cout << "undefined (" << r.reason << ")\n";
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// loss-check

struct LossCheckConfig {
  std::string random;
  std::uint64_t seed = 7;
  std::string y, p;
  double h = 1e-5;
  double k = losses::kTop50Fraction;
  std::string alphas = "0,0.25,0.5,0.75,1";
  bool include_background = false;
  std::string dice_term = "one-minus";
  std::string topk_norm = "voxels";
};

std::pair<ProbVolume, ProbVolume> random_pair(const std::string& spec, std::uint64_t seed) {
  const auto v = parse_list(spec);
  if (v.size() != 4) throw Error("--random expects nx,ny,nz,C");
  for (double d : v) {
    if (!(d >= 1 && d == std::floor(d) && d <= 4096)) throw Error("invalid --random dims '" + spec + "'");
  }
  const Dims dims{static_cast<std::size_t>(v[0]), static_cast<std::size_t>(v[1]), static_cast<std::size_t>(v[2])};
  const auto c = static_cast<std::size_t>(v[3]);
  if (c < 2) throw Error("--random needs at least 2 classes");
  XorShift64Star rng(seed);
  const std::size_t n = dims.count();
  std::vector<std::uint8_t> labels(n);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(c));
  std::vector<double> p(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0;
    for (std::size_t k = 0; k < c; ++k) sum += p[k * n + i] = 0.1 + 0.9 * rng.uniform();
    for (std::size_t k = 0; k < c; ++k) p[k * n + i] /= sum;
  }
  const LabelVolume y(dims, {}, std::move(labels), ClassTable::numbered(c - 1));
  return {one_hot(y), ProbVolume(dims, {}, c, std::move(p), true)};
}

ProbVolume read_target(const fs::path& path) {
  io::Volume v = io::read_volume(path);
  if (auto* l = std::get_if<LabelVolume>(&v)) return one_hot(*l);
  if (auto* p = std::get_if<ProbVolume>(&v)) return std::move(*p);
  throw Error(path.string() + ": expected labels or probabilities");
}

int cmd_loss_check(const LossCheckConfig& cfg) {
  losses::LossOptions opts;
  opts.include_background = cfg.include_background;
  if (cfg.dice_term == "one-minus") {
    opts.dice_term = losses::DiceTerm::OneMinusDice;
  } else if (cfg.dice_term == "raw") {
    opts.dice_term = losses::DiceTerm::RawDice;
  } else {
    throw Error("--dice-term must be 'one-minus' or 'raw'");
  }
  if (cfg.topk_norm == "voxels") {
    opts.topk_normalization = losses::TopKNormalization::ByVoxelCount;
  } else if (cfg.topk_norm == "selected") {
    opts.topk_normalization = losses::TopKNormalization::BySelectedCount;
  } else {
    throw Error("--topk-norm must be 'voxels' or 'selected'");
  }

  std::optional<std::pair<ProbVolume, ProbVolume>> data;
  if (!cfg.random.empty()) {
    if (!cfg.y.empty() || !cfg.p.empty()) throw Error("--random excludes --y/--p");
    data = random_pair(cfg.random, cfg.seed);
  } else {
    if (cfg.y.empty() || cfg.p.empty()) throw Error("give --random nx,ny,nz,C or both --y and --p");
    data.emplace(read_target(cfg.y), io::read_probabilities(cfg.p));
  }
  const auto& [y, p] = *data;

  std::vector<losses::LossSpec> specs{{losses::LossId::CrossEntropy, 0, cfg.k, opts},
                                      {losses::LossId::SoftDice, 0, cfg.k, opts},
                                      {losses::LossId::DiceCE, 0, cfg.k, opts},
                                      {losses::LossId::TopK, 0, cfg.k, opts}};
  const auto alphas = parse_list(cfg.alphas);
  for (double a : alphas) specs.push_back({losses::LossId::WDiceTop50, a, cfg.k, opts});

  std::printf("%-28s %14s %12s %12s %8s %6s  %s\n", "loss", "value", "max_rel_err", "max_abs_err", "compared",
              "ties", "status");
  bool all_ok = true;
  for (const auto& spec : specs) {
    const auto v = losses::evaluate(spec, y, p, true);
    const auto fd = losses::finite_difference_gradient(spec, y, p, cfg.h);
    const auto check = losses::compare_gradients(*v.gradient, fd);
    all_ok = all_ok && check.passed;
    std::printf("%-28s %14.8g %12.3e %12.3e %8zu %6zu  %s\n", losses::describe(spec).c_str(), v.value,
                check.max_relative_error, check.max_small_entry_error, check.compared, check.skipped_ties,
                check.passed ? "ok" : "FAIL");
  }

  // WDiceTop50 is affine in alpha: the midpoint of 0 and 1 must agree exactly.
  auto wd = [&](double a) {
    return losses::wdice_top50(y, p, a, false, opts, cfg.k).value;
  };
  const double v0 = wd(0.0), v1 = wd(1.0);
  double deviation = 0.0;
  for (double a : {0.25, 0.5, 0.75}) deviation = std::max(deviation, std::abs(wd(a) - ((1 - a) * v0 + a * v1)));
  const bool linear = deviation < 1e-12;
  all_ok = all_ok && linear;
  std::printf("alpha linearity: max deviation %.3e  %s\n", deviation, linear ? "ok" : "FAIL");
  std::printf("%s\n", all_ok ? "all checks passed" : "some checks FAILED");
  return all_ok ? kExitOk : kExitInput;
}

// ---------------------------------------------------------------------------
// uncertainty

struct UncertaintyConfig {
  std::vector<std::string> members;
  std::string out_volume, out, region;
  std::string estimator = "population";
};

int cmd_uncertainty(const UncertaintyConfig& cfg, const CommonOptions& common) {
  const auto format = parse_format(common.format);
  const unsigned threads = effective_threads(common.threads);
  posthoc::VarianceEstimator est;
  if (cfg.estimator == "population") {
    est = posthoc::VarianceEstimator::Population;
  } else if (cfg.estimator == "sample") {
    est = posthoc::VarianceEstimator::Sample;
  } else {
    throw Error("--estimator must be 'population' or 'sample'");
  }
  if (cfg.members.size() < 2) throw Error("need at least 2 ensemble members, got " + std::to_string(cfg.members.size()));
  std::vector<std::optional<ProbVolume>> loaded(cfg.members.size());
  parallel_for(cfg.members.size(), threads, [&](std::size_t i) { loaded[i] = io::read_probabilities(cfg.members[i]); });
  std::vector<ProbVolume> members;
  for (auto& m : loaded) members.push_back(std::move(*m));
  std::optional<BinaryMask> region;
  if (!cfg.region.empty()) region = read_region(cfg.region);
  const auto summary = posthoc::ensemble_variance(members, est, region ? &*region : nullptr);
  if (!cfg.out_volume.empty()) {
    io::write_volume(ProbVolume(summary.dims, summary.spacing, summary.num_classes, summary.variance),
                     cfg.out_volume, io::ContentKind::Variance);
  }
  io::ReportMetadata meta{{"estimator", cfg.estimator},
                          {"region", cfg.region.empty() ? "none" : fs::path(cfg.region).filename().string()}};
  io::write_report(summary, cfg.out, format, meta);
  std::cout << "members=" << summary.members << " global_mean=" << io::format_real(summary.global_mean)
            << " global_std=" << io::format_real(summary.global_std) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcam

struct GradcamConfig {
  std::string activations, gradients, target, out;
};

int cmd_gradcam(const GradcamConfig& cfg) {
  const auto acts = io::read_tensor(cfg.activations);
  const auto grads = io::read_tensor(cfg.gradients);
  posthoc::Heatmap map = posthoc::grad_cam(acts, grads);
  if (!cfg.target.empty()) map = posthoc::resample_heatmap(map, parse_dims(cfg.target));
  const auto normalized = posthoc::normalize_heatmap(map);
  io::write_volume(normalized.map, cfg.out);
  std::cout << "heatmap " << to_string(normalized.map.dims()) << (normalized.all_zero ? " all_zero" : "")
            << " raw_max=" << io::format_real(map.max()) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// phantom

struct PhantomConfig {
  std::vector<std::string> specs;
  std::string out;
};

std::vector<std::string> spec_documents(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open phantom spec " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!j.is_array()) return {ss.str()};
  std::vector<std::string> docs;
  for (const auto& e : j) docs.push_back(e.dump());
  return docs;
}

int cmd_phantom(const PhantomConfig& cfg, const CommonOptions& common) {
  const auto format = parse_format(common.format);
  const unsigned threads = effective_threads(common.threads);
  std::vector<io::PhantomSpec> specs;
  for (const auto& file : cfg.specs) {
    for (const auto& doc : spec_documents(file)) specs.push_back(io::parse_phantom_spec(doc));
  }
  std::set<std::string> ids;
  for (const auto& s : specs) {
    if (!ids.insert(s.case_id).second) throw Error("duplicate phantom case_id '" + s.case_id + "'");
  }
  std::vector<std::optional<io::Phantom>> made(specs.size());
  parallel_for(specs.size(), threads, [&](std::size_t i) { made[i] = io::synthesize_phantom(specs[i]); });

  const fs::path out(cfg.out);
  fs::create_directories(out);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    const auto& ph = *made[i];
    io::write_volume(ph.gt, out / (s.case_id + "_gt.mhd"));
    io::write_volume(ph.pred, out / (s.case_id + "_pred.mhd"));
    io::write_volume(ph.prob, out / (s.case_id + "_prob.mhd"));
    if (!ph.expected.empty()) {
      io::ReportMetadata meta{{"case_id", s.case_id},
                              {"seed", std::to_string(s.seed)},
                              {"tolerance_mm", io::format_real(s.tolerance_mm)}};
      io::write_report(ph.expected, out / (s.case_id + "_expected" + extension(format)), format, meta);
    }
  }
  std::cout << "wrote " << specs.size() << " phantom case(s) to " << out.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segmentation evaluation, loss verification and post-hoc analysis for airway lesion volumes"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  CommonOptions common;
  auto add_common = [&](CLI::App* sub, bool with_format) {
    sub->add_option("--threads", common.threads, "Worker threads (0: AIRWAYSEG_THREADS or all cores)");
    if (with_format) {
      sub->add_option("--format", common.format, "Report format")->check(CLI::IsMember({"json", "csv"}));
    }
  };

  EvaluateConfig ev;
  auto* evaluate = app.add_subcommand("evaluate", "Per-case and aggregate Dice/NSD/sensitivity/specificity/AUC");
  evaluate->add_option("--input", ev.input, "Directory of {id}_gt/_pred/_prob/_region.mhd files");
  evaluate->add_option("--manifest", ev.manifest, "JSON manifest listing cases explicitly");
  evaluate->add_option("--out", ev.out, "Output directory")->required();
  evaluate->add_option("--tolerance-mm", ev.tolerance_mm, "NSD tolerance in mm (default 1.8)");
  evaluate->add_option("--tolerance-px", ev.tolerance_px, "NSD tolerance in pixels of the largest in-plane spacing");
  evaluate->add_option("--region", ev.region, "Region mask applied to every case");
  evaluate->add_option("--classes", ev.classes, "JSON array of class names overriding the volume headers");
  evaluate->add_flag("--no-auc", ev.no_auc, "Skip AUC");
  evaluate->add_option("--auc-max-per-class", ev.auc_max_per_class,
                       "Stratified thinning of AUC positives/negatives (0: exact)");
  add_common(evaluate, true);

  CorrelateConfig co;
  auto* correlate = app.add_subcommand("correlate", "Spearman of predicted lesion volume against FEV1%");
  correlate->add_option("--input", co.input, "Directory of {id}_pred.mhd files");
  correlate->add_option("--manifest", co.manifest, "JSON manifest listing cases explicitly");
  correlate->add_option("--pft", co.pft, "CSV with columns case_id,fev1_percent")->required();
  correlate->add_option("--out", co.out, "Report path")->required();
  correlate->add_option("--classes", co.classes, "JSON array of class names overriding the volume headers");
  correlate->add_option("--sidedness", co.sidedness, "Alternative hypothesis: two or one")
      ->check(CLI::IsMember({"two", "one"}));
  add_common(correlate, true);

  LossCheckConfig lc;
  auto* loss_check = app.add_subcommand("loss-check", "Analytic vs finite-difference loss gradients");
  loss_check->add_option("--random", lc.random, "Random grid nx,ny,nz,C");
  loss_check->add_option("--seed", lc.seed, "Seed for --random");
  loss_check->add_option("--y", lc.y, "Target volume (labels or probabilities)");
  loss_check->add_option("--p", lc.p, "Predicted probability volume");
  loss_check->add_option("--step", lc.h, "Finite-difference step h");
  loss_check->add_option("--k", lc.k, "Top-k fraction");
  loss_check->add_option("--alphas", lc.alphas, "WDiceTop50 weights to check");
  loss_check->add_flag("--include-background", lc.include_background, "Include channel 0 in channel means");
  loss_check->add_option("--dice-term", lc.dice_term, "Dice term of composite losses: one-minus or raw")
      ->check(CLI::IsMember({"one-minus", "raw"}));
  loss_check->add_option("--topk-norm", lc.topk_norm, "Top-k normaliser: voxels or selected")
      ->check(CLI::IsMember({"voxels", "selected"}));

  UncertaintyConfig un;
  auto* uncertainty = app.add_subcommand("uncertainty", "Per-voxel variance across ensemble members");
  uncertainty->add_option("--members", un.members, "Member probability volumes")->required()->default_str("");
  uncertainty->add_option("--out", un.out, "Summary report path")->required();
  uncertainty->add_option("--out-volume", un.out_volume, "Variance volume (.mhd)");
  uncertainty->add_option("--region", un.region, "Region mask for the summary means");
  uncertainty->add_option("--estimator", un.estimator, "population or sample")
      ->check(CLI::IsMember({"population", "sample"}));
  add_common(uncertainty, true);

  GradcamConfig gc;
  auto* gradcam = app.add_subcommand("gradcam", "Normalised Grad-CAM heatmap from exported tensors");
  gradcam->add_option("--activations", gc.activations, "Activation tensor (.mhd)")->required();
  gradcam->add_option("--gradients", gc.gradients, "Gradient tensor (.mhd)")->required();
  gradcam->add_option("--target", gc.target, "Resample to nx,ny,nz");
  gradcam->add_option("--out", gc.out, "Heatmap path (.mhd)")->required();

  PhantomConfig ph;
  auto* phantom = app.add_subcommand("phantom", "Synthesise ground truth, prediction and expected metrics");
  phantom->add_option("--spec", ph.specs, "Phantom spec JSON (object or array of objects)")->required()->default_str("");
  phantom->add_option("--out", ph.out, "Output directory")->required();
  add_common(phantom, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*evaluate) return cmd_evaluate(ev, common);
    if (*correlate) return cmd_correlate(co, common);
    if (*loss_check) return cmd_loss_check(lc);
    if (*uncertainty) return cmd_uncertainty(un, common);
    if (*gradcam) return cmd_gradcam(gc);
    if (*phantom) return cmd_phantom(ph, common);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}
