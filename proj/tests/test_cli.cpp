#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "airwayseg/metrics.hpp"
#include "airwayseg/phantom.hpp"
#include "airwayseg/posthoc.hpp"
#include "airwayseg/volio.hpp"
#include "cohort.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace airwayseg;
namespace fs = std::filesystem;

namespace {

std::string cli() { return std::string("'") + AIRWAYSEG_CLI_PATH + "'"; }

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_specs(const fs::path& path, const std::vector<io::PhantomSpec>& specs) {
  std::string text = "[";
  for (std::size_t i = 0; i < specs.size(); ++i) text += (i ? "," : "") + io::phantom_spec_to_json(specs[i]);
  std::ofstream(path) << text << "]";
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

// Table cell value (metric row m, class column c) of an aggregate JSON report.
double aggregate_cell(const nlohmann::json& j, std::size_t m, std::size_t c) {
  return j["table"][m]["cells"][c]["value"].get<double>();
}

io::PhantomSpec small_spec(const std::string& id, std::uint64_t seed) {
  io::PhantomSpec s;
  s.case_id = id;
  s.dims = {14, 12, 10};
  s.spacing = VoxelSpacing(0.6, 0.6, 1.0);
  s.seed = seed;
  using K = io::Primitive::Kind;
  s.primitives = {{K::Tube, 1, {2, 2, 2}, {11, 9, 7}, 1.5, 0},
                  {K::Sphere, 2, {10, 3, 3}, {}, 1.5, 0},
                  {K::Blob, 3, {4, 8, 5}, {}, 1.0, 8},
                  {K::Sphere, 4, {11, 9, 7}, {}, 1.0, 0},
                  {K::Sphere, 5, {5, 4, 6}, {}, 1.2, 0}};
  return s;
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(testkit::run_command(cli()), 1);
  EXPECT_EQ(testkit::run_command(cli() + " frobnicate"), 1);
  EXPECT_EQ(testkit::run_command(cli() + " --help"), 0);
}

TEST(Cli, PhantomZeroPerturbationEvaluatesToOnes) {
  testkit::TempDir dir("cli");
  write_specs(dir / "s.json", {small_spec("z1", 1)});
  ASSERT_EQ(testkit::run_command(cli() + " phantom --spec " + q(dir / "s.json") + " --out " + q(dir / "ph")), 0);
  ASSERT_EQ(testkit::run_command(cli() + " evaluate --input " + q(dir / "ph") + " --out " + q(dir / "ev")), 0);
  const auto agg = read_json(dir / "ev" / "aggregate.json");
  for (std::size_t m = 0; m < 5; ++m) {
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(aggregate_cell(agg, m, c), 1.0);
    EXPECT_EQ(agg["table"][m]["avg"]["value"].get<double>(), 1.0);
  }
}

TEST(Cli, TenCaseAggregateIsMeanOfExpectedCards) {
  testkit::TempDir dir("cli");
  std::vector<io::PhantomSpec> specs;
  for (int i = 0; i < 10; ++i) {
    auto s = small_spec("k" + std::to_string(i), 50 + static_cast<std::uint64_t>(i));
    s.perturbation = {{i % 3 - 1, 0, 0}, i % 2, 0.02};
    specs.push_back(s);
  }
  write_specs(dir / "s.json", specs);
  ASSERT_EQ(testkit::run_command(cli() + " phantom --spec " + q(dir / "s.json") + " --out " + q(dir / "ph")), 0);
  ASSERT_EQ(testkit::run_command(cli() + " evaluate --input " + q(dir / "ph") + " --out " + q(dir / "ev")), 0);
  const auto agg = read_json(dir / "ev" / "aggregate.json");
  for (std::size_t c = 0; c < 5; ++c) {
    for (std::size_t m = 0; m < 5; ++m) {
      double sum = 0;
      int defined = 0;
      for (const auto& s : specs) {
        const auto rows = io::read_metric_rows(dir / "ph" / (s.case_id + "_expected.json"));
        const auto& v = rows[c].get(metrics::kAllMetrics[m]);
        if (v.defined()) {
          sum += *v.value;
          ++defined;
        }
      }
      ASSERT_GT(defined, 0);
      EXPECT_NEAR(aggregate_cell(agg, m, c), sum / defined, 1e-5);
    }
  }
}

TEST(Cli, MissingPredictionIsPartialFailure) {
  testkit::TempDir dir("cli");
  std::vector<io::PhantomSpec> specs;
  for (int i = 0; i < 10; ++i) specs.push_back(small_spec("m" + std::to_string(i), static_cast<std::uint64_t>(i)));
  write_specs(dir / "s.json", specs);
  ASSERT_EQ(testkit::run_command(cli() + " phantom --spec " + q(dir / "s.json") + " --out " + q(dir / "ph")), 0);
  fs::remove(dir / "ph" / "m3_pred.mhd");
  std::string out;
  EXPECT_EQ(testkit::run_command(cli() + " evaluate --input " + q(dir / "ph") + " --out " + q(dir / "ev"), &out), 2);
  EXPECT_NE(out.find("m3: missing prediction volume"), std::string::npos) << out;
  int reports = 0;
  for (const auto& e : fs::directory_iterator(dir / "ev")) reports += e.path().filename() != "aggregate.json";
  EXPECT_EQ(reports, 9);
  EXPECT_EQ(read_json(dir / "ev" / "aggregate.json")["case_count"].get<int>(), 9);
}

TEST(Cli, NoPairsExitsOne) {
  testkit::TempDir dir("cli");
  fs::create_directories(dir / "empty");
  EXPECT_EQ(testkit::run_command(cli() + " evaluate --input " + q(dir / "empty") + " --out " + q(dir / "ev")), 1);
}

TEST(Cli, ManifestOverridesNaming) {
  testkit::TempDir dir("cli");
  const auto ph = io::synthesize_phantom(small_spec("x", 3));
  io::write_volume(ph.gt, dir / "truth.mhd");
  io::write_volume(ph.pred, dir / "guess.mhd");
  std::ofstream(dir / "m.json") << R"({"cases": [{"id": "only", "gt": "truth.mhd", "pred": "guess.mhd"}]})";
  ASSERT_EQ(testkit::run_command(cli() + " evaluate --manifest " + q(dir / "m.json") + " --out " + q(dir / "ev") +
                                 " --format csv --tolerance-px 3"),
            0);
  const auto csv = slurp(dir / "ev" / "only.csv");
  EXPECT_NE(csv.find("# tolerance_mm=1.8"), std::string::npos) << csv;
  EXPECT_NE(csv.find("# tolerance_px=3"), std::string::npos) << csv;
  EXPECT_NE(csv.find("null(no probabilities)"), std::string::npos);
}

TEST(Cli, ThreadCountDoesNotChangeBytes) {
  testkit::TempDir dir("cli");
  std::vector<io::PhantomSpec> specs;
  for (int i = 0; i < 5; ++i) {
    auto s = small_spec("t" + std::to_string(i), 70 + static_cast<std::uint64_t>(i));
    s.perturbation = {{0, 1, 0}, -1 + i % 3, 0.05};
    specs.push_back(s);
  }
  write_specs(dir / "s.json", specs);
  ASSERT_EQ(testkit::run_command(cli() + " phantom --threads 1 --spec " + q(dir / "s.json") + " --out " + q(dir / "ph")),
            0);
  ASSERT_EQ(testkit::run_command(cli() + " evaluate --threads 1 --input " + q(dir / "ph") + " --out " + q(dir / "e1")),
            0);
  ASSERT_EQ(testkit::run_command("AIRWAYSEG_THREADS=4 " + cli() + " evaluate --input " + q(dir / "ph") + " --out " +
                                 q(dir / "e4")),
            0);
  for (const auto& e : fs::directory_iterator(dir / "e1")) {
    EXPECT_EQ(slurp(e.path()), slurp(dir / "e4" / e.path().filename())) << e.path();
  }
}

TEST(Cli, CorrelateAntiMonotoneCohort) {
  testkit::TempDir dir("cli");
  const auto specs = testkit::anti_monotone_cohort(8);
  write_specs(dir / "s.json", specs);
  ASSERT_EQ(testkit::run_command(cli() + " phantom --spec " + q(dir / "s.json") + " --out " + q(dir / "ph")), 0);
  {
    std::ofstream pft(dir / "pft.csv");
    pft << "case_id,fev1_percent\n";
    for (std::size_t i = 0; i < specs.size(); ++i) pft << specs[i].case_id << "," << testkit::cohort_fev1(i) << "\n";
  }
  ASSERT_EQ(testkit::run_command(cli() + " correlate --input " + q(dir / "ph") + " --pft " + q(dir / "pft.csv") +
                                 " --out " + q(dir / "c.json")),
            0);
  const auto j = read_json(dir / "c.json");
  ASSERT_EQ(j["rows"].size(), 5u);
  for (const auto& row : j["rows"]) EXPECT_EQ(row["rho"].get<double>(), -1.0);
}

TEST(Cli, CorrelateConstantClassIsUndefinedRow) {
  testkit::TempDir dir("cli");
  auto specs = testkit::anti_monotone_cohort(5);
  for (auto& s : specs) s.primitives.back().radius = 2.0;
  write_specs(dir / "s.json", specs);
  ASSERT_EQ(testkit::run_command(cli() + " phantom --spec " + q(dir / "s.json") + " --out " + q(dir / "ph")), 0);
  std::ofstream(dir / "pft.csv") << "case_id,fev1_percent\ncase00,90\ncase01,80\ncase02,70\ncase03,60\ncase04,50\n";
  ASSERT_EQ(testkit::run_command(cli() + " correlate --format csv --input " + q(dir / "ph") + " --pft " +
                                 q(dir / "pft.csv") + " --out " + q(dir / "c.csv")),
            0);
  const auto csv = slurp(dir / "c.csv");
  EXPECT_NE(csv.find("5,Consolidation,null(undefined correlation)"), std::string::npos) << csv;
  EXPECT_NE(csv.find("1,Bronchiectasis,-1,0.0166667,5,exact-permutation,two-sided"), std::string::npos) << csv;
}

TEST(Cli, CorrelateErrors) {
  testkit::TempDir dir("cli");
  write_specs(dir / "s.json", testkit::anti_monotone_cohort(3));
  ASSERT_EQ(testkit::run_command(cli() + " phantom --spec " + q(dir / "s.json") + " --out " + q(dir / "ph")), 0);
  std::ofstream(dir / "mismatch.csv") << "case_id,fev1_percent\ncase00,90\ncase01,80\nother,70\n";
  std::string out;
  EXPECT_EQ(testkit::run_command(cli() + " correlate --input " + q(dir / "ph") + " --pft " + q(dir / "mismatch.csv") +
                                     " --out " + q(dir / "c.json"),
                                 &out),
            1);
  EXPECT_NE(out.find("no FEV1% for case02"), std::string::npos) << out;
  EXPECT_NE(out.find("no prediction for other"), std::string::npos) << out;
  fs::remove(dir / "ph" / "case02_pred.mhd");
  std::ofstream(dir / "two.csv") << "case_id,fev1_percent\ncase00,90\ncase01,80\n";
  EXPECT_EQ(testkit::run_command(cli() + " correlate --input " + q(dir / "ph") + " --pft " + q(dir / "two.csv") +
                                 " --out " + q(dir / "c.json")),
            1);
  EXPECT_FALSE(fs::exists(dir / "c.json"));
}

TEST(Cli, LossCheckRandomPasses) {
  std::string out;
  EXPECT_EQ(testkit::run_command(cli() + " loss-check --random 4,4,4,3 --seed 7", &out), 0) << out;
  EXPECT_NE(out.find("alpha linearity"), std::string::npos);
  EXPECT_EQ(out.find("FAIL"), std::string::npos) << out;
}

TEST(Cli, LossCheckOneHotValues) {
  testkit::TempDir dir("cli");
  XorShift64Star rng(5);
  std::vector<std::uint8_t> labels(27);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(3));
  const LabelVolume y({3, 3, 3}, {}, labels, ClassTable::numbered(2));
  io::write_volume(y, dir / "y.mhd");
  io::write_volume(one_hot(y), dir / "p.mhd");
  std::string out;
  testkit::run_command(cli() + " loss-check --y " + q(dir / "y.mhd") + " --p " + q(dir / "p.mhd"), &out);
  auto value_of = [&](const std::string& name) {
    const auto pos = out.find("\n" + name + " ");
    EXPECT_NE(pos, std::string::npos) << name << "\n" << out;
    return std::stod(out.substr(pos + name.size() + 1));
  };
  EXPECT_LT(value_of("CE"), 1e-6);
  EXPECT_EQ(value_of("SoftDice"), 1.0);
  EXPECT_LT(value_of("DiceCE"), 1e-6);
  EXPECT_LT(value_of("WDiceTop50(alpha=0)"), 1e-12);
}

TEST(Cli, LossCheckInvalidDims) {
  EXPECT_EQ(testkit::run_command(cli() + " loss-check --random 4,0,4,3"), 1);
  EXPECT_EQ(testkit::run_command(cli() + " loss-check --random 4,4,3"), 1);
  EXPECT_EQ(testkit::run_command(cli() + " loss-check"), 1);
}

TEST(Cli, UncertaintyCommand) {
  testkit::TempDir dir("cli");
  std::vector<ProbVolume> members;
  for (int i = 0; i < 5; ++i) {
    auto s = small_spec("u", 10 + static_cast<std::uint64_t>(i));
    s.perturbation.flip_probability = 0.1;
    members.push_back(io::synthesize_phantom(s).prob);
    io::write_volume(members.back(), dir / ("m" + std::to_string(i) + ".mhd"));
  }
  std::string list;
  for (int i = 0; i < 5; ++i) list += " " + q(dir / ("m" + std::to_string(i) + ".mhd"));
  ASSERT_EQ(testkit::run_command(cli() + " uncertainty --members" + list + " --out " + q(dir / "u.json") +
                                 " --out-volume " + q(dir / "var.mhd")),
            0);
  const auto j = read_json(dir / "u.json");
  const auto direct = posthoc::ensemble_variance(members);
  EXPECT_EQ(j["global_mean"].get<double>(), std::stod(io::format_real(direct.global_mean)));
  EXPECT_EQ(j["members"].get<int>(), 5);
  const auto var = std::get<ProbVolume>(io::read_volume(dir / "var.mhd"));
  EXPECT_EQ(std::vector<double>(var.values().begin(), var.values().end()), direct.variance);

  ASSERT_EQ(testkit::run_command(cli() + " uncertainty --members " + q(dir / "m0.mhd") + " " + q(dir / "m0.mhd") +
                                 " --out " + q(dir / "same.json")),
            0);
  EXPECT_EQ(read_json(dir / "same.json")["global_mean"].get<double>(), 0.0);
  EXPECT_EQ(testkit::run_command(cli() + " uncertainty --members " + q(dir / "m0.mhd") + " --out " + q(dir / "k1.json")),
            1);
}

TEST(Cli, GradcamCommand) {
  testkit::TempDir dir("cli");
  const Dims d{4, 4, 1};
  std::vector<double> act(32);
  for (std::size_t i = 0; i < act.size(); ++i) act[i] = static_cast<double>(i % 7);
  io::write_volume(posthoc::FeatureTensor(2, d, 2, act), dir / "a.mhd");
  io::write_volume(posthoc::FeatureTensor(2, d, 2, std::vector<double>(32, 0.0)), dir / "g0.mhd");
  io::write_volume(posthoc::FeatureTensor(2, d, 2, std::vector<double>(32, 0.25)), dir / "g.mhd");
  std::string out;
  ASSERT_EQ(testkit::run_command(cli() + " gradcam --activations " + q(dir / "a.mhd") + " --gradients " +
                                     q(dir / "g0.mhd") + " --out " + q(dir / "z.mhd"),
                                 &out),
            0);
  EXPECT_NE(out.find("all_zero"), std::string::npos);
  EXPECT_EQ(io::read_heatmap(dir / "z.mhd").max(), 0.0);

  ASSERT_EQ(testkit::run_command(cli() + " gradcam --activations " + q(dir / "a.mhd") + " --gradients " +
                                 q(dir / "g.mhd") + " --out " + q(dir / "h.mhd")),
            0);
  const auto h = io::read_heatmap(dir / "h.mhd");
  std::vector<double> summed(16);
  for (std::size_t i = 0; i < 16; ++i) summed[i] = act[i] + act[16 + i];
  const double mx = *std::max_element(summed.begin(), summed.end());
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(h.values()[i], summed[i] / mx, 1e-15);

  ASSERT_EQ(testkit::run_command(cli() + " gradcam --activations " + q(dir / "a.mhd") + " --gradients " +
                                 q(dir / "g.mhd") + " --target 8,8,1 --out " + q(dir / "up.mhd")),
            0);
  const auto up = io::read_heatmap(dir / "up.mhd");
  EXPECT_EQ(up.dims(), (Dims{8, 8, 1}));
  EXPECT_EQ(up.max(), 1.0);

  io::write_volume(posthoc::FeatureTensor(2, {2, 8, 1}, 2, std::vector<double>(32, 0.25)), dir / "bad.mhd");
  EXPECT_EQ(testkit::run_command(cli() + " gradcam --activations " + q(dir / "a.mhd") + " --gradients " +
                                 q(dir / "bad.mhd") + " --out " + q(dir / "x.mhd")),
            1);
}

TEST(Cli, PhantomReproducibleAndRejectsBadSpecs) {
  testkit::TempDir dir("cli");
  auto s = small_spec("r", 5);
  s.perturbation = {{1, 0, 0}, 1, 0.1};
  write_specs(dir / "s.json", {s});
  ASSERT_EQ(testkit::run_command(cli() + " phantom --spec " + q(dir / "s.json") + " --out " + q(dir / "a")), 0);
  ASSERT_EQ(testkit::run_command(cli() + " phantom --spec " + q(dir / "s.json") + " --out " + q(dir / "b")), 0);
  for (const auto& e : fs::directory_iterator(dir / "a")) EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / e.path().filename()));

  s.primitives.push_back({io::Primitive::Kind::Sphere, 1, {0, 0, 0}, {}, 2.0, 0});
  write_specs(dir / "oob.json", {s});
  std::string out;
  EXPECT_EQ(testkit::run_command(cli() + " phantom --spec " + q(dir / "oob.json") + " --out " + q(dir / "c"), &out), 1);
  EXPECT_NE(out.find("does not fit"), std::string::npos) << out;
  std::ofstream(dir / "broken.json") << "{\"dims\": [4, 4";
  EXPECT_EQ(testkit::run_command(cli() + " phantom --spec " + q(dir / "broken.json") + " --out " + q(dir / "d")), 1);
}
