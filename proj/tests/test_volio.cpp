#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "airwayseg/error.hpp"
#include "airwayseg/volio.hpp"
#include "malformed_headers.hpp"
#include "test_util.hpp"

using namespace airwayseg;
using namespace airwayseg::io;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

template <class T>
std::string bytes_of(std::span<const T> v) {
  return std::string(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
}

Dims degenerate_or_random(XorShift64Star& rng, int t) {
  if (t == 0) return {1, 1, 1};
  if (t == 1) return {7, 5, 1};
  if (t == 2) return {1, 1, 9};
  return testkit::random_dims(rng, 9);
}

double odd_value(XorShift64Star& rng) {
  switch (rng.below(6)) {
    case 0: return 0.0;
    case 1: return 1.0;
    case 2: return 4.9406564584124654e-324;
    case 3: return std::nextafter(1.0, 0.0);
    default: return rng.uniform();
  }
}

}  // namespace

TEST(Volume, MinimalLabelFixture) {
  testkit::TempDir dir("volio");
  spit(dir / "m.mhd", "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\nElementType = MET_UCHAR\n"
                      "ElementDataFile = m.raw\n");
  spit(dir / "m.raw", std::string("\0\1\2\3\4\5\0\1", 8));
  const auto v = read_labels(dir / "m.mhd");
  EXPECT_EQ(v.dims(), (Dims{2, 2, 2}));
  EXPECT_EQ(std::vector<std::uint8_t>(v.labels().begin(), v.labels().end()),
            (std::vector<std::uint8_t>{0, 1, 2, 3, 4, 5, 0, 1}));
  EXPECT_EQ(v.classes(), ClassTable::lesion_defaults());
}

TEST(Volume, LabelRoundTripBitExact) {
  XorShift64Star rng(1);
  testkit::TempDir dir("volio");
  for (int t = 0; t < 50; ++t) {
    const Dims d = degenerate_or_random(rng, t);
    const auto classes = ClassTable::numbered(1 + rng.below(9));
    std::vector<std::uint8_t> labels(d.count());
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(classes.size()));
    const LabelVolume v(d, testkit::random_spacing(rng), labels, classes);
    const auto path = dir / ("l" + std::to_string(t) + ".mhd");
    write_volume(v, path);
    EXPECT_EQ(read_labels(path), v);
    EXPECT_EQ(slurp(dir / ("l" + std::to_string(t) + ".raw")), bytes_of(v.labels()));
  }
}

TEST(Volume, ProbabilityAndVarianceRoundTripBitExact) {
  XorShift64Star rng(2);
  testkit::TempDir dir("volio");
  for (int t = 0; t < 50; ++t) {
    const Dims d = degenerate_or_random(rng, t);
    const std::size_t c = 1 + rng.below(4);
    std::vector<double> vals(d.count() * c);
    for (auto& x : vals) x = odd_value(rng);
    const ProbVolume v(d, testkit::random_spacing(rng), c, vals);
    const auto path = dir / ("p" + std::to_string(t) + ".mhd");
    write_volume(v, path, t % 2 ? ContentKind::Variance : ContentKind::Probabilities);
    const auto back = std::get<ProbVolume>(read_volume(path));
    EXPECT_EQ(back, v);
    EXPECT_EQ(slurp(dir / ("p" + std::to_string(t) + ".raw")), bytes_of(v.values()));
  }
}

TEST(Volume, TensorAndHeatmapRoundTripBitExact) {
  XorShift64Star rng(3);
  testkit::TempDir dir("volio");
  for (int t = 0; t < 50; ++t) {
    Dims d = degenerate_or_random(rng, t);
    const int rank = t % 2 ? 3 : 2;
    if (rank == 2) d.nz = 1;
    const std::size_t c = 1 + rng.below(4);
    std::vector<double> vals(d.count() * c);
    for (auto& x : vals) x = (rng.uniform() - 0.5) * std::pow(10.0, static_cast<double>(rng.below(20)) - 10);
    const posthoc::FeatureTensor ft(c, d, rank, vals, testkit::random_spacing(rng));
    write_volume(ft, dir / "t.mhd");
    EXPECT_EQ(read_tensor(dir / "t.mhd"), ft);
    EXPECT_EQ(slurp(dir / "t.raw"), bytes_of(ft.values()));

    std::vector<double> hv(d.count());
    for (auto& x : hv) x = std::abs(odd_value(rng)) * 3;
    const posthoc::Heatmap h(d, rank, hv, testkit::random_spacing(rng));
    write_volume(h, dir / "h.mhd");
    EXPECT_EQ(read_heatmap(dir / "h.mhd"), h);
    EXPECT_EQ(slurp(dir / "h.raw"), bytes_of(h.values()));
  }
}

TEST(Volume, AnisotropicSpacingKeepsFullPrecision) {
  testkit::TempDir dir("volio");
  const VoxelSpacing s(0.1 + 0.2, 1.0 / 3.0, 2.0 / 7.0);
  const LabelVolume v({2, 1, 1}, s, {0, 1});
  write_volume(v, dir / "s.mhd");
  EXPECT_EQ(read_labels(dir / "s.mhd").spacing(), s);
}

TEST(Volume, ReaderAcceptsBigEndianDoubles) {
  testkit::TempDir dir("volio");
  spit(dir / "b.mhd", "NDims = 3\nDimSize = 1 1 1\nElementType = MET_DOUBLE\nBinaryDataByteOrderMSB = True\n"
                      "ElementDataFile = b.raw\n");
  spit(dir / "b.raw", std::string("\x3f\xe0\0\0\0\0\0\0", 8));
  EXPECT_EQ(read_probabilities(dir / "b.mhd").values()[0], 0.5);
}

TEST(Volume, WrongKindRequested) {
  testkit::TempDir dir("volio");
  write_volume(LabelVolume({1, 1, 1}, {}, {0}), dir / "x.mhd");
  EXPECT_THROW(read_probabilities(dir / "x.mhd"), FormatError);
}

TEST(Volume, HeaderPathMustEndInMhd) {
  testkit::TempDir dir("volio");
  EXPECT_THROW(write_volume(LabelVolume({1, 1, 1}, {}, {0}), dir / "x.raw"), Error);
}

TEST(Volume, MalformedHeadersReportSpecificErrors) {
  testkit::TempDir dir("volio");
  for (const auto& c : testkit::malformed_header_cases()) {
    const auto sub = dir / c.name;
    fs::create_directories(sub);
    spit(sub / "v.mhd", c.header);
    spit(sub / "v.raw", c.payload);
    try {
      read_volume(sub / "v.mhd");
      ADD_FAILURE() << c.name << ": no error";
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find(c.expected_error), std::string::npos)
          << c.name << ": got '" << e.what() << "'";
    } catch (const std::exception& e) {
      ADD_FAILURE() << c.name << ": wrong exception type: " << e.what();
    }
  }
}

TEST(Volume, HeaderErrorsNameLine) {
  testkit::TempDir dir("volio");
  spit(dir / "v.mhd", "NDims = 3\nDimSize = 2 2 2\nElementSpacing = 1 zero 1\nElementType = MET_UCHAR\n"
                      "ElementDataFile = v.raw\n");
  try {
    read_header(dir / "v.mhd");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3: field 'ElementSpacing'"), std::string::npos) << e.what();
  }
}

TEST(Pft, ValidFile) {
  testkit::TempDir dir("pft");
  spit(dir / "p.csv", "case_id,fev1_percent\na01,85.5\na02,40\n");
  const auto t = read_pft_csv(dir / "p.csv");
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0].case_id, "a01");
  EXPECT_EQ(t.by_case().at("a02"), 40.0);
}

TEST(Pft, ExtraColumnsAnyOrder) {
  testkit::TempDir dir("pft");
  spit(dir / "p.csv", "\xEF\xBB\xBFsite,fev1_percent,case_id\r\nx,70,b1\r\n");
  EXPECT_EQ(read_pft_csv(dir / "p.csv").by_case().at("b1"), 70.0);
}

TEST(Pft, Errors) {
  testkit::TempDir dir("pft");
  auto error_of = [&](const std::string& text) -> std::string {
    spit(dir / "e.csv", text);
    try {
      read_pft_csv(dir / "e.csv");
    } catch (const FormatError& e) {
      return e.what();
    }
    return "";
  };
  EXPECT_NE(error_of("case_id,fev1_percent\na,50\na,60\n").find("duplicate case_id 'a'"), std::string::npos);
  EXPECT_NE(error_of("case_id,fev1_percent\na,abc\n").find("line 2: fev1_percent 'abc' is not a number"),
            std::string::npos);
  EXPECT_NE(error_of("case,fev1\na,50\n").find("case_id and fev1_percent"), std::string::npos);
  EXPECT_NE(error_of("case_id,fev1_percent\na,0\n").find("outside (0, 200]"), std::string::npos);
  EXPECT_NE(error_of("case_id,fev1_percent\na\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("").find("missing header"), std::string::npos);
}

namespace {

metrics::AggregateReport sample_aggregate() {
  metrics::CaseReport r;
  r.case_id = "c1";
  for (int id = 1; id <= 5; ++id) {
    metrics::MetricRow row;
    row.class_id = id;
    row.class_name = r.classes.name(id);
    row.dice = metrics::MetricValue::of(0.1 * id);
    row.nsd = metrics::MetricValue::of(2.0 / 3.0);
    row.sensitivity = metrics::MetricValue::of(1.0);
    row.specificity = metrics::MetricValue::of(0.999);
    row.auc = id == 5 ? metrics::MetricValue::undefined("no positives") : metrics::MetricValue::of(0.5);
    r.rows.push_back(row);
  }
  return metrics::aggregate({r});
}

}  // namespace

TEST(Report, AggregateCsvHasMetricRowsAndClassColumns) {
  const auto csv = render_report(sample_aggregate(), ReportFormat::Csv, {{"tolerance_mm", "1.8"}, {"auc", "on"}});
  const std::string expected =
      "# case_count=1\n"
      "# region_used=false\n"
      "# tolerance_mm=1.8\n"
      "# auc=on\n"
      "Metric,Bronchiectasis,Peribronchial Thickening,Bronchial mucus,Bronchiolar mucus,Consolidation,Avg\n"
      "Dice,0.1,0.2,0.3,0.4,0.5,0.3\n"
      "NSD,0.666667,0.666667,0.666667,0.666667,0.666667,0.666667\n"
      "Sensibility,1,1,1,1,1,1\n"
      "Specificity,0.999,0.999,0.999,0.999,0.999,0.999\n"
      "AUC,0.5,0.5,0.5,0.5,null(no defined cases),0.5\n";
  EXPECT_EQ(csv, expected);
}

TEST(Report, UndefinedValuesAreExplicitInJson) {
  metrics::CaseReport r;
  r.case_id = "u";
  metrics::MetricRow row;
  row.class_id = 1;
  row.class_name = "Bronchiectasis";
  row.dice = metrics::MetricValue::undefined("both empty");
  r.rows.push_back(row);
  const auto json = render_report(r, ReportFormat::Json);
  EXPECT_NE(json.find("\"dice\": {\n        \"value\": null,\n        \"reason\": \"both empty\""), std::string::npos)
      << json;
}

TEST(Report, CorrelationCsvColumns) {
  std::vector<stats::CorrelationRow> rows(2);
  rows[0] = {1, "Bronchiectasis", stats::CorrelationResult{-0.46, 0.0206857, 25, stats::PValueMethod::TApproximation,
                                                           stats::Sidedness::TwoSided},
             ""};
  rows[1] = {2, "Consolidation", std::nullopt, "undefined correlation"};
  const auto csv = render_report(rows, ReportFormat::Csv);
  EXPECT_EQ(csv,
            "class_id,class,rho,p_value,n,method,sidedness\n"
            "1,Bronchiectasis,-0.46,0.0206857,25,t-approximation,two-sided\n"
            "2,Consolidation,null(undefined correlation),null(undefined correlation),,,\n");
}

TEST(Report, EmptyInputsRefused) {
  testkit::TempDir dir("report");
  EXPECT_THROW(write_report(std::vector<stats::CorrelationRow>{}, dir / "c.csv", ReportFormat::Csv), Error);
  EXPECT_THROW(write_report(metrics::AggregateReport{}, dir / "a.json", ReportFormat::Json), Error);
  EXPECT_THROW(write_report(metrics::CaseReport{}, dir / "r.json", ReportFormat::Json), Error);
  EXPECT_THROW(write_report(std::vector<metrics::MetricRow>{}, dir / "e.json", ReportFormat::Json), Error);
  EXPECT_FALSE(fs::exists(dir / "c.csv"));
  EXPECT_FALSE(fs::exists(dir / "a.json"));
}

TEST(Report, UnwritablePathThrows) {
  EXPECT_THROW(write_report(sample_aggregate(), "/nonexistent-dir/x/a.json", ReportFormat::Json), Error);
}

TEST(Report, MetricRowsRoundTripThroughJson) {
  testkit::TempDir dir("report");
  metrics::CaseReport r;
  r.case_id = "rt";
  metrics::MetricRow row;
  row.class_id = 3;
  row.class_name = "Bronchial mucus";
  row.dice = metrics::MetricValue::of(0.25);
  row.nsd = metrics::MetricValue::undefined("both empty");
  row.gt_voxels = 12;
  r.rows.push_back(row);
  write_report(r, dir / "r.json", ReportFormat::Json);
  const auto back = read_metric_rows(dir / "r.json");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].dice, row.dice);
  EXPECT_EQ(back[0].nsd, row.nsd);
  EXPECT_EQ(back[0].gt_voxels, 12u);
}

TEST(Report, SixSignificantDigits) {
  EXPECT_EQ(format_real(2.0 / 3.0), "0.666667");
  EXPECT_EQ(format_real(1.0), "1");
  EXPECT_EQ(format_real(1.23456789e-7), "1.23457e-07");
}
