#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "airwayseg/metrics.hpp"
#include "airwayseg/posthoc.hpp"
#include "airwayseg/stats.hpp"
#include "airwayseg/volgrid.hpp"

namespace airwayseg::io {

enum class ElementType { UInt8, Float64 };

/// What a volume file holds; written as the `ContentKind` header key.
enum class ContentKind { Labels, Probabilities, Tensor, Heatmap, Variance };

std::string to_string(ContentKind kind);

/// Parsed detached MetaImage-style header (.mhd) describing a raw payload.
struct VolumeHeader {
  int ndims = 3;
  std::vector<std::size_t> dim_sizes;
  std::vector<double> spacing;
  ElementType element_type = ElementType::UInt8;
  ContentKind kind = ContentKind::Labels;
  /// Planar channel count (probabilities, tensors, variance volumes).
  std::size_t channels = 1;
  bool byte_order_msb = false;
  std::optional<ClassTable> classes;
  /// Raw payload path, resolved relative to the header's directory.
  std::filesystem::path data_file;

  std::size_t element_size() const { return element_type == ElementType::UInt8 ? 1 : 8; }
  std::size_t element_count() const;
};

VolumeHeader read_header(const std::filesystem::path& header_path);

using Volume = std::variant<LabelVolume, ProbVolume, posthoc::FeatureTensor, posthoc::Heatmap>;

/// Reads a header and its payload; the variant alternative follows ContentKind
/// (variance volumes come back as ProbVolume).
Volume read_volume(const std::filesystem::path& header_path);

LabelVolume read_labels(const std::filesystem::path& header_path);
ProbVolume read_probabilities(const std::filesystem::path& header_path);
posthoc::FeatureTensor read_tensor(const std::filesystem::path& header_path);
posthoc::Heatmap read_heatmap(const std::filesystem::path& header_path);

/// Writes `<stem>.mhd` + `<stem>.raw` next to each other. The header path
/// must end in .mhd.
void write_volume(const LabelVolume& v, const std::filesystem::path& header_path);
void write_volume(const ProbVolume& v, const std::filesystem::path& header_path,
                  ContentKind kind = ContentKind::Probabilities);
void write_volume(const posthoc::FeatureTensor& t, const std::filesystem::path& header_path);
void write_volume(const posthoc::Heatmap& h, const std::filesystem::path& header_path);

struct PftRow {
  std::string case_id;
  double fev1_percent = 0.0;
};

struct PftTable {
  std::vector<PftRow> rows;
  std::map<std::string, double> by_case() const;
};

/// CSV with header `case_id,fev1_percent`.
PftTable read_pft_csv(const std::filesystem::path& path);

enum class ReportFormat { Json, Csv };

/// Active flag values echoed into a report, in insertion order.
using ReportMetadata = std::vector<std::pair<std::string, std::string>>;

/// Reals are written with 6 significant digits.
std::string format_real(double v);

void write_report(const metrics::CaseReport& report, const std::filesystem::path& path, ReportFormat format,
                  const ReportMetadata& meta = {});
void write_report(const metrics::AggregateReport& report, const std::filesystem::path& path, ReportFormat format,
                  const ReportMetadata& meta = {});
void write_report(const std::vector<stats::CorrelationRow>& rows, const std::filesystem::path& path,
                  ReportFormat format, const ReportMetadata& meta = {});
void write_report(const posthoc::VarianceSummary& summary, const std::filesystem::path& path, ReportFormat format,
                  const ReportMetadata& meta = {});
/// Expected-metric card of a synthetic case.
void write_report(const std::vector<metrics::MetricRow>& rows, const std::filesystem::path& path, ReportFormat format,
                  const ReportMetadata& meta = {});

/// Serialised forms, exposed for diffing and tests.
std::string render_report(const metrics::CaseReport& report, ReportFormat format, const ReportMetadata& meta = {});
std::string render_report(const metrics::AggregateReport& report, ReportFormat format, const ReportMetadata& meta = {});
std::string render_report(const std::vector<stats::CorrelationRow>& rows, ReportFormat format,
                          const ReportMetadata& meta = {});
std::string render_report(const posthoc::VarianceSummary& summary, ReportFormat format,
                          const ReportMetadata& meta = {});
std::string render_report(const std::vector<metrics::MetricRow>& rows, ReportFormat format,
                          const ReportMetadata& meta = {});

/// Reads the rows of a case report or expected card written as JSON.
std::vector<metrics::MetricRow> read_metric_rows(const std::filesystem::path& path);

}  // namespace airwayseg::io
