#include <cstdio>
#include <fstream>
#include <sstream>

#include "airwayseg/error.hpp"
#include "airwayseg/volio.hpp"
#include "json.hpp"

namespace airwayseg::io {
namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

namespace {

ordered_json real(double v) { return std::stod(format_real(v)); }

ordered_json metric_json(const metrics::MetricValue& m) {
  ordered_json j;
  if (m.defined()) {
    j["value"] = real(*m.value);
  } else {
    j["value"] = nullptr;
    j["reason"] = m.reason;
  }
  return j;
}

std::string metric_csv(const metrics::MetricValue& m) {
  return m.defined() ? format_real(*m.value) : "null(" + m.reason + ")";
}

ordered_json meta_json(const ReportMetadata& meta) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : meta) j[k] = v;
  return j;
}

// Keys the report already wrote as its own fields are not repeated.
void meta_csv(std::ostringstream& os, const ReportMetadata& meta) {
  for (const auto& [k, v] : meta) {
    const std::string written = "\n" + os.str();
    if (written.find("\n# " + k + "=") != std::string::npos) continue;
    os << "# " << k << "=" << v << "\n";
  }
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

ordered_json row_json(const metrics::MetricRow& r) {
  ordered_json j;
  j["class_id"] = r.class_id;
  j["class"] = r.class_name;
  j["gt_voxels"] = r.gt_voxels;
  j["pred_voxels"] = r.pred_voxels;
  j["dice"] = metric_json(r.dice);
  j["nsd"] = metric_json(r.nsd);
  j["sensitivity"] = metric_json(r.sensitivity);
  j["specificity"] = metric_json(r.specificity);
  j["auc"] = metric_json(r.auc);
  return j;
}

void rows_csv(std::ostringstream& os, const std::vector<metrics::MetricRow>& rows) {
  os << "class_id,class,dice,nsd,sensitivity,specificity,auc,gt_voxels,pred_voxels\n";
  for (const auto& r : rows) {
    os << r.class_id << ',' << csv_field(r.class_name) << ',' << metric_csv(r.dice) << ',' << metric_csv(r.nsd) << ','
       << metric_csv(r.sensitivity) << ',' << metric_csv(r.specificity) << ',' << metric_csv(r.auc) << ','
       << r.gt_voxels << ',' << r.pred_voxels << "\n";
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("cannot write " + path.string());
}

std::string finish_json(const ordered_json& j) { return j.dump(2) + "\n"; }

metrics::MetricValue metric_from_json(const nlohmann::json& j) {
  if (j.at("value").is_null()) return metrics::MetricValue::undefined(j.value("reason", std::string{}));
  return metrics::MetricValue::of(j.at("value").get<double>());
}

}  // namespace

std::string render_report(const metrics::CaseReport& report, ReportFormat format, const ReportMetadata& meta) {
  if (report.rows.empty()) throw Error("refusing to write a case report without rows");
  if (format == ReportFormat::Json) {
    ordered_json j;
    j["kind"] = "case";
    j["case_id"] = report.case_id;
    j["metadata"] = meta_json(meta);
    j["region_used"] = report.region_used;
    j["tolerance_mm"] = real(report.tolerance_mm);
    j["auc_computed"] = report.auc_computed;
    j["auc_max_per_class"] = report.auc_max_per_class;
    j["rows"] = ordered_json::array();
    for (const auto& r : report.rows) j["rows"].push_back(row_json(r));
    return finish_json(j);
  }
  std::ostringstream os;
  os << "# case_id=" << report.case_id << "\n";
  os << "# region_used=" << (report.region_used ? "true" : "false") << "\n";
  os << "# tolerance_mm=" << format_real(report.tolerance_mm) << "\n";
  meta_csv(os, meta);
  rows_csv(os, report.rows);
  return os.str();
}

std::string render_report(const metrics::AggregateReport& report, ReportFormat format, const ReportMetadata& meta) {
  if (report.case_count == 0) throw Error("refusing to write an aggregate over zero cases");
  const auto ids = report.classes.foreground_ids();
  if (format == ReportFormat::Json) {
    ordered_json j;
    j["kind"] = "aggregate";
    j["case_count"] = report.case_count;
    j["metadata"] = meta_json(meta);
    j["region_used"] = report.region_used;
    j["tolerance_mm"] = real(report.tolerance_mm);
    j["classes"] = ordered_json::array();
    for (auto id : ids) j["classes"].push_back(report.classes.name(id));
    j["table"] = ordered_json::array();
    for (auto kind : metrics::kAllMetrics) {
      ordered_json row;
      row["metric"] = std::string(metrics::metric_label(kind));
      row["cells"] = ordered_json::array();
      for (std::size_t c = 0; c < ids.size(); ++c) {
        const auto& cell = report.cell(kind, c);
        ordered_json cj;
        cj["class"] = report.classes.name(ids[c]);
        if (cell.mean) {
          cj["value"] = real(*cell.mean);
        } else {
          cj["value"] = nullptr;
          cj["reason"] = "no defined cases";
        }
        cj["defined_cases"] = cell.defined_cases;
        cj["excluded_cases"] = cell.excluded_cases;
        row["cells"].push_back(cj);
      }
      const auto avg = report.avg(kind);
      row["avg"] = avg ? metric_json(metrics::MetricValue::of(*avg))
                       : metric_json(metrics::MetricValue::undefined("no defined classes"));
      j["table"].push_back(row);
    }
    return finish_json(j);
  }
  std::ostringstream os;
  os << "# case_count=" << report.case_count << "\n";
  os << "# region_used=" << (report.region_used ? "true" : "false") << "\n";
  os << "# tolerance_mm=" << format_real(report.tolerance_mm) << "\n";
  meta_csv(os, meta);
  os << "Metric";
  for (auto id : ids) os << ',' << csv_field(report.classes.name(id));
  os << ",Avg\n";
  for (auto kind : metrics::kAllMetrics) {
    os << metrics::metric_label(kind);
    for (std::size_t c = 0; c < ids.size(); ++c) {
      const auto& cell = report.cell(kind, c);
      os << ',' << (cell.mean ? format_real(*cell.mean) : "null(no defined cases)");
    }
    const auto avg = report.avg(kind);
    os << ',' << (avg ? format_real(*avg) : "null(no defined classes)") << "\n";
  }
  return os.str();
}

std::string render_report(const std::vector<stats::CorrelationRow>& rows, ReportFormat format,
                          const ReportMetadata& meta) {
  if (rows.empty()) throw Error("refusing to write an empty correlation report");
  if (format == ReportFormat::Json) {
    ordered_json j;
    j["kind"] = "correlation";
    j["metadata"] = meta_json(meta);
    j["rows"] = ordered_json::array();
    for (const auto& r : rows) {
      ordered_json rj;
      rj["class_id"] = r.class_id;
      rj["class"] = r.class_name;
      if (r.result) {
        rj["rho"] = real(r.result->rho);
        rj["p_value"] = real(r.result->p_value);
        rj["n"] = r.result->n;
        rj["method"] = stats::to_string(r.result->method);
        rj["sidedness"] = stats::to_string(r.result->sidedness);
      } else {
        rj["rho"] = nullptr;
        rj["p_value"] = nullptr;
        rj["reason"] = r.reason;
      }
      j["rows"].push_back(rj);
    }
    return finish_json(j);
  }
  std::ostringstream os;
  meta_csv(os, meta);
  os << "class_id,class,rho,p_value,n,method,sidedness\n";
  for (const auto& r : rows) {
    os << r.class_id << ',' << csv_field(r.class_name) << ',';
    if (r.result) {
      os << format_real(r.result->rho) << ',' << format_real(r.result->p_value) << ',' << r.result->n << ','
         << stats::to_string(r.result->method) << ',' << stats::to_string(r.result->sidedness) << "\n";
    } else {
      os << "null(" << r.reason << "),null(" << r.reason << "),,,\n";
    }
  }
  return os.str();
}

std::string render_report(const posthoc::VarianceSummary& s, ReportFormat format, const ReportMetadata& meta) {
  if (s.members < 2 || s.per_class_mean.empty()) throw Error("refusing to write an empty variance summary");
  const char* estimator = s.estimator == posthoc::VarianceEstimator::Population ? "population" : "sample";
  if (format == ReportFormat::Json) {
    ordered_json j;
    j["kind"] = "variance";
    j["metadata"] = meta_json(meta);
    j["members"] = s.members;
    j["estimator"] = estimator;
    j["region_used"] = s.region_used;
    j["per_class_mean"] = ordered_json::array();
    for (double v : s.per_class_mean) j["per_class_mean"].push_back(real(v));
    j["global_mean"] = real(s.global_mean);
    j["global_std"] = real(s.global_std);
    j["max_variance"] = real(s.max_variance);
    return finish_json(j);
  }
  std::ostringstream os;
  os << "# members=" << s.members << "\n# estimator=" << estimator << "\n";
  os << "# region_used=" << (s.region_used ? "true" : "false") << "\n";
  meta_csv(os, meta);
  os << "channel,mean_variance\n";
  for (std::size_t c = 0; c < s.per_class_mean.size(); ++c) os << c << ',' << format_real(s.per_class_mean[c]) << "\n";
  os << "global," << format_real(s.global_mean) << "\n";
  os << "global_std," << format_real(s.global_std) << "\n";
  os << "max," << format_real(s.max_variance) << "\n";
  return os.str();
}

std::string render_report(const std::vector<metrics::MetricRow>& rows, ReportFormat format,
                          const ReportMetadata& meta) {
  if (rows.empty()) throw Error("refusing to write an empty metric card");
  if (format == ReportFormat::Json) {
    ordered_json j;
    j["kind"] = "expected";
    j["metadata"] = meta_json(meta);
    j["rows"] = ordered_json::array();
    for (const auto& r : rows) j["rows"].push_back(row_json(r));
    return finish_json(j);
  }
  std::ostringstream os;
  meta_csv(os, meta);
  rows_csv(os, rows);
  return os.str();
}

void write_report(const metrics::CaseReport& r, const fs::path& p, ReportFormat f, const ReportMetadata& m) {
  write_text(p, render_report(r, f, m));
}
void write_report(const metrics::AggregateReport& r, const fs::path& p, ReportFormat f, const ReportMetadata& m) {
  write_text(p, render_report(r, f, m));
}
void write_report(const std::vector<stats::CorrelationRow>& r, const fs::path& p, ReportFormat f,
                  const ReportMetadata& m) {
  write_text(p, render_report(r, f, m));
}
void write_report(const posthoc::VarianceSummary& r, const fs::path& p, ReportFormat f, const ReportMetadata& m) {
  write_text(p, render_report(r, f, m));
}
void write_report(const std::vector<metrics::MetricRow>& r, const fs::path& p, ReportFormat f,
                  const ReportMetadata& m) {
  write_text(p, render_report(r, f, m));
}

std::vector<metrics::MetricRow> read_metric_rows(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    std::vector<metrics::MetricRow> rows;
    for (const auto& rj : j.at("rows")) {
      metrics::MetricRow r;
      r.class_id = rj.at("class_id").get<int>();
      r.class_name = rj.at("class").get<std::string>();
      r.gt_voxels = rj.at("gt_voxels").get<std::uint64_t>();
      r.pred_voxels = rj.at("pred_voxels").get<std::uint64_t>();
      r.dice = metric_from_json(rj.at("dice"));
      r.nsd = metric_from_json(rj.at("nsd"));
      r.sensitivity = metric_from_json(rj.at("sensitivity"));
      r.specificity = metric_from_json(rj.at("specificity"));
      r.auc = metric_from_json(rj.at("auc"));
      rows.push_back(std::move(r));
    }
    return rows;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace airwayseg::io
