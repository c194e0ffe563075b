#pragma once

#include <optional>
#include <string>

#include "json.hpp"

#include "adw/eval.hpp"

namespace adw {

using Json = nlohmann::ordered_json;

const char* criterion_name(ThresholdCriterion criterion);
ThresholdCriterion criterion_from_name(const std::string& name);

// A risk report plus the replication envelope the protocol command wraps
// around it: detector kind, dataset path, the effective config echo, and
// content hashes. This is the unit the report JSON file stores.
struct ReportDocument {
  std::string detector = "flow";
  std::string dataset;
  std::string config_hash;  // 16 hex digits
  std::string input_hash;
  Json effective_config = Json::object();
  RiskReport report;
  std::optional<ProtocolFailure> failure;
};

// Stable key order; doubles keep full precision, non-finite values (a tau of
// +-inf is legitimate) are encoded as the strings "inf"/"-inf"/"nan".
// Re-serializing a parsed document is byte-identical.
Json report_to_json(const ReportDocument& doc);
ReportDocument report_from_json(const Json& j);

// "%.6g", with "inf"/"-inf"/"nan" for non-finite values.
std::string fmt_g6(double v);

// One-row summary table (model, dataset, AUROC, CI) in the layout the
// protocol command prints.
std::string render_table(const ReportDocument& doc);
std::string render_markdown(const ReportDocument& doc);

// Deterministic, self-contained SVGs: same document, same bytes.
std::string render_roc_svg(const ReportDocument& doc);
std::string render_score_histogram_svg(const ReportDocument& doc);
std::string render_metric_bars_svg(const ReportDocument& doc);

}  // namespace adw
