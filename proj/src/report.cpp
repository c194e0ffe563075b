#include "adw/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <initializer_list>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "adw/errors.hpp"

namespace adw {

const char* criterion_name(ThresholdCriterion criterion) {
  switch (criterion) {
    case ThresholdCriterion::youden: return "youden";
    case ThresholdCriterion::sensitivity_specificity: return "sensitivity_specificity";
    case ThresholdCriterion::cost_based: return "cost_based";
  }
  throw ValidationError("unknown threshold criterion value");
}

ThresholdCriterion criterion_from_name(const std::string& name) {
  if (name == "youden") return ThresholdCriterion::youden;
  if (name == "sensitivity_specificity") return ThresholdCriterion::sensitivity_specificity;
  if (name == "cost_based") return ThresholdCriterion::cost_based;
  throw ValidationError("unknown threshold criterion \"" + name + "\"");
}

std::string fmt_g6(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

namespace {

Json json_number(double v) {
  if (std::isfinite(v)) return Json(v);
  if (std::isnan(v)) return Json("nan");
  return Json(v > 0 ? "inf" : "-inf");
}

double number_from(const Json& j, const std::string& what) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw ValidationError("report: " + what + " is not a number");
}

const Json& require(const Json& j, const char* key, const char* what) {
  auto it = j.find(key);
  if (it == j.end())
    throw ValidationError("report: missing key \"" + std::string(key) + "\" in " + what);
  return *it;
}

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) throw ValidationError("report: " + std::string(what) + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) known = known || it.key() == k;
    if (!known)
      throw ValidationError("report: unknown key \"" + it.key() + "\" in " + what);
  }
}

Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> opt_from(const Json& j, const std::string& what) {
  if (j.is_null()) return std::nullopt;
  return number_from(j, what);
}

Json metrics_to_json(const ConfusionMetrics& m) {
  Json j = Json::object();
  j["tp"] = m.tp;
  j["fp"] = m.fp;
  j["fn"] = m.fn;
  j["tn"] = m.tn;
  j["tpr"] = opt_json(m.tpr);
  j["fpr"] = opt_json(m.fpr);
  j["precision"] = opt_json(m.precision);
  j["recall"] = opt_json(m.recall);
  j["f1"] = opt_json(m.f1);
  j["accuracy"] = opt_json(m.accuracy);
  j["balanced_accuracy"] = opt_json(m.balanced_accuracy);
  return j;
}

ConfusionMetrics metrics_from_json(const Json& j) {
  check_keys(j,
             {"tp", "fp", "fn", "tn", "tpr", "fpr", "precision", "recall", "f1", "accuracy",
              "balanced_accuracy"},
             "metrics");
  ConfusionMetrics m;
  m.tp = require(j, "tp", "metrics").get<long long>();
  m.fp = require(j, "fp", "metrics").get<long long>();
  m.fn = require(j, "fn", "metrics").get<long long>();
  m.tn = require(j, "tn", "metrics").get<long long>();
  m.tpr = opt_from(require(j, "tpr", "metrics"), "tpr");
  m.fpr = opt_from(require(j, "fpr", "metrics"), "fpr");
  m.precision = opt_from(require(j, "precision", "metrics"), "precision");
  m.recall = opt_from(require(j, "recall", "metrics"), "recall");
  m.f1 = opt_from(require(j, "f1", "metrics"), "f1");
  m.accuracy = opt_from(require(j, "accuracy", "metrics"), "accuracy");
  m.balanced_accuracy = opt_from(require(j, "balanced_accuracy", "metrics"), "balanced_accuracy");
  return m;
}

Json scores_to_json(const std::vector<ScoreRecord>& records) {
  Json arr = Json::array();
  for (const ScoreRecord& r : records) {
    Json j = Json::object();
    j["sample_id"] = r.sample_id;
    j["label"] = label_name(r.label);
    j["score"] = r.score;
    arr.push_back(std::move(j));
  }
  return arr;
}

Label label_from(const std::string& name) {
  if (name == "nominal") return Label::nominal;
  if (name == "anomalous") return Label::anomalous;
  throw ValidationError("report: unknown label \"" + name + "\"");
}

std::vector<ScoreRecord> scores_from_json(const Json& arr, const char* what) {
  if (!arr.is_array()) throw ValidationError("report: " + std::string(what) + " must be an array");
  std::vector<ScoreRecord> out;
  out.reserve(arr.size());
  for (const Json& j : arr) {
    check_keys(j, {"sample_id", "label", "score"}, what);
    ScoreRecord r;
    r.sample_id = require(j, "sample_id", what).get<std::string>();
    r.label = label_from(require(j, "label", what).get<std::string>());
    r.score = number_from(require(j, "score", what), "score");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<double> scores_of(const std::vector<ScoreRecord>& records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const ScoreRecord& r : records) out.push_back(r.score);
  return out;
}

std::vector<Label> labels_of(const std::vector<ScoreRecord>& records) {
  std::vector<Label> out;
  out.reserve(records.size());
  for (const ScoreRecord& r : records) out.push_back(r.label);
  return out;
}

}  // namespace

Json report_to_json(const ReportDocument& doc) {
  Json j = Json::object();
  j["format"] = "adw-risk-report";
  j["version"] = 1;
  j["detector"] = doc.detector;
  j["dataset"] = doc.dataset;
  j["config_hash"] = doc.config_hash;
  j["input_hash"] = doc.input_hash;
  j["effective_config"] = doc.effective_config;

  const ProtocolConfig& pc = doc.report.config;
  Json proto = Json::object();
  proto["folds"] = pc.folds;
  proto["seed"] = pc.seed;
  proto["criterion"] = criterion_name(pc.criterion);
  proto["cost_fp"] = pc.cost_fp;
  proto["cost_fn"] = pc.cost_fn;
  proto["nominal_train_fraction"] = pc.nominal_train_fraction;
  proto["bootstrap_samples"] = pc.bootstrap_samples;
  proto["ci_level"] = pc.ci_level;
  j["protocol"] = std::move(proto);

  Json folds = Json::array();
  for (const FoldReport& f : doc.report.folds) {
    Json fj = Json::object();
    fj["fold"] = f.fold;
    fj["tau"] = json_number(f.tau);
    fj["auroc_threshold_part"] = f.auroc_threshold_part;
    fj["auroc_inference"] = f.auroc_inference;
    fj["metrics"] = metrics_to_json(f.metrics);
    fj["threshold_scores"] = scores_to_json(f.threshold_scores);
    fj["inference_scores"] = scores_to_json(f.inference_scores);
    folds.push_back(std::move(fj));
  }
  j["folds"] = std::move(folds);

  Json summary = Json::object();
  for (const auto& [name, s] : doc.report.summary) {
    Json sj = Json::object();
    sj["mean"] = s.mean;
    sj["stddev"] = s.stddev;
    sj["ci_lower"] = s.ci_lower;
    sj["ci_upper"] = s.ci_upper;
    sj["defined_folds"] = s.defined_folds;
    summary[name] = std::move(sj);
  }
  j["summary"] = std::move(summary);

  if (doc.failure) {
    Json fj = Json::object();
    fj["fold"] = doc.failure->fold;
    fj["kind"] = doc.failure->numeric ? "numeric" : "validation";
    fj["message"] = doc.failure->message;
    j["failure"] = std::move(fj);
  } else {
    j["failure"] = nullptr;
  }
  return j;
}

ReportDocument report_from_json(const Json& j) {
  check_keys(j,
             {"format", "version", "detector", "dataset", "config_hash", "input_hash",
              "effective_config", "protocol", "folds", "summary", "failure"},
             "report");
  if (require(j, "format", "report") != "adw-risk-report")
    throw ValidationError("report: format is not adw-risk-report");
  if (require(j, "version", "report") != 1)
    throw ValidationError("report: unsupported version");

  ReportDocument doc;
  doc.detector = require(j, "detector", "report").get<std::string>();
  doc.dataset = require(j, "dataset", "report").get<std::string>();
  doc.config_hash = require(j, "config_hash", "report").get<std::string>();
  doc.input_hash = require(j, "input_hash", "report").get<std::string>();
  doc.effective_config = require(j, "effective_config", "report");

  const Json& proto = require(j, "protocol", "report");
  check_keys(proto,
             {"folds", "seed", "criterion", "cost_fp", "cost_fn", "nominal_train_fraction",
              "bootstrap_samples", "ci_level"},
             "protocol");
  ProtocolConfig pc;
  pc.folds = require(proto, "folds", "protocol").get<int>();
  pc.seed = require(proto, "seed", "protocol").get<std::uint64_t>();
  pc.criterion = criterion_from_name(require(proto, "criterion", "protocol").get<std::string>());
  pc.cost_fp = number_from(require(proto, "cost_fp", "protocol"), "cost_fp");
  pc.cost_fn = number_from(require(proto, "cost_fn", "protocol"), "cost_fn");
  pc.nominal_train_fraction =
      number_from(require(proto, "nominal_train_fraction", "protocol"), "nominal_train_fraction");
  pc.bootstrap_samples = require(proto, "bootstrap_samples", "protocol").get<int>();
  pc.ci_level = number_from(require(proto, "ci_level", "protocol"), "ci_level");
  doc.report.config = pc;

  const Json& folds = require(j, "folds", "report");
  if (!folds.is_array()) throw ValidationError("report: folds must be an array");
  for (const Json& fj : folds) {
    check_keys(fj,
               {"fold", "tau", "auroc_threshold_part", "auroc_inference", "metrics",
                "threshold_scores", "inference_scores"},
               "fold");
    FoldReport f;
    f.fold = require(fj, "fold", "fold").get<int>();
    f.tau = number_from(require(fj, "tau", "fold"), "tau");
    f.auroc_threshold_part =
        number_from(require(fj, "auroc_threshold_part", "fold"), "auroc_threshold_part");
    f.auroc_inference = number_from(require(fj, "auroc_inference", "fold"), "auroc_inference");
    f.metrics = metrics_from_json(require(fj, "metrics", "fold"));
    f.threshold_scores = scores_from_json(require(fj, "threshold_scores", "fold"), "score record");
    f.inference_scores = scores_from_json(require(fj, "inference_scores", "fold"), "score record");
    doc.report.folds.push_back(std::move(f));
  }

  const Json& summary = require(j, "summary", "report");
  if (!summary.is_object()) throw ValidationError("report: summary must be an object");
  for (auto it = summary.begin(); it != summary.end(); ++it) {
    check_keys(*it, {"mean", "stddev", "ci_lower", "ci_upper", "defined_folds"}, "summary entry");
    MetricSummary s;
    s.mean = number_from(require(*it, "mean", "summary entry"), "mean");
    s.stddev = number_from(require(*it, "stddev", "summary entry"), "stddev");
    s.ci_lower = number_from(require(*it, "ci_lower", "summary entry"), "ci_lower");
    s.ci_upper = number_from(require(*it, "ci_upper", "summary entry"), "ci_upper");
    s.defined_folds = require(*it, "defined_folds", "summary entry").get<int>();
    doc.report.summary[it.key()] = s;
  }

  const Json& failure = require(j, "failure", "report");
  if (!failure.is_null()) {
    check_keys(failure, {"fold", "kind", "message"}, "failure");
    ProtocolFailure pf;
    pf.fold = require(failure, "fold", "failure").get<int>();
    const std::string kind = require(failure, "kind", "failure").get<std::string>();
    if (kind != "numeric" && kind != "validation")
      throw ValidationError("report: unknown failure kind \"" + kind + "\"");
    pf.numeric = kind == "numeric";
    pf.message = require(failure, "message", "failure").get<std::string>();
    doc.failure = std::move(pf);
  }
  return doc;
}

// ---------------------------------------------------------------------------
// rendering

namespace {

const char* kPalette[10] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Maps data coordinates onto an SVG plot rectangle (y axis flipped).
struct PlotBox {
  double x0 = 0, y0 = 0, w = 0, h = 0;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;

  double X(double x) const { return x0 + (x - xmin) / (xmax - xmin) * w; }
  double Y(double y) const { return y0 + h - (y - ymin) / (ymax - ymin) * h; }
};

void svg_open(std::ostringstream& s, int w, int h, const std::string& title) {
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" viewBox=\"0 0 " << w << " " << h << "\" font-family=\"monospace\" font-size=\"12\">\n";
  s << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"#ffffff\"/>\n";
  s << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
    << xml_escape(title) << "</text>\n";
}

void svg_frame(std::ostringstream& s, const PlotBox& p, const std::string& xlabel,
               const std::string& ylabel, int grid_steps) {
  for (int i = 0; i <= grid_steps; ++i) {
    const double fx = p.xmin + (p.xmax - p.xmin) * i / grid_steps;
    const double fy = p.ymin + (p.ymax - p.ymin) * i / grid_steps;
    s << "<line x1=\"" << fmt_g6(p.X(fx)) << "\" y1=\"" << fmt_g6(p.y0) << "\" x2=\""
      << fmt_g6(p.X(fx)) << "\" y2=\"" << fmt_g6(p.y0 + p.h)
      << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    s << "<line x1=\"" << fmt_g6(p.x0) << "\" y1=\"" << fmt_g6(p.Y(fy)) << "\" x2=\""
      << fmt_g6(p.x0 + p.w) << "\" y2=\"" << fmt_g6(p.Y(fy))
      << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    s << "<text x=\"" << fmt_g6(p.X(fx)) << "\" y=\"" << fmt_g6(p.y0 + p.h + 16)
      << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt_g6(fx) << "</text>\n";
    s << "<text x=\"" << fmt_g6(p.x0 - 6) << "\" y=\"" << fmt_g6(p.Y(fy) + 3)
      << "\" text-anchor=\"end\" font-size=\"10\">" << fmt_g6(fy) << "</text>\n";
  }
  s << "<rect x=\"" << fmt_g6(p.x0) << "\" y=\"" << fmt_g6(p.y0) << "\" width=\"" << fmt_g6(p.w)
    << "\" height=\"" << fmt_g6(p.h) << "\" fill=\"none\" stroke=\"#333333\"/>\n";
  s << "<text x=\"" << fmt_g6(p.x0 + p.w / 2) << "\" y=\"" << fmt_g6(p.y0 + p.h + 34)
    << "\" text-anchor=\"middle\">" << xml_escape(xlabel) << "</text>\n";
  s << "<text x=\"16\" y=\"" << fmt_g6(p.y0 + p.h / 2)
    << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << fmt_g6(p.y0 + p.h / 2) << ")\">"
    << xml_escape(ylabel) << "</text>\n";
}

void svg_legend_entry(std::ostringstream& s, double x, double y, const char* color,
                      const std::string& text) {
  s << "<rect x=\"" << fmt_g6(x) << "\" y=\"" << fmt_g6(y - 9) << "\" width=\"12\" height=\"12\""
    << " fill=\"" << color << "\"/>\n";
  s << "<text x=\"" << fmt_g6(x + 17) << "\" y=\"" << fmt_g6(y + 1) << "\" font-size=\"11\">"
    << xml_escape(text) << "</text>\n";
}

}  // namespace

std::string render_roc_svg(const ReportDocument& doc) {
  std::ostringstream s;
  svg_open(s, 580, 440, "ROC per fold (inference partition)");
  PlotBox p{64, 40, 330, 330, 0.0, 1.0, 0.0, 1.0};
  svg_frame(s, p, "false positive rate", "true positive rate", 4);
  s << "<line x1=\"" << fmt_g6(p.X(0)) << "\" y1=\"" << fmt_g6(p.Y(0)) << "\" x2=\""
    << fmt_g6(p.X(1)) << "\" y2=\"" << fmt_g6(p.Y(1))
    << "\" stroke=\"#999999\" stroke-dasharray=\"4 3\"/>\n";

  int drawn = 0;
  for (const FoldReport& f : doc.report.folds) {
    const RocCurve curve = roc_curve(scores_of(f.inference_scores), labels_of(f.inference_scores));
    std::string pts;
    for (const RocPoint& pt : curve.points) {
      if (!pts.empty()) pts += ' ';
      pts += fmt_g6(p.X(pt.fpr)) + "," + fmt_g6(p.Y(pt.tpr));
    }
    const char* color = kPalette[f.fold % 10];
    s << "<polyline points=\"" << pts << "\" fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"1.5\"/>\n";
    if (drawn < 12)
      svg_legend_entry(s, 412, 56.0 + 18.0 * drawn, color, "fold " + std::to_string(f.fold));
    ++drawn;
  }
  if (drawn == 0)
    s << "<text x=\"" << fmt_g6(p.x0 + p.w / 2) << "\" y=\"" << fmt_g6(p.y0 + p.h / 2)
      << "\" text-anchor=\"middle\">no folds</text>\n";
  else if (drawn > 12)
    s << "<text x=\"412\" y=\"" << fmt_g6(56.0 + 18.0 * 12) << "\" font-size=\"11\">+"
      << drawn - 12 << " more</text>\n";
  s << "</svg>\n";
  return s.str();
}

std::string render_score_histogram_svg(const ReportDocument& doc) {
  std::vector<double> nominal, anomalous;
  for (const FoldReport& f : doc.report.folds)
    for (const ScoreRecord& r : f.inference_scores)
      (r.label == Label::nominal ? nominal : anomalous).push_back(r.score);

  std::ostringstream s;
  svg_open(s, 580, 440, "Anomaly scores (inference partition)");
  if (nominal.empty() && anomalous.empty()) {
    s << "<text x=\"290\" y=\"220\" text-anchor=\"middle\">no scores</text>\n";
    s << "</svg>\n";
    return s.str();
  }

  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : nominal) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double v : anomalous) lo = std::min(lo, v), hi = std::max(hi, v);
  if (hi == lo) hi = lo + 1.0;

  const int bins = 24;
  std::vector<int> count_n(bins, 0), count_a(bins, 0);
  auto bin_of = [&](double v) {
    int b = static_cast<int>((v - lo) / (hi - lo) * bins);
    return std::clamp(b, 0, bins - 1);
  };
  for (double v : nominal) ++count_n[bin_of(v)];
  for (double v : anomalous) ++count_a[bin_of(v)];
  int ymax = 1;
  for (int i = 0; i < bins; ++i) ymax = std::max({ymax, count_n[i], count_a[i]});

  PlotBox p{64, 52, 470, 300, lo, hi, 0.0, static_cast<double>(ymax)};
  svg_frame(s, p, "score", "count", 4);

  const double bw = p.w / bins;
  for (int i = 0; i < bins; ++i) {
    const double x = p.x0 + i * bw;
    if (count_n[i] > 0) {
      const double h = count_n[i] / static_cast<double>(ymax) * p.h;
      s << "<rect x=\"" << fmt_g6(x) << "\" y=\"" << fmt_g6(p.y0 + p.h - h) << "\" width=\""
        << fmt_g6(bw / 2) << "\" height=\"" << fmt_g6(h) << "\" fill=\"#1f77b4\"/>\n";
    }
    if (count_a[i] > 0) {
      const double h = count_a[i] / static_cast<double>(ymax) * p.h;
      s << "<rect x=\"" << fmt_g6(x + bw / 2) << "\" y=\"" << fmt_g6(p.y0 + p.h - h)
        << "\" width=\"" << fmt_g6(bw / 2) << "\" height=\"" << fmt_g6(h)
        << "\" fill=\"#d62728\"/>\n";
    }
  }

  svg_legend_entry(s, 360, 44, "#1f77b4", "nominal");
  svg_legend_entry(s, 460, 44, "#d62728", "anomalous");

  if (!nominal.empty() && !anomalous.empty()) {
    const double max_n = *std::max_element(nominal.begin(), nominal.end());
    const double min_n = *std::min_element(nominal.begin(), nominal.end());
    const double max_a = *std::max_element(anomalous.begin(), anomalous.end());
    const double min_a = *std::min_element(anomalous.begin(), anomalous.end());
    double sep = 0.0;
    bool disjoint = false;
    if (max_n < min_a) {
      disjoint = true;
      sep = (max_n + min_a) / 2;
    } else if (max_a < min_n) {
      disjoint = true;
      sep = (max_a + min_n) / 2;
    }
    if (disjoint) {
      s << "<line x1=\"" << fmt_g6(p.X(sep)) << "\" y1=\"" << fmt_g6(p.y0) << "\" x2=\""
        << fmt_g6(p.X(sep)) << "\" y2=\"" << fmt_g6(p.y0 + p.h)
        << "\" stroke=\"#333333\" stroke-dasharray=\"6 4\"/>\n";
      s << "<text x=\"" << fmt_g6(p.x0 + p.w / 2) << "\" y=\"" << fmt_g6(p.y0 - 8)
        << "\" text-anchor=\"middle\" font-size=\"11\">class score ranges are disjoint"
      << "</text>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

std::string render_metric_bars_svg(const ReportDocument& doc) {
  std::ostringstream s;
  svg_open(s, 580, 440, "Per-fold AUROC");
  PlotBox p{64, 52, 330, 300, 0.0, 1.0, 0.0, 1.0};

  const int folds = static_cast<int>(doc.report.folds.size());
  // horizontal axis indexes folds; reuse the frame for the y grid only
  for (int i = 0; i <= 4; ++i) {
    const double fy = i / 4.0;
    s << "<line x1=\"" << fmt_g6(p.x0) << "\" y1=\"" << fmt_g6(p.Y(fy)) << "\" x2=\""
      << fmt_g6(p.x0 + p.w) << "\" y2=\"" << fmt_g6(p.Y(fy))
      << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    s << "<text x=\"" << fmt_g6(p.x0 - 6) << "\" y=\"" << fmt_g6(p.Y(fy) + 3)
      << "\" text-anchor=\"end\" font-size=\"10\">" << fmt_g6(fy) << "</text>\n";
  }
  s << "<rect x=\"" << fmt_g6(p.x0) << "\" y=\"" << fmt_g6(p.y0) << "\" width=\"" << fmt_g6(p.w)
    << "\" height=\"" << fmt_g6(p.h) << "\" fill=\"none\" stroke=\"#333333\"/>\n";
  s << "<text x=\"" << fmt_g6(p.x0 + p.w / 2) << "\" y=\"" << fmt_g6(p.y0 + p.h + 34)
    << "\" text-anchor=\"middle\">fold</text>\n";
  s << "<text x=\"16\" y=\"" << fmt_g6(p.y0 + p.h / 2)
    << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << fmt_g6(p.y0 + p.h / 2) << ")\">"
    << "AUROC</text>\n";

  if (folds == 0) {
    s << "<text x=\"" << fmt_g6(p.x0 + p.w / 2) << "\" y=\"" << fmt_g6(p.y0 + p.h / 2)
      << "\" text-anchor=\"middle\">no folds</text>\n";
  } else {
    const double group = p.w / folds;
    const double bar = group * 0.35;
    const int label_every = folds > 16 ? (folds + 7) / 8 : 1;
    for (int i = 0; i < folds; ++i) {
      const FoldReport& f = doc.report.folds[i];
      const double gx = p.x0 + i * group + group / 2;
      const double h_thr = std::clamp(f.auroc_threshold_part, 0.0, 1.0) * p.h;
      const double h_inf = std::clamp(f.auroc_inference, 0.0, 1.0) * p.h;
      s << "<rect x=\"" << fmt_g6(gx - bar) << "\" y=\"" << fmt_g6(p.y0 + p.h - h_thr)
        << "\" width=\"" << fmt_g6(bar) << "\" height=\"" << fmt_g6(h_thr)
        << "\" fill=\"#9ecae1\"/>\n";
      s << "<rect x=\"" << fmt_g6(gx) << "\" y=\"" << fmt_g6(p.y0 + p.h - h_inf) << "\" width=\""
        << fmt_g6(bar) << "\" height=\"" << fmt_g6(h_inf) << "\" fill=\"#3182bd\"/>\n";
      if (i % label_every == 0)
        s << "<text x=\"" << fmt_g6(gx) << "\" y=\"" << fmt_g6(p.y0 + p.h + 16)
          << "\" text-anchor=\"middle\" font-size=\"10\">" << f.fold << "</text>\n";
    }
  }

  svg_legend_entry(s, 412, 64, "#9ecae1", "threshold part");
  svg_legend_entry(s, 412, 84, "#3182bd", "inference part");
  s << "</svg>\n";
  return s.str();
}

namespace {

std::string auroc_cell(const ReportDocument& doc) {
  auto it = doc.report.summary.find("auroc_inference");
  if (it == doc.report.summary.end()) return "n/a";
  return fmt_g6(it->second.mean) + " +- " + fmt_g6(it->second.stddev);
}

std::string ci_cell(const ReportDocument& doc) {
  auto it = doc.report.summary.find("auroc_inference");
  if (it == doc.report.summary.end()) return "n/a";
  return "[" + fmt_g6(it->second.ci_lower) + ", " + fmt_g6(it->second.ci_upper) + "]";
}

std::string opt_cell(const std::optional<double>& v) { return v ? fmt_g6(*v) : "n/a"; }

}  // namespace

std::string render_table(const ReportDocument& doc) {
  const std::string ci_head = fmt_g6(doc.report.config.ci_level * 100) + "% CI";
  std::vector<std::string> head = {"model", "dataset", "AUROC (mean +- sd)", ci_head, "folds"};
  std::vector<std::string> row = {doc.detector, doc.dataset, auroc_cell(doc), ci_cell(doc),
                                  std::to_string(doc.report.folds.size())};
  std::ostringstream s;
  std::vector<std::size_t> width(head.size());
  for (std::size_t i = 0; i < head.size(); ++i) width[i] = std::max(head[i].size(), row[i].size());
  for (std::size_t i = 0; i < head.size(); ++i) {
    s << head[i] << std::string(width[i] - head[i].size() + 2, ' ');
  }
  s << "\n";
  for (std::size_t i = 0; i < row.size(); ++i) {
    s << row[i] << std::string(width[i] - row[i].size() + 2, ' ');
  }
  s << "\n";
  if (doc.failure)
    s << "fold " << doc.failure->fold << " failed ("
      << (doc.failure->numeric ? "numeric" : "validation") << "): " << doc.failure->message
      << "\n";
  return s.str();
}

std::string render_markdown(const ReportDocument& doc) {
  std::ostringstream s;
  const std::string ci_head = fmt_g6(doc.report.config.ci_level * 100) + "% CI";
  s << "# Risk report\n\n";
  s << "| model | dataset | AUROC (mean +- sd) | " << ci_head << " | folds |\n";
  s << "| --- | --- | --- | --- | --- |\n";
  s << "| " << doc.detector << " | `" << doc.dataset << "` | " << auroc_cell(doc) << " | "
    << ci_cell(doc) << " | " << doc.report.folds.size() << " |\n\n";
  s << "- criterion: " << criterion_name(doc.report.config.criterion) << "\n";
  s << "- seed: " << doc.report.config.seed << "\n";
  s << "- config hash: `" << doc.config_hash << "`\n";
  s << "- input hash: `" << doc.input_hash << "`\n\n";

  s << "## Metric summary\n\n";
  s << "| metric | mean | stddev | CI lower | CI upper | defined folds |\n";
  s << "| --- | --- | --- | --- | --- | --- |\n";
  for (const auto& [name, m] : doc.report.summary) {
    s << "| " << name << " | " << fmt_g6(m.mean) << " | " << fmt_g6(m.stddev) << " | "
      << fmt_g6(m.ci_lower) << " | " << fmt_g6(m.ci_upper) << " | " << m.defined_folds << " |\n";
  }

  s << "\n## Folds\n\n";
  s << "| fold | tau | AUROC (threshold) | AUROC (inference) | TPR | FPR | F1 |\n";
  s << "| --- | --- | --- | --- | --- | --- | --- |\n";
  for (const FoldReport& f : doc.report.folds) {
    s << "| " << f.fold << " | " << fmt_g6(f.tau) << " | " << fmt_g6(f.auroc_threshold_part)
      << " | " << fmt_g6(f.auroc_inference) << " | " << opt_cell(f.metrics.tpr) << " | "
      << opt_cell(f.metrics.fpr) << " | " << opt_cell(f.metrics.f1) << " |\n";
  }

  if (doc.failure) {
    s << "\n**Fold " << doc.failure->fold << " failed ("
      << (doc.failure->numeric ? "numeric" : "validation") << "): "
      << doc.failure->message << "**\n";
  }
  return s.str();
}

}  // namespace adw
