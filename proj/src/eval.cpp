#include "adw/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <tuple>

#include "adw/errors.hpp"
#include "adw/rng.hpp"

namespace adw {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_scores(const std::vector<double>& scores, const std::vector<Label>& labels) {
  if (scores.size() != labels.size())
    throw ShapeError("scores and labels lengths differ");
  if (scores.empty()) throw ValidationError("empty score set");
  for (double s : scores)
    if (!std::isfinite(s)) throw ValidationError("non-finite score");
}

}  // namespace

RocCurve roc_curve(const std::vector<double>& scores, const std::vector<Label>& labels) {
  check_scores(scores, labels);
  RocCurve curve;
  for (Label l : labels) (l == Label::anomalous ? curve.n_pos : curve.n_neg)++;
  if (curve.n_pos == 0 || curve.n_neg == 0)
    throw ValidationError("roc_curve: both classes must be present");

  // group by distinct score, descending
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  curve.points.push_back({0.0, 0.0, kInf});
  long long tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double group_score = scores[order[i]];
    while (i < order.size() && scores[order[i]] == group_score) {
      (labels[order[i]] == Label::anomalous ? tp : fp)++;
      ++i;
    }
    // threshold for this point: midpoint to the next lower score, -inf at the end
    const double thr =
        i < order.size() ? (group_score + scores[order[i]]) / 2.0 : -kInf;
    curve.points.push_back({static_cast<double>(fp) / curve.n_neg,
                            static_cast<double>(tp) / curve.n_pos, thr});
  }
  return curve;
}

double auroc(const std::vector<double>& scores, const std::vector<Label>& labels) {
  const RocCurve curve = roc_curve(scores, labels);
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const RocPoint& a = curve.points[i - 1];
    const RocPoint& b = curve.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  return area;
}

ThresholdRule select_threshold(const RocCurve& curve, ThresholdCriterion criterion,
                               double cost_fp, double cost_fn) {
  if (curve.points.empty()) throw ValidationError("select_threshold: empty curve");
  const double n = curve.n_pos + curve.n_neg;
  const double pi_pos = curve.n_pos / n;
  const double pi_neg = curve.n_neg / n;

  auto objective = [&](const RocPoint& p) {
    switch (criterion) {
      case ThresholdCriterion::youden: return p.tpr - p.fpr;
      case ThresholdCriterion::sensitivity_specificity:
        return std::min(p.tpr, 1.0 - p.fpr);
      case ThresholdCriterion::cost_based:
        // lower cost is better; negate so argmax applies uniformly
        return -(cost_fp * p.fpr * pi_neg + cost_fn * (1.0 - p.tpr) * pi_pos);
    }
    throw ValidationError("unknown threshold criterion");
  };

  const RocPoint* best = &curve.points.front();
  double best_value = objective(*best);
  for (const RocPoint& p : curve.points) {
    const double v = objective(p);
    if (v > best_value ||
        (v == best_value &&
         (p.fpr < best->fpr || (p.fpr == best->fpr && p.threshold > best->threshold)))) {
      best = &p;
      best_value = v;
    }
  }
  ThresholdRule rule;
  rule.criterion = criterion;
  rule.tau = best->threshold;
  rule.cost_fp = cost_fp;
  rule.cost_fn = cost_fn;
  return rule;
}

std::vector<Label> classify(const std::vector<double>& scores, double tau) {
  std::vector<Label> out(scores.size(), Label::nominal);
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] > tau) out[i] = Label::anomalous;
  return out;
}

ConfusionMetrics confusion_metrics(const std::vector<Label>& predicted,
                                   const std::vector<Label>& truth) {
  if (predicted.size() != truth.size())
    throw ShapeError("confusion_metrics: predicted and truth lengths differ");
  if (predicted.empty()) throw ValidationError("confusion_metrics: empty input");

  ConfusionMetrics m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predicted[i] == Label::anomalous;
    const bool t = truth[i] == Label::anomalous;
    if (p && t)
      ++m.tp;
    else if (p && !t)
      ++m.fp;
    else if (!p && t)
      ++m.fn;
    else
      ++m.tn;
  }
  const long long pos = m.tp + m.fn;
  const long long neg = m.fp + m.tn;
  if (pos > 0) m.tpr = static_cast<double>(m.tp) / pos;
  m.recall = m.tpr;
  if (neg > 0) m.fpr = static_cast<double>(m.fp) / neg;
  if (m.tp + m.fp > 0) m.precision = static_cast<double>(m.tp) / (m.tp + m.fp);
  if (2 * m.tp + m.fp + m.fn > 0)
    m.f1 = 2.0 * m.tp / (2.0 * m.tp + m.fp + m.fn);
  m.accuracy = static_cast<double>(m.tp + m.tn) / (pos + neg);
  if (pos > 0 && neg > 0)
    m.balanced_accuracy = (*m.tpr + static_cast<double>(m.tn) / neg) / 2.0;
  return m;
}

std::pair<double, double> bootstrap_ci(const std::vector<double>& fold_values,
                                       int num_resamples, double level,
                                       std::uint64_t seed) {
  if (fold_values.size() < 2)
    throw ValidationError("bootstrap_ci: need at least 2 fold values");
  if (num_resamples < 1) throw ValidationError("bootstrap_ci: num_resamples must be >= 1");
  if (!(level > 0.0 && level < 1.0))
    throw ValidationError("bootstrap_ci: level must lie in (0, 1)");

  RngStream rng = seeded_rng(seed).split(0x626f6f74ULL);  // "boot"
  const std::size_t n = fold_values.size();
  std::vector<double> means(static_cast<std::size_t>(num_resamples));
  for (double& m : means) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += fold_values[rng.draw_index(n)];
    m = sum / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  const double a = (1.0 - level) / 2.0;
  const std::size_t lo = static_cast<std::size_t>(std::floor(a * num_resamples));
  return {means[lo], means[means.size() - 1 - lo]};
}

double background_score_fraction(const ScoreMap& map, const Mask& fg_grid) {
  if (map.w != fg_grid.width || map.h != fg_grid.height)
    throw ShapeError("background_score_fraction: map and grid dimensions differ");
  double total = 0.0, background = 0.0;
  for (int y = 0; y < map.h; ++y)
    for (int x = 0; x < map.w; ++x) {
      const double v = map.at(x, y);
      total += v;
      if (!fg_grid.at(x, y)) background += v;
    }
  if (total == 0.0) return 0.0;
  return background / total;
}

double localization_overlap(const ScoreMap& map, const Mask& defect_mask, double quantile) {
  if (map.w != defect_mask.width || map.h != defect_mask.height)
    throw ShapeError("localization_overlap: map and mask dimensions differ");
  if (map.values.empty()) throw ValidationError("localization_overlap: empty map");
  if (!(quantile >= 0.0 && quantile <= 1.0))
    throw ValidationError("localization_overlap: quantile must lie in [0, 1]");

  std::vector<double> sorted = map.values;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const std::size_t rank = static_cast<std::size_t>(std::max(
      0.0, std::min(std::ceil(quantile * static_cast<double>(n)) - 1.0,
                    static_cast<double>(n - 1))));
  const double cut = sorted[rank];

  long long inter = 0, uni = 0;
  bool any_above = false;
  for (double v : map.values)
    if (v > cut) {
      any_above = true;
      break;
    }
  for (int y = 0; y < map.h; ++y)
    for (int x = 0; x < map.w; ++x) {
      const double v = map.at(x, y);
      const bool pred = any_above ? v > cut : v >= cut;
      const bool truth = defect_mask.at(x, y);
      if (pred && truth) ++inter;
      if (pred || truth) ++uni;
    }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

void save_scores_csv(const std::string& path, const std::vector<ScoreRecord>& records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ValidationError("cannot write score file: " + path);
  os << "sample_id,label,score\n";
  char buf[64];
  for (const ScoreRecord& r : records) {
    if (r.sample_id.find(',') != std::string::npos ||
        r.sample_id.find('\n') != std::string::npos)
      throw ValidationError("sample_id not CSV-safe: \"" + r.sample_id + "\"");
    if (!std::isfinite(r.score))
      throw ValidationError("non-finite score for sample \"" + r.sample_id + "\"");
    std::snprintf(buf, sizeof buf, "%.17g", r.score);
    os << r.sample_id << ',' << label_name(r.label) << ',' << buf << "\n";
  }
  if (!os) throw ValidationError("failed writing score file: " + path);
}

std::vector<ScoreRecord> load_scores_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot read score file: " + path);
  std::string line;
  if (!std::getline(is, line) || (line != "sample_id,label,score" &&
                                  line != "sample_id,label,score\r"))
    throw ValidationError("score file missing header sample_id,label,score: " + path);

  std::vector<ScoreRecord> out;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t c1 = line.find(',');
    const std::size_t c2 = c1 == std::string::npos ? std::string::npos
                                                   : line.find(',', c1 + 1);
    if (c2 == std::string::npos)
      throw ValidationError("score file line " + std::to_string(line_no) +
                            ": expected sample_id,label,score");
    ScoreRecord r;
    r.sample_id = line.substr(0, c1);
    const std::string label = line.substr(c1 + 1, c2 - c1 - 1);
    if (label == "nominal")
      r.label = Label::nominal;
    else if (label == "anomalous")
      r.label = Label::anomalous;
    else
      throw ValidationError("score file line " + std::to_string(line_no) +
                            ": unknown label \"" + label + "\"");
    try {
      std::size_t used = 0;
      r.score = std::stod(line.substr(c2 + 1), &used);
      if (used != line.size() - c2 - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ValidationError("score file line " + std::to_string(line_no) +
                            ": malformed score");
    }
    if (!std::isfinite(r.score))
      throw ValidationError("score file line " + std::to_string(line_no) +
                            ": non-finite score");
    out.push_back(std::move(r));
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (char c : text) {
    hash ^= static_cast<unsigned char>(c);
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

// ---------------------------------------------------------------------------

void ProtocolConfig::validate() const {
  if (folds < 1) throw ValidationError("protocol: folds must be >= 1");
  if (bootstrap_samples < 1)
    throw ValidationError("protocol: bootstrap_samples must be >= 1");
  if (!(ci_level > 0.0 && ci_level < 1.0))
    throw ValidationError("protocol: ci_level must lie in (0, 1)");
  if (cost_fp <= 0.0 || cost_fn <= 0.0)
    throw ValidationError("protocol: costs must be positive");
}

namespace {

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

FoldReport run_fold(const DatasetManifest& manifest, const DetectorFactory& factory,
                    const ProtocolConfig& cfg, int fold) {
  const std::uint64_t fold_seed =
      seeded_rng(cfg.seed).split(static_cast<std::uint64_t>(fold)).next_u64();
  const ThreeWaySplit split =
      three_way_split(manifest, fold_seed, cfg.nominal_train_fraction);

  DatasetManifest train;
  train.root = manifest.root;
  train.canvas = manifest.canvas;
  train.records = split.train;
  std::unique_ptr<AnomalyDetector> detector = factory(fold_seed);
  detector->fit(train);

  FoldReport report;
  report.fold = fold;
  for (const SampleRecord& r : split.threshold_part)
    report.threshold_scores.push_back(detector->score(manifest, r));
  for (const SampleRecord& r : split.inference_part)
    report.inference_scores.push_back(detector->score(manifest, r));

  const RocCurve curve =
      roc_curve(scores_of(report.threshold_scores), labels_of(report.threshold_scores));
  report.tau = select_threshold(curve, cfg.criterion, cfg.cost_fp, cfg.cost_fn).tau;
  report.auroc_threshold_part =
      auroc(scores_of(report.threshold_scores), labels_of(report.threshold_scores));
  report.auroc_inference =
      auroc(scores_of(report.inference_scores), labels_of(report.inference_scores));
  report.metrics = confusion_metrics(classify(scores_of(report.inference_scores), report.tau),
                                     labels_of(report.inference_scores));
  return report;
}

void summarize(RiskReport& report, const std::string& name,
               const std::vector<std::optional<double>>& values) {
  std::vector<double> defined;
  for (const std::optional<double>& v : values)
    if (v) defined.push_back(*v);
  if (defined.empty()) return;

  MetricSummary s;
  s.defined_folds = static_cast<int>(defined.size());
  s.mean = std::accumulate(defined.begin(), defined.end(), 0.0) / defined.size();
  if (defined.size() > 1) {
    double ss = 0.0;
    for (double v : defined) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / (defined.size() - 1));
    const std::uint64_t ci_seed =
        seeded_rng(report.config.seed).split(0x6369ULL).split(fnv1a64(name)).next_u64();
    std::tie(s.ci_lower, s.ci_upper) =
        bootstrap_ci(defined, report.config.bootstrap_samples, report.config.ci_level, ci_seed);
  } else {
    s.stddev = 0.0;
    s.ci_lower = s.ci_upper = s.mean;
  }
  report.summary[name] = s;
}

}  // namespace

RiskReport run_protocol(const DatasetManifest& manifest, const DetectorFactory& factory,
                        const ProtocolConfig& cfg) {
  return run_protocol(manifest, factory, cfg, nullptr);
}

RiskReport run_protocol(const DatasetManifest& manifest, const DetectorFactory& factory,
                        const ProtocolConfig& cfg, ProtocolFailure* failure) {
  cfg.validate();
  RiskReport report;
  report.config = cfg;
  for (int k = 0; k < cfg.folds; ++k) {
    try {
      report.folds.push_back(run_fold(manifest, factory, cfg, k));
    } catch (const NumericError& e) {
      if (failure) {
        *failure = {k, true, "protocol fold " + std::to_string(k) + ": " + e.what()};
        break;
      }
      throw NumericError("protocol fold " + std::to_string(k) + ": " + e.what());
    } catch (const std::exception& e) {
      if (failure) {
        *failure = {k, false, "protocol fold " + std::to_string(k) + ": " + e.what()};
        break;
      }
      throw ValidationError("protocol fold " + std::to_string(k) + ": " + e.what());
    }
  }

  auto collect = [&](auto&& get) {
    std::vector<std::optional<double>> out;
    for (const FoldReport& f : report.folds) out.push_back(get(f));
    return out;
  };
  using F = const FoldReport&;
  summarize(report, "auroc_threshold", collect([](F f) { return f.auroc_threshold_part; }));
  summarize(report, "auroc_inference", collect([](F f) { return f.auroc_inference; }));
  summarize(report, "tau", collect([](F f) -> std::optional<double> {
              return std::isfinite(f.tau) ? std::optional<double>(f.tau) : std::nullopt;
            }));
  summarize(report, "tpr", collect([](F f) { return f.metrics.tpr; }));
  summarize(report, "fpr", collect([](F f) { return f.metrics.fpr; }));
  summarize(report, "precision", collect([](F f) { return f.metrics.precision; }));
  summarize(report, "recall", collect([](F f) { return f.metrics.recall; }));
  summarize(report, "f1", collect([](F f) { return f.metrics.f1; }));
  summarize(report, "accuracy", collect([](F f) { return f.metrics.accuracy; }));
  summarize(report, "balanced_accuracy",
            collect([](F f) { return f.metrics.balanced_accuracy; }));
  return report;
}

namespace {

class OracleDetector final : public AnomalyDetector {
 public:
  void fit(const DatasetManifest&) override {}
  ScoreRecord score(const DatasetManifest&, const SampleRecord& record) override {
    return {record.sample_id, record.label,
            record.label == Label::anomalous ? 1.0 : 0.0, std::nullopt};
  }
};

class GaussianDetector final : public AnomalyDetector {
 public:
  GaussianDetector(std::uint64_t fold_seed, double nominal_mean, double anomalous_mean,
                   double stddev)
      : base_(seeded_rng(fold_seed).split(0x67617573ULL)),  // "gaus"
        nominal_mean_(nominal_mean),
        anomalous_mean_(anomalous_mean),
        stddev_(stddev) {}

  void fit(const DatasetManifest&) override {}

  ScoreRecord score(const DatasetManifest&, const SampleRecord& record) override {
    RngStream rng = base_.split(fnv1a64(record.sample_id));
    const double mean =
        record.label == Label::anomalous ? anomalous_mean_ : nominal_mean_;
    return {record.sample_id, record.label, mean + stddev_ * rng.draw_normal(),
            std::nullopt};
  }

 private:
  RngStream base_;
  double nominal_mean_;
  double anomalous_mean_;
  double stddev_;
};

}  // namespace

DetectorFactory make_oracle_factory() {
  return [](std::uint64_t) { return std::make_unique<OracleDetector>(); };
}

DetectorFactory make_gaussian_factory(double nominal_mean, double anomalous_mean,
                                      double stddev) {
  return [=](std::uint64_t fold_seed) {
    return std::make_unique<GaussianDetector>(fold_seed, nominal_mean, anomalous_mean,
                                              stddev);
  };
}

}  // namespace adw
