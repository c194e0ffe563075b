#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "adw/dataprep.hpp"
#include "adw/image.hpp"
#include "adw/tensor.hpp"

namespace adw {

struct ScoreRecord {
  std::string sample_id;
  Label label = Label::nominal;
  double score = 0.0;  // higher = more anomalous; must be finite
  std::optional<ScoreMap> localization;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

// Sweep from (0,0,+inf) to (1,1,-inf); one point per distinct score group.
// fpr and tpr are non-decreasing, thresholds strictly decreasing.
struct RocCurve {
  std::vector<RocPoint> points;
  int n_pos = 0;
  int n_neg = 0;
};

RocCurve roc_curve(const std::vector<double>& scores, const std::vector<Label>& labels);

// Trapezoid area under roc_curve; equals P(pos > neg) + P(tie)/2 over
// positive-negative pairs. Both classes must be present.
double auroc(const std::vector<double>& scores, const std::vector<Label>& labels);

enum class ThresholdCriterion { youden, sensitivity_specificity, cost_based };

struct ThresholdRule {
  ThresholdCriterion criterion = ThresholdCriterion::youden;
  double tau = 0.0;
  double cost_fp = 1.0;  // cost_based only
  double cost_fn = 1.0;
};

// youden: argmax tpr - fpr. sensitivity_specificity: argmax min(tpr, 1-fpr).
// cost_based: argmin cost_fp*fpr*pi_neg + cost_fn*(1-tpr)*pi_pos with class
// priors taken from the curve. Ties: smaller fpr, then larger tau.
ThresholdRule select_threshold(const RocCurve& curve, ThresholdCriterion criterion,
                               double cost_fp = 1.0, double cost_fn = 1.0);

// Strict convention: anomalous iff score > tau. A score equal to tau stays
// nominal.
std::vector<Label> classify(const std::vector<double>& scores, double tau);

// Ratios whose denominator is an empty count are left unset; they must never
// be folded into aggregates as zeros.
struct ConfusionMetrics {
  long long tp = 0, fp = 0, fn = 0, tn = 0;
  std::optional<double> tpr, fpr, precision, recall, f1, accuracy, balanced_accuracy;
};

ConfusionMetrics confusion_metrics(const std::vector<Label>& predicted,
                                   const std::vector<Label>& truth);

// Percentile bootstrap over resampled fold means. The resample set depends
// only on (values, num_resamples, seed), so CIs at different levels nest.
std::pair<double, double> bootstrap_ci(const std::vector<double>& fold_values,
                                       int num_resamples, double level, std::uint64_t seed);

// Share of the map's mass lying on background cells; 0 when the map sums
// to 0. Map and grid dimensions must match.
double background_score_fraction(const ScoreMap& map, const Mask& fg_grid);

// Binarize the map at the nearest-rank quantile of its own values (strictly
// above; falls back to >= when nothing clears it) and return IoU with the
// defect mask.
double localization_overlap(const ScoreMap& map, const Mask& defect_mask, double quantile);

// CSV with the pinned header sample_id,label,score. Scores round-trip
// value-exact; sample_ids may not contain commas or newlines.
void save_scores_csv(const std::string& path, const std::vector<ScoreRecord>& records);
std::vector<ScoreRecord> load_scores_csv(const std::string& path);

std::uint64_t fnv1a64(std::string_view text);

// ---------------------------------------------------------------------------
// repeated-resampling risk protocol

struct AnomalyDetector {
  virtual ~AnomalyDetector() = default;
  // train carries the fold's nominal records and the resolution root
  virtual void fit(const DatasetManifest& train) = 0;
  virtual ScoreRecord score(const DatasetManifest& data, const SampleRecord& record) = 0;
};

// One fresh detector per fold, seeded by the fold.
using DetectorFactory =
    std::function<std::unique_ptr<AnomalyDetector>(std::uint64_t fold_seed)>;

struct ProtocolConfig {
  int folds = 10;
  std::uint64_t seed = 0;
  ThresholdCriterion criterion = ThresholdCriterion::youden;
  double cost_fp = 1.0;
  double cost_fn = 1.0;
  double nominal_train_fraction = -1.0;  // < 0: auto sizing
  int bootstrap_samples = 2000;
  double ci_level = 0.95;

  void validate() const;
};

struct FoldReport {
  int fold = 0;
  double tau = 0.0;
  double auroc_threshold_part = 0.0;
  double auroc_inference = 0.0;
  ConfusionMetrics metrics;  // inference partition
  std::vector<ScoreRecord> threshold_scores;
  std::vector<ScoreRecord> inference_scores;
};

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample stddev over defined folds, 0 for a single fold
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  int defined_folds = 0;
};

struct RiskReport {
  ProtocolConfig config;
  std::vector<FoldReport> folds;
  std::map<std::string, MetricSummary> summary;  // keyed by metric name
};

struct ProtocolFailure {
  int fold = 0;
  bool numeric = false;  // NumericError as opposed to the validation family
  std::string message;
};

// Steps 1-5 per fold: split, fit on nominal train data, pick tau on the
// threshold partition, classify the inference partition, aggregate.
// Deterministic in (manifest, config). A fold failure rethrows with the fold
// index prepended.
RiskReport run_protocol(const DatasetManifest& manifest, const DetectorFactory& factory,
                        const ProtocolConfig& cfg);

// Same protocol, but a fold failure stops the loop and is recorded in
// `failure` instead of thrown; the report keeps the completed folds and
// summarizes only those.
RiskReport run_protocol(const DatasetManifest& manifest, const DetectorFactory& factory,
                        const ProtocolConfig& cfg, ProtocolFailure* failure);

// Label oracle: score 1 for anomalous records, 0 for nominal. Calibration
// aid for protocol tests.
DetectorFactory make_oracle_factory();

// Label-conditional Gaussian scores drawn per (fold, sample_id); with equal
// means the scores are label-independent noise.
DetectorFactory make_gaussian_factory(double nominal_mean, double anomalous_mean,
                                      double stddev);

}  // namespace adw
