#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "adw/eval.hpp"
#include "adw/features.hpp"
#include "adw/flow.hpp"
#include "adw/synthdisc.hpp"

namespace adw {

// Everything a protocol fold needs to build a fresh detector. The fold seed
// overrides every nested seed (extractor filters, flow init, training,
// synthesis), so one number reproduces the whole fold.
struct DetectorSpec {
  std::string kind = "flow";  // flow | discriminator | oracle | gaussian
  ExtractorConfig extractor;
  FlowConfig flow;  // dim and num_scales are taken from the extracted features
  TrainConfig flow_train;
  int disc_hidden = 16;
  DiscTrainConfig disc_train;
  // calibration detector: label-conditional gaussian scores
  double gaussian_nominal_mean = 0.0;
  double gaussian_anomalous_mean = 2.0;
  double gaussian_stddev = 1.0;
  ScoreAggregation aggregation = ScoreAggregation::mean_per_dim;

  void validate() const;
};

// Shared scoring paths, used by the detectors here and by the score command.
// The flow consumes standardized fields; an empty standardizer means the
// model was trained on raw fields. When `map` is given it receives the
// latent-norm localization map.
double flow_sample_score(const CouplingFlow& flow, const Standardizer& standardizer,
                         const MultiScaleFeatures& features,
                         ScoreAggregation agg = ScoreAggregation::mean_per_dim,
                         ScoreMap* map = nullptr);

// The discriminator consumes the raw finest-scale field. When image_mask is
// given the probability map is zeroed outside its grid projection, so the
// background receives exactly no score.
double disc_sample_score(const AdaptorDiscriminator& model, const MultiScaleFeatures& features,
                         const Mask* image_mask = nullptr, ScoreMap* map = nullptr);

// Reads precomputed features when the record's image path ends in ".adwf",
// otherwise extracts them from the image.
MultiScaleFeatures sample_features(const DatasetManifest& data, const SampleRecord& record,
                                   const ExtractorConfig& cfg);

std::unique_ptr<AnomalyDetector> make_detector(const DetectorSpec& spec, std::uint64_t seed);
DetectorFactory make_detector_factory(const DetectorSpec& spec);

}  // namespace adw
