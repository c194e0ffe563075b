#include "adw/detectors.hpp"

#include <optional>
#include <utility>
#include <vector>

#include "adw/errors.hpp"
#include "adw/image.hpp"

namespace adw {

void DetectorSpec::validate() const {
  if (kind != "flow" && kind != "discriminator" && kind != "oracle" && kind != "gaussian")
    throw ValidationError("unknown detector kind \"" + kind + "\"");
  if (gaussian_stddev <= 0.0)
    throw ValidationError("gaussian detector: stddev must be positive");
  if (disc_hidden < 1) throw ValidationError("discriminator detector: hidden must be >= 1");
}

MultiScaleFeatures sample_features(const DatasetManifest& data, const SampleRecord& record,
                                   const ExtractorConfig& cfg) {
  const std::string path = data.resolve(record.image);
  if (path.size() >= 5 && path.compare(path.size() - 5, 5, ".adwf") == 0)
    return read_features(path);
  return extract_features(read_image(path), cfg);
}

double flow_sample_score(const CouplingFlow& flow, const Standardizer& standardizer,
                         const MultiScaleFeatures& features, ScoreAggregation agg,
                         ScoreMap* map) {
  const std::vector<VectorField> fields =
      standardizer.mean.empty() ? to_fields(features) : standardizer.apply(features);
  if (map) *map = localization_map(log_density(flow, fields).latent);
  return image_score(flow, fields, agg);
}

double disc_sample_score(const AdaptorDiscriminator& model, const MultiScaleFeatures& features,
                         const Mask* image_mask, ScoreMap* map) {
  const VectorField field = to_fields(features).front();
  std::optional<Mask> grid;
  if (image_mask) grid = mask_to_grid(*image_mask, field.h, field.w);
  DiscScore ds = disc_score(model, field, grid ? &*grid : nullptr);
  if (map) *map = std::move(ds.map);
  return ds.image_score;
}

namespace {

class FlowDetector final : public AnomalyDetector {
 public:
  FlowDetector(const DetectorSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.extractor.seed = seed;
    spec_.flow.seed = seed;
    spec_.flow_train.seed = seed;
  }

  void fit(const DatasetManifest& train) override {
    if (train.records.empty()) throw ValidationError("flow detector: empty training set");
    std::vector<MultiScaleFeatures> feats;
    feats.reserve(train.records.size());
    for (const SampleRecord& r : train.records)
      feats.push_back(sample_features(train, r, spec_.extractor));
    standardizer_ = Standardizer::fit(feats);
    std::vector<std::vector<VectorField>> fields;
    fields.reserve(feats.size());
    for (const MultiScaleFeatures& f : feats) fields.push_back(standardizer_.apply(f));

    FlowConfig fc = spec_.flow;
    fc.dim = feats.front().scales.front().channels;
    fc.num_scales = static_cast<int>(feats.front().scales.size());
    flow_ = make_flow(fc);
    train_flow(flow_, fields, spec_.flow_train);
  }

  ScoreRecord score(const DatasetManifest& data, const SampleRecord& record) override {
    const MultiScaleFeatures f = sample_features(data, record, spec_.extractor);
    return {record.sample_id, record.label,
            flow_sample_score(flow_, standardizer_, f, spec_.aggregation), std::nullopt};
  }

 private:
  DetectorSpec spec_;
  CouplingFlow flow_;
  Standardizer standardizer_;
};

class DiscDetector final : public AnomalyDetector {
 public:
  DiscDetector(const DetectorSpec& spec, std::uint64_t seed) : spec_(spec), seed_(seed) {
    spec_.extractor.seed = seed;
    spec_.disc_train.seed = seed;
  }

  void fit(const DatasetManifest& train) override {
    if (train.records.empty())
      throw ValidationError("discriminator detector: empty training set");
    std::vector<VectorField> nominal;
    std::vector<Mask> grids;
    nominal.reserve(train.records.size());
    grids.reserve(train.records.size());
    for (const SampleRecord& r : train.records) {
      VectorField field = to_fields(sample_features(train, r, spec_.extractor)).front();
      grids.push_back(grid_for(train, r, field));
      nominal.push_back(std::move(field));
    }
    model_ = make_adaptor_discriminator(nominal.front().dim, spec_.disc_hidden, seed_);
    train_discriminator(model_, nominal, grids, spec_.disc_train);
  }

  ScoreRecord score(const DatasetManifest& data, const SampleRecord& record) override {
    const MultiScaleFeatures f = sample_features(data, record, spec_.extractor);
    std::optional<Mask> image_mask;
    if (record.mask) image_mask = read_mask(data.resolve(*record.mask));
    return {record.sample_id, record.label,
            disc_sample_score(model_, f, image_mask ? &*image_mask : nullptr), std::nullopt};
  }

 private:
  static Mask grid_for(const DatasetManifest& data, const SampleRecord& r,
                       const VectorField& field) {
    if (!r.mask) {
      Mask all(field.w, field.h);
      std::fill(all.data.begin(), all.data.end(), std::uint8_t{1});
      return all;
    }
    return mask_to_grid(read_mask(data.resolve(*r.mask)), field.h, field.w);
  }

  DetectorSpec spec_;
  std::uint64_t seed_ = 0;
  AdaptorDiscriminator model_;
};

}  // namespace

std::unique_ptr<AnomalyDetector> make_detector(const DetectorSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.kind == "flow") return std::make_unique<FlowDetector>(spec, seed);
  if (spec.kind == "discriminator") return std::make_unique<DiscDetector>(spec, seed);
  if (spec.kind == "oracle") return make_oracle_factory()(seed);
  return make_gaussian_factory(spec.gaussian_nominal_mean, spec.gaussian_anomalous_mean,
                               spec.gaussian_stddev)(seed);
}

DetectorFactory make_detector_factory(const DetectorSpec& spec) {
  spec.validate();
  return [spec](std::uint64_t fold_seed) { return make_detector(spec, fold_seed); };
}

}  // namespace adw
