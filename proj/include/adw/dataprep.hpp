#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adw/image.hpp"

namespace adw {

enum class Label { nominal, anomalous };

const char* label_name(Label label);

struct SampleRecord {
  std::string sample_id;
  std::string object_id;  // physical piece; the leakage-split unit
  Label label = Label::nominal;
  std::string image;  // path relative to the manifest root
  std::optional<std::string> mask;
  std::optional<std::string> defect_mask;
};

struct CanvasSpec {
  int width = 0;
  int height = 0;
};

// Line-delimited JSON manifest. An optional first line without a
// "sample_id" key is a header; it may carry {"canvas": {"width", "height"}}.
struct DatasetManifest {
  std::string root;  // directory record paths are resolved against
  std::vector<SampleRecord> records;
  std::optional<CanvasSpec> canvas;

  std::string resolve(const std::string& rel) const;
};

// Parses, validates uniqueness of sample_ids, and checks every referenced
// file exists under the manifest's directory. Malformed lines, unknown keys,
// and duplicate ids are reported with the offending line or id.
DatasetManifest load_manifest(const std::string& path);

// Writes records one JSON object per line; a header line is emitted first
// when the manifest carries a canvas. Does not touch the referenced files.
void save_manifest(const DatasetManifest& manifest, const std::string& path);

// Background pixels (mask off) become 0 in every channel.
Image apply_mask(const Image& image, const Mask& fg_mask);

struct BoundingBox {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
};

// Tight foreground bounding box. Throws ValidationError on an empty mask.
BoundingBox mask_bbox(const Mask& mask);

// Componentwise max of the records' mask bounding boxes. Every record needs
// a mask; an empty mask names the record.
CanvasSpec measure_canvas(const DatasetManifest& manifest);

struct CenterEmbedResult {
  Image image;
  Mask mask;
};

// Crop to the mask bbox, paste onto a zero canvas with the bbox centered
// (ties round toward the top-left). Idempotent. Throws when the bbox
// exceeds the canvas.
CenterEmbedResult center_embed(const Image& image, const Mask& fg_mask,
                               const CanvasSpec& canvas);

// Writes exact right-angle rotated copies of each record's files into
// out_dir and returns the manifest with the copies appended. Rotated records
// keep object_id and label; sample_id gains a "_rot<angle>" suffix. Angles
// must be distinct values from {90, 180, 270}. With strict_square set,
// quarter turns on non-square images are rejected.
DatasetManifest rotate_augment(const DatasetManifest& manifest,
                               const std::vector<int>& angles,
                               const std::string& out_dir,
                               bool strict_square = false);

struct ThreeWaySplit {
  std::vector<SampleRecord> train;           // nominal only
  std::vector<SampleRecord> threshold_part;  // nominal + anomalous
  std::vector<SampleRecord> inference_part;  // nominal + anomalous
};

// Deterministic grouped split. Objects (not images) are assigned to
// partitions, so no object_id crosses a partition boundary. Anomalous
// objects are shuffled and halved, the threshold part taking the extra one
// for odd counts. Nominal test objects are dealt in pairs, one per test
// partition, until each partition holds at least as many nominal as
// anomalous records (nominal_train_fraction < 0) or until the explicit
// fraction of nominal objects is reserved for training. The rest train.
ThreeWaySplit three_way_split(const DatasetManifest& manifest, std::uint64_t seed,
                              double nominal_train_fraction = -1.0);

}  // namespace adw
