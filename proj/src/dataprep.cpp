#include "adw/dataprep.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "adw/errors.hpp"
#include "adw/rng.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace adw {

namespace {

using nlohmann::ordered_json;

Label parse_label(const std::string& s, int line) {
  if (s == "nominal") return Label::nominal;
  if (s == "anomalous") return Label::anomalous;
  throw ValidationError("manifest line " + std::to_string(line) + ": unknown label \"" + s +
                        "\"");
}

std::string require_string(const ordered_json& j, const char* key, int line) {
  if (!j.contains(key))
    throw ValidationError("manifest line " + std::to_string(line) + ": missing key " + key);
  if (!j.at(key).is_string())
    throw ValidationError("manifest line " + std::to_string(line) + ": key " + key +
                          " must be a string");
  return j.at(key).get<std::string>();
}

void reject_unknown_keys(const ordered_json& j, const std::set<std::string>& allowed,
                         int line) {
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key()))
      throw ValidationError("manifest line " + std::to_string(line) + ": unknown key \"" +
                            item.key() + "\"");
  }
}

CanvasSpec parse_header_canvas(const ordered_json& j, int line) {
  const ordered_json& c = j.at("canvas");
  if (!c.is_object() || !c.contains("width") || !c.contains("height") ||
      !c.at("width").is_number_integer() || !c.at("height").is_number_integer())
    throw ValidationError("manifest line " + std::to_string(line) +
                          ": canvas needs integer width and height");
  reject_unknown_keys(c, {"width", "height"}, line);
  CanvasSpec canvas{c.at("width").get<int>(), c.at("height").get<int>()};
  if (canvas.width < 1 || canvas.height < 1)
    throw ValidationError("manifest line " + std::to_string(line) + ": canvas must be positive");
  return canvas;
}

void check_exists(const DatasetManifest& m, const std::string& rel,
                  const std::string& sample_id) {
  if (!fs::exists(m.resolve(rel)))
    throw ValidationError("manifest record \"" + sample_id + "\" references missing file " +
                          m.resolve(rel));
}

std::string sanitize_id(const std::string& id) {
  std::string out;
  out.reserve(id.size());
  for (char c : id)
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return out;
}

}  // namespace

const char* label_name(Label label) {
  return label == Label::nominal ? "nominal" : "anomalous";
}

std::string DatasetManifest::resolve(const std::string& rel) const {
  return (fs::path(root) / rel).string();
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot read manifest: " + path);

  DatasetManifest m;
  m.root = fs::path(path).parent_path().string();
  if (m.root.empty()) m.root = ".";

  std::unordered_set<std::string> seen_ids;
  std::string line;
  int line_no = 0;
  bool first_object = true;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError("manifest line " + std::to_string(line_no) +
                            ": malformed JSON: " + e.what());
    }
    if (!j.is_object())
      throw ValidationError("manifest line " + std::to_string(line_no) + ": expected an object");

    if (first_object && !j.contains("sample_id")) {
      // header line: configuration only, no sample
      reject_unknown_keys(j, {"canvas"}, line_no);
      if (j.contains("canvas")) m.canvas = parse_header_canvas(j, line_no);
      first_object = false;
      continue;
    }
    first_object = false;

    reject_unknown_keys(
        j, {"sample_id", "object_id", "label", "image", "mask", "defect_mask"}, line_no);
    SampleRecord r;
    r.sample_id = require_string(j, "sample_id", line_no);
    r.object_id = require_string(j, "object_id", line_no);
    r.label = parse_label(require_string(j, "label", line_no), line_no);
    r.image = require_string(j, "image", line_no);
    if (r.sample_id.empty())
      throw ValidationError("manifest line " + std::to_string(line_no) + ": empty sample_id");
    if (r.object_id.empty())
      throw ValidationError("manifest line " + std::to_string(line_no) + ": empty object_id");
    if (j.contains("mask")) r.mask = require_string(j, "mask", line_no);
    if (j.contains("defect_mask")) r.defect_mask = require_string(j, "defect_mask", line_no);

    if (!seen_ids.insert(r.sample_id).second)
      throw ValidationError("duplicate sample_id \"" + r.sample_id + "\"");
    m.records.push_back(std::move(r));
  }

  for (const SampleRecord& r : m.records) {
    check_exists(m, r.image, r.sample_id);
    if (r.mask) check_exists(m, *r.mask, r.sample_id);
    if (r.defect_mask) check_exists(m, *r.defect_mask, r.sample_id);
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ValidationError("cannot write manifest: " + path);
  if (manifest.canvas) {
    ordered_json header;
    header["canvas"] = {{"width", manifest.canvas->width},
                        {"height", manifest.canvas->height}};
    os << header.dump() << "\n";
  }
  for (const SampleRecord& r : manifest.records) {
    ordered_json j;
    j["sample_id"] = r.sample_id;
    j["object_id"] = r.object_id;
    j["label"] = label_name(r.label);
    j["image"] = r.image;
    if (r.mask) j["mask"] = *r.mask;
    if (r.defect_mask) j["defect_mask"] = *r.defect_mask;
    os << j.dump() << "\n";
  }
  if (!os) throw ValidationError("failed writing manifest: " + path);
}

Image apply_mask(const Image& image, const Mask& fg_mask) {
  if (image.width != fg_mask.width || image.height != fg_mask.height)
    throw ShapeError("apply_mask: image and mask dimensions differ");
  Image out = image;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      if (!fg_mask.at(x, y))
        for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = 0;
  return out;
}

BoundingBox mask_bbox(const Mask& mask) {
  int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) throw ValidationError("mask_bbox: empty mask");
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

CanvasSpec measure_canvas(const DatasetManifest& manifest) {
  if (manifest.records.empty()) throw ValidationError("measure_canvas: manifest has no records");
  CanvasSpec canvas{0, 0};
  for (const SampleRecord& r : manifest.records) {
    if (!r.mask)
      throw ValidationError("measure_canvas: record \"" + r.sample_id + "\" has no mask");
    Mask mask = read_mask(manifest.resolve(*r.mask));
    if (mask.count_foreground() == 0)
      throw ValidationError("measure_canvas: empty mask for record \"" + r.sample_id + "\"");
    const BoundingBox box = mask_bbox(mask);
    canvas.width = std::max(canvas.width, box.width);
    canvas.height = std::max(canvas.height, box.height);
  }
  return canvas;
}

CenterEmbedResult center_embed(const Image& image, const Mask& fg_mask,
                               const CanvasSpec& canvas) {
  if (image.width != fg_mask.width || image.height != fg_mask.height)
    throw ShapeError("center_embed: image and mask dimensions differ");
  const BoundingBox box = mask_bbox(fg_mask);
  if (box.width > canvas.width || box.height > canvas.height)
    throw ValidationError("center_embed: bounding box " + std::to_string(box.width) + "x" +
                          std::to_string(box.height) + " exceeds canvas " +
                          std::to_string(canvas.width) + "x" + std::to_string(canvas.height));

  // floor centering offset; ties land toward the top-left
  const int ox = (canvas.width - box.width) / 2;
  const int oy = (canvas.height - box.height) / 2;

  CenterEmbedResult out{Image(canvas.width, canvas.height, image.channels),
                        Mask(canvas.width, canvas.height)};
  for (int yy = 0; yy < box.height; ++yy)
    for (int xx = 0; xx < box.width; ++xx) {
      for (int c = 0; c < image.channels; ++c)
        out.image.at(ox + xx, oy + yy, c) = image.at(box.x + xx, box.y + yy, c);
      out.mask.set(ox + xx, oy + yy, fg_mask.at(box.x + xx, box.y + yy));
    }
  return out;
}

DatasetManifest rotate_augment(const DatasetManifest& manifest,
                               const std::vector<int>& angles, const std::string& out_dir,
                               bool strict_square) {
  std::set<int> seen_angles;
  for (int a : angles) {
    if (a != 90 && a != 180 && a != 270)
      throw ValidationError("rotate_augment: unsupported angle " + std::to_string(a));
    if (!seen_angles.insert(a).second)
      throw ValidationError("rotate_augment: duplicate angle " + std::to_string(a));
  }
  DatasetManifest out = manifest;
  if (angles.empty()) return out;

  fs::create_directories(out_dir);
  std::unordered_set<std::string> used_names;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const SampleRecord& r = manifest.records[i];
    const Image img = read_image(manifest.resolve(r.image));
    if (strict_square && img.width != img.height &&
        (seen_angles.count(90) || seen_angles.count(270)))
      throw ValidationError("rotate_augment: record \"" + r.sample_id +
                            "\" is not square; quarter turns would change its shape");
    std::optional<Mask> mask, defect;
    if (r.mask) mask = read_mask(manifest.resolve(*r.mask));
    if (r.defect_mask) defect = read_mask(manifest.resolve(*r.defect_mask));

    std::string base = sanitize_id(r.sample_id);
    if (!used_names.insert(base).second) base += "_" + std::to_string(i);

    for (int a : angles) {
      const std::string stem = base + "_rot" + std::to_string(a);
      SampleRecord copy = r;
      copy.sample_id = r.sample_id + "_rot" + std::to_string(a);

      const std::string img_file =
          (fs::path(out_dir) / (stem + fs::path(r.image).extension().string())).string();
      write_image(img_file, rotate_image(img, a));
      copy.image = fs::relative(fs::absolute(img_file), fs::absolute(out.root)).string();

      if (mask) {
        const std::string mask_file =
            (fs::path(out_dir) / (stem + "_mask" + fs::path(*r.mask).extension().string()))
                .string();
        write_mask(mask_file, rotate_mask(*mask, a));
        copy.mask = fs::relative(fs::absolute(mask_file), fs::absolute(out.root)).string();
      }
      if (defect) {
        const std::string defect_file =
            (fs::path(out_dir) /
             (stem + "_defect" + fs::path(*r.defect_mask).extension().string()))
                .string();
        write_mask(defect_file, rotate_mask(*defect, a));
        copy.defect_mask =
            fs::relative(fs::absolute(defect_file), fs::absolute(out.root)).string();
      }
      out.records.push_back(std::move(copy));
    }
  }
  return out;
}

namespace {

struct ObjectGroup {
  std::vector<std::size_t> record_idx;  // manifest order
  int nominal_records = 0;
  int anomalous_records = 0;
  bool anomalous() const { return anomalous_records > 0; }
};

}  // namespace

ThreeWaySplit three_way_split(const DatasetManifest& manifest, std::uint64_t seed,
                              double nominal_train_fraction) {
  if (nominal_train_fraction >= 1.0)
    throw ValidationError("three_way_split: nominal_train_fraction must be below 1");

  // group by object in first-appearance order
  std::vector<std::string> order;
  std::unordered_map<std::string, ObjectGroup> groups;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const SampleRecord& r = manifest.records[i];
    auto [it, inserted] = groups.try_emplace(r.object_id);
    if (inserted) order.push_back(r.object_id);
    it->second.record_idx.push_back(i);
    if (r.label == Label::anomalous)
      ++it->second.anomalous_records;
    else
      ++it->second.nominal_records;
  }

  std::vector<std::string> anom_objects, nom_objects;
  for (const std::string& id : order)
    (groups.at(id).anomalous() ? anom_objects : nom_objects).push_back(id);

  if (anom_objects.size() < 2)
    throw ValidationError(
        "three_way_split: insufficient objects per partition: need 2 anomalous objects, "
        "found " +
        std::to_string(anom_objects.size()));

  RngStream base = seeded_rng(seed);
  RngStream ra = base.split(0x73706c6974ULL);  // "split"
  RngStream rn = base.split(0x6e6f6d696eULL);  // "nomin"
  ra.shuffle(anom_objects);
  rn.shuffle(nom_objects);

  enum class Part { train, threshold, inference };
  std::unordered_map<std::string, Part> assign;

  // threshold takes the extra anomalous object on odd counts
  const std::size_t thr_anom = (anom_objects.size() + 1) / 2;
  int thr_anom_records = 0, inf_anom_records = 0;
  int thr_nom_records = 0, inf_nom_records = 0;
  for (std::size_t i = 0; i < anom_objects.size(); ++i) {
    const ObjectGroup& g = groups.at(anom_objects[i]);
    if (i < thr_anom) {
      assign[anom_objects[i]] = Part::threshold;
      thr_anom_records += g.anomalous_records;
      thr_nom_records += g.nominal_records;
    } else {
      assign[anom_objects[i]] = Part::inference;
      inf_anom_records += g.anomalous_records;
      inf_nom_records += g.nominal_records;
    }
  }

  std::size_t next = 0;
  auto deal_pair = [&] {
    if (next + 2 > nom_objects.size())
      throw ValidationError(
          "three_way_split: insufficient objects per partition: ran out of nominal objects");
    assign[nom_objects[next]] = Part::threshold;
    thr_nom_records += groups.at(nom_objects[next]).nominal_records;
    assign[nom_objects[next + 1]] = Part::inference;
    inf_nom_records += groups.at(nom_objects[next + 1]).nominal_records;
    next += 2;
  };

  if (nominal_train_fraction < 0.0) {
    // at least one pair keeps both test partitions populated with nominals
    deal_pair();
    while (thr_nom_records < thr_anom_records || inf_nom_records < inf_anom_records)
      deal_pair();
  } else {
    const std::size_t n = nom_objects.size();
    const std::size_t train_objs = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(nominal_train_fraction * static_cast<double>(n))));
    if (train_objs >= n)
      throw ValidationError(
          "three_way_split: insufficient objects per partition: no nominal objects left for "
          "testing");
    const std::size_t per_part = (n - train_objs) / 2;
    if (per_part < 1)
      throw ValidationError(
          "three_way_split: insufficient objects per partition: nominal test partitions are "
          "empty");
    for (std::size_t i = 0; i < per_part; ++i) deal_pair();
  }
  if (next >= nom_objects.size())
    throw ValidationError(
        "three_way_split: insufficient objects per partition: no nominal objects left for "
        "training");
  for (; next < nom_objects.size(); ++next) assign[nom_objects[next]] = Part::train;

  ThreeWaySplit split;
  for (const SampleRecord& r : manifest.records) {
    switch (assign.at(r.object_id)) {
      case Part::train: split.train.push_back(r); break;
      case Part::threshold: split.threshold_part.push_back(r); break;
      case Part::inference: split.inference_part.push_back(r); break;
    }
  }
  return split;
}

}  // namespace adw
