#include "adw/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "adw/checkpoint.hpp"
#include "adw/dataprep.hpp"
#include "adw/detectors.hpp"
#include "adw/errors.hpp"
#include "adw/eval.hpp"
#include "adw/features.hpp"
#include "adw/flow.hpp"
#include "adw/image.hpp"
#include "adw/parallel.hpp"
#include "adw/report.hpp"
#include "adw/synthdisc.hpp"

namespace adw::cli {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// configuration

// One flat key space shared by all commands. Defaults < config file < flags;
// the effective result is echoed into every output artifact.
struct RunConfig {
  std::uint64_t seed = 0;
  int jobs = 0;  // 0: library default thread count
  bool force = false;
  std::string detector = "flow";  // flow | discriminator | oracle | gaussian
  // extractor
  int num_filters = 8;
  int kernel = 3;
  int pool = 2;
  // training (shared by both trainable detectors)
  int epochs = 20;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double clip_norm = 10.0;
  int batch_size = 8;
  // flow architecture
  int flow_blocks = 4;
  int flow_hidden = 32;
  // discriminator architecture
  int disc_hidden = 16;
  // gaussian calibration detector
  double gaussian_nominal_mean = 0.0;
  double gaussian_anomalous_mean = 2.0;
  double gaussian_stddev = 1.0;
  // protocol
  int folds = 10;
  std::string criterion = "youden";
  double cost_fp = 1.0;
  double cost_fn = 1.0;
  double nominal_train_fraction = -1.0;
  int bootstrap_samples = 2000;
  double ci_level = 0.95;
  // scoring
  std::string aggregation = "mean";  // mean | max
};

Json config_to_json(const RunConfig& c) {
  Json j = Json::object();
  j["seed"] = c.seed;
  j["jobs"] = c.jobs;
  j["force"] = c.force;
  j["detector"] = c.detector;
  j["num_filters"] = c.num_filters;
  j["kernel"] = c.kernel;
  j["pool"] = c.pool;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["momentum"] = c.momentum;
  j["clip_norm"] = c.clip_norm;
  j["batch_size"] = c.batch_size;
  j["flow_blocks"] = c.flow_blocks;
  j["flow_hidden"] = c.flow_hidden;
  j["disc_hidden"] = c.disc_hidden;
  j["gaussian_nominal_mean"] = c.gaussian_nominal_mean;
  j["gaussian_anomalous_mean"] = c.gaussian_anomalous_mean;
  j["gaussian_stddev"] = c.gaussian_stddev;
  j["folds"] = c.folds;
  j["criterion"] = c.criterion;
  j["cost_fp"] = c.cost_fp;
  j["cost_fn"] = c.cost_fn;
  j["nominal_train_fraction"] = c.nominal_train_fraction;
  j["bootstrap_samples"] = c.bootstrap_samples;
  j["ci_level"] = c.ci_level;
  j["aggregation"] = c.aggregation;
  return j;
}

int as_int(const Json& v, const std::string& key) {
  if (!v.is_number_integer())
    throw ValidationError("config: key \"" + key + "\" must be an integer");
  return v.get<int>();
}

std::uint64_t as_u64(const Json& v, const std::string& key) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0)
    return static_cast<std::uint64_t>(v.get<long long>());
  throw ValidationError("config: key \"" + key + "\" must be a non-negative integer");
}

double as_double(const Json& v, const std::string& key) {
  if (!v.is_number()) throw ValidationError("config: key \"" + key + "\" must be a number");
  return v.get<double>();
}

bool as_bool(const Json& v, const std::string& key) {
  if (!v.is_boolean()) throw ValidationError("config: key \"" + key + "\" must be a boolean");
  return v.get<bool>();
}

std::string as_string(const Json& v, const std::string& key) {
  if (!v.is_string()) throw ValidationError("config: key \"" + key + "\" must be a string");
  return v.get<std::string>();
}

void apply_config_key(RunConfig& c, const std::string& key, const Json& v) {
  if (key == "seed") c.seed = as_u64(v, key);
  else if (key == "jobs") c.jobs = as_int(v, key);
  else if (key == "force") c.force = as_bool(v, key);
  else if (key == "detector") c.detector = as_string(v, key);
  else if (key == "num_filters") c.num_filters = as_int(v, key);
  else if (key == "kernel") c.kernel = as_int(v, key);
  else if (key == "pool") c.pool = as_int(v, key);
  else if (key == "epochs") c.epochs = as_int(v, key);
  else if (key == "learning_rate") c.learning_rate = as_double(v, key);
  else if (key == "momentum") c.momentum = as_double(v, key);
  else if (key == "clip_norm") c.clip_norm = as_double(v, key);
  else if (key == "batch_size") c.batch_size = as_int(v, key);
  else if (key == "flow_blocks") c.flow_blocks = as_int(v, key);
  else if (key == "flow_hidden") c.flow_hidden = as_int(v, key);
  else if (key == "disc_hidden") c.disc_hidden = as_int(v, key);
  else if (key == "gaussian_nominal_mean") c.gaussian_nominal_mean = as_double(v, key);
  else if (key == "gaussian_anomalous_mean") c.gaussian_anomalous_mean = as_double(v, key);
  else if (key == "gaussian_stddev") c.gaussian_stddev = as_double(v, key);
  else if (key == "folds") c.folds = as_int(v, key);
  else if (key == "criterion") c.criterion = as_string(v, key);
  else if (key == "cost_fp") c.cost_fp = as_double(v, key);
  else if (key == "cost_fn") c.cost_fn = as_double(v, key);
  else if (key == "nominal_train_fraction") c.nominal_train_fraction = as_double(v, key);
  else if (key == "bootstrap_samples") c.bootstrap_samples = as_int(v, key);
  else if (key == "ci_level") c.ci_level = as_double(v, key);
  else if (key == "aggregation") c.aggregation = as_string(v, key);
  else throw ValidationError("config: unknown key \"" + key + "\"");
}

void apply_config_file(RunConfig& c, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("config: cannot read " + path);
  Json j;
  try {
    j = Json::parse(f);
  } catch (const Json::exception& e) {
    throw ValidationError("config: malformed JSON in " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError("config: " + path + " must hold a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) apply_config_key(c, it.key(), it.value());
}

ExtractorConfig extractor_of(const RunConfig& c) {
  ExtractorConfig e;
  e.seed = c.seed;
  e.num_filters = c.num_filters;
  e.kernel = c.kernel;
  e.pool = c.pool;
  return e;
}

TrainConfig flow_train_of(const RunConfig& c) {
  TrainConfig t;
  t.epochs = c.epochs;
  t.eval_every = c.epochs + 1;  // no separate eval set on the CLI path
  t.learning_rate = c.learning_rate;
  t.momentum = c.momentum;
  t.clip_norm = c.clip_norm;
  t.batch_size = c.batch_size;
  t.seed = c.seed;
  return t;
}

DiscTrainConfig disc_train_of(const RunConfig& c) {
  DiscTrainConfig d;
  d.epochs = c.epochs;
  d.learning_rate = c.learning_rate;
  d.momentum = c.momentum;
  d.clip_norm = c.clip_norm;
  d.batch_size = c.batch_size;
  d.seed = c.seed;
  return d;
}

ScoreAggregation aggregation_of(const RunConfig& c) {
  if (c.aggregation == "mean") return ScoreAggregation::mean_per_dim;
  if (c.aggregation == "max") return ScoreAggregation::max_position;
  throw ValidationError("config: aggregation must be \"mean\" or \"max\"");
}

DetectorSpec detector_spec_of(const RunConfig& c) {
  DetectorSpec spec;
  spec.kind = c.detector;
  spec.extractor = extractor_of(c);
  spec.flow.num_blocks = c.flow_blocks;
  spec.flow.hidden = c.flow_hidden;
  spec.flow_train = flow_train_of(c);
  spec.disc_hidden = c.disc_hidden;
  spec.disc_train = disc_train_of(c);
  spec.gaussian_nominal_mean = c.gaussian_nominal_mean;
  spec.gaussian_anomalous_mean = c.gaussian_anomalous_mean;
  spec.gaussian_stddev = c.gaussian_stddev;
  spec.aggregation = aggregation_of(c);
  return spec;
}

// ---------------------------------------------------------------------------
// files, hashes, run records

std::optional<std::string> try_read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return std::nullopt;
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string read_file(const std::string& path) {
  std::optional<std::string> bytes = try_read(path);
  if (!bytes) throw ValidationError("cannot read " + path);
  return *std::move(bytes);
}

// Temp file + rename; an unchanged target is left untouched so reruns keep
// mtimes stable.
void write_file_atomic(const std::string& path, const std::string& bytes) {
  std::optional<std::string> existing = try_read(path);
  if (existing && *existing == bytes) return;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw ValidationError("cannot write " + tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw NumericError("write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

// Moves a temp file written by a module serializer into place, dropping it
// when the target already holds identical bytes.
void commit_file(const std::string& tmp, const std::string& path) {
  const std::string fresh = read_file(tmp);
  std::optional<std::string> existing = try_read(path);
  if (existing && *existing == fresh) {
    fs::remove(tmp);
    return;
  }
  fs::rename(tmp, path);
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t mix_hash(std::uint64_t h, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) {
    h ^= (x >> (8 * i)) & 0xffULL;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Content hash over the manifest file and every file it references.
std::uint64_t hash_manifest_inputs(const DatasetManifest& m, const std::string& manifest_path) {
  std::uint64_t h = fnv1a64(read_file(manifest_path));
  for (const SampleRecord& r : m.records) {
    h = mix_hash(h, fnv1a64(read_file(m.resolve(r.image))));
    if (r.mask) h = mix_hash(h, fnv1a64(read_file(m.resolve(*r.mask))));
    if (r.defect_mask) h = mix_hash(h, fnv1a64(read_file(m.resolve(*r.defect_mask))));
  }
  return h;
}

std::string now_utc() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// The replication trail: config echo plus content hashes. The sidecar copy
// is deterministic; the timestamped record goes to an append-only log, so
// artifact bytes never depend on the wall clock.
struct RunEnvelope {
  std::string command;
  Json options = Json::object();
  Json config = Json::object();
  std::string config_hash;
  std::string input_hash;
  std::vector<std::string> outputs;
};

RunEnvelope make_envelope(const std::string& command, Json options, const RunConfig& cfg) {
  RunEnvelope env;
  env.command = command;
  env.options = std::move(options);
  env.config = config_to_json(cfg);
  Json hashed = Json::object();
  hashed["command"] = env.command;
  hashed["options"] = env.options;
  hashed["config"] = env.config;
  env.config_hash = hex64(fnv1a64(hashed.dump()));
  return env;
}

Json envelope_json(const RunEnvelope& env) {
  Json j = Json::object();
  j["command"] = env.command;
  j["options"] = env.options;
  j["config"] = env.config;
  j["config_hash"] = env.config_hash;
  j["input_hash"] = env.input_hash;
  j["outputs"] = env.outputs;
  return j;
}

void write_sidecar(const std::string& path, const RunEnvelope& env) {
  write_file_atomic(path, envelope_json(env).dump(2) + "\n");
}

void append_run_record(const std::string& dir, const RunEnvelope& env) {
  Json j = Json::object();
  j["timestamp_utc"] = now_utc();
  j["command"] = env.command;
  j["config_hash"] = env.config_hash;
  j["input_hash"] = env.input_hash;
  j["outputs"] = env.outputs;
  const std::string path = (fs::path(dir) / "adw_runs.jsonl").string();
  std::ofstream f(path, std::ios::binary | std::ios::app);
  if (!f) throw ValidationError("cannot write " + path);
  f << j.dump() << "\n";
}

// ---------------------------------------------------------------------------
// shared command helpers

std::string sanitize_component(const std::string& id) {
  std::string out;
  out.reserve(id.size());
  for (char c : id) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' ||
                    c == '-';
    out += ok ? c : '_';
  }
  if (out.empty()) out = "sample";
  return out;
}

// One stable file stem per record, collision-free and deterministic in
// record order.
std::vector<std::string> record_stems(const DatasetManifest& m) {
  std::vector<std::string> stems;
  stems.reserve(m.records.size());
  std::set<std::string> taken;
  for (const SampleRecord& r : m.records) {
    const std::string base = sanitize_component(r.sample_id);
    std::string cand = base;
    for (int k = 1; taken.count(cand); ++k) cand = base + "_" + std::to_string(k);
    taken.insert(cand);
    stems.push_back(cand);
  }
  return stems;
}

bool has_parent_step(const std::string& rel) {
  for (const fs::path& part : fs::path(rel)) {
    if (part == "..") return true;
  }
  return false;
}

Image mask_as_image(const Mask& m) {
  Image img(m.width, m.height, 1);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) img.at(x, y) = m.at(x, y) ? 255 : 0;
  return img;
}

Mask image_as_mask(const Image& img) {
  Mask m(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) m.set(x, y, img.at(x, y, 0) > 127);
  return m;
}

MultiScaleFeatures map_container(const ScoreMap& map) {
  FeatureTensor t(1, map.h, map.w);
  for (std::size_t i = 0; i < map.values.size(); ++i)
    t.data[i] = static_cast<float>(map.values[i]);
  MultiScaleFeatures ms;
  ms.scales.push_back(std::move(t));
  return ms;
}

std::string loss_csv(const TrainHistory& history) {
  std::string s = "epoch,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < history.epoch_loss.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 1, history.epoch_loss[i]);
    s += buf;
  }
  return s;
}

std::vector<int> parse_rotate(const std::string& csv) {
  std::vector<int> angles;
  if (csv.empty()) return angles;
  std::stringstream ss(csv);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t pos = 0;
    int angle = 0;
    try {
      angle = std::stoi(part, &pos);
    } catch (const std::exception&) {
      throw ValidationError("prep: bad --rotate value \"" + part + "\"");
    }
    if (pos != part.size())
      throw ValidationError("prep: bad --rotate value \"" + part + "\"");
    angles.push_back(angle);
  }
  return angles;
}

std::string rel_from_dir(const std::string& out_dir, const std::string& target) {
  return fs::relative(fs::weakly_canonical(target), fs::weakly_canonical(out_dir))
      .generic_string();
}

// ---------------------------------------------------------------------------
// prep

struct PrepOptions {
  std::string manifest;
  std::string out_dir;
  bool mask = false;
  bool center_embed = false;
  std::string rotate;
};

void cmd_prep(const RunConfig& cfg, const PrepOptions& opt, std::ostream& out) {
  const std::vector<int> angles = parse_rotate(opt.rotate);
  DatasetManifest m = load_manifest(opt.manifest);
  if (fs::weakly_canonical(opt.out_dir) == fs::weakly_canonical(m.root))
    throw ValidationError("prep: output directory must differ from the dataset root");
  fs::create_directories(opt.out_dir);

  // stage every referenced file under out_dir, applying masks on the way
  for (const SampleRecord& r : m.records) {
    for (const std::string* rel : {&r.image, r.mask ? &*r.mask : nullptr,
                                   r.defect_mask ? &*r.defect_mask : nullptr}) {
      if (!rel) continue;
      if (has_parent_step(*rel))
        throw ValidationError("prep: record \"" + r.sample_id +
                              "\" references a path outside the dataset root: " + *rel);
    }
    const std::string dst = (fs::path(opt.out_dir) / r.image).string();
    fs::create_directories(fs::path(dst).parent_path());
    if (opt.mask) {
      if (!r.mask)
        throw ValidationError("prep: record \"" + r.sample_id + "\" has no mask for --mask");
      const Image img = read_image(m.resolve(r.image));
      const Mask fg = read_mask(m.resolve(*r.mask));
      write_image(dst, apply_mask(img, fg));
    } else {
      write_file_atomic(dst, read_file(m.resolve(r.image)));
    }
    if (r.mask) {
      const std::string mdst = (fs::path(opt.out_dir) / *r.mask).string();
      fs::create_directories(fs::path(mdst).parent_path());
      write_file_atomic(mdst, read_file(m.resolve(*r.mask)));
    }
    if (r.defect_mask) {
      const std::string ddst = (fs::path(opt.out_dir) / *r.defect_mask).string();
      fs::create_directories(fs::path(ddst).parent_path());
      write_file_atomic(ddst, read_file(m.resolve(*r.defect_mask)));
    }
  }
  DatasetManifest staged = m;
  staged.root = opt.out_dir;

  if (!angles.empty()) staged = rotate_augment(staged, angles, opt.out_dir);

  if (opt.center_embed) {
    const CanvasSpec canvas = measure_canvas(staged);
    for (const SampleRecord& r : staged.records) {
      const Image img = read_image(staged.resolve(r.image));
      const Mask fg = read_mask(staged.resolve(*r.mask));
      const CenterEmbedResult res = center_embed(img, fg, canvas);
      write_image(staged.resolve(r.image), res.image);
      write_mask(staged.resolve(*r.mask), res.mask);
      if (r.defect_mask) {
        const Mask defect = read_mask(staged.resolve(*r.defect_mask));
        const CenterEmbedResult dres = center_embed(mask_as_image(defect), fg, canvas);
        write_mask(staged.resolve(*r.defect_mask), image_as_mask(dres.image));
      }
    }
    staged.canvas = canvas;
  }

  const std::string out_manifest =
      (fs::path(opt.out_dir) / fs::path(opt.manifest).filename()).string();
  const std::string tmp = out_manifest + ".tmp";
  save_manifest(staged, tmp);
  commit_file(tmp, out_manifest);

  Json options = Json::object();
  options["manifest"] = opt.manifest;
  options["out_dir"] = opt.out_dir;
  options["mask"] = opt.mask;
  options["center_embed"] = opt.center_embed;
  options["rotate"] = angles;
  RunEnvelope env = make_envelope("prep", std::move(options), cfg);
  env.input_hash = hex64(hash_manifest_inputs(m, opt.manifest));
  env.outputs = {out_manifest};
  write_sidecar((fs::path(opt.out_dir) / "run_config.json").string(), env);
  append_run_record(opt.out_dir, env);

  out << "prep: " << staged.records.size() << " records -> " << out_manifest;
  if (staged.canvas)
    out << " (canvas " << staged.canvas->width << "x" << staged.canvas->height << ")";
  out << "\n";
}

// ---------------------------------------------------------------------------
// features

struct FeaturesOptions {
  std::string manifest;
  std::string out_dir;
};

void cmd_features(const RunConfig& cfg, const FeaturesOptions& opt, std::ostream& out) {
  const DatasetManifest m = load_manifest(opt.manifest);
  fs::create_directories(opt.out_dir);
  const ExtractorConfig ecfg = extractor_of(cfg);
  const std::vector<std::string> stems = record_stems(m);

  DatasetManifest fm;
  fm.root = opt.out_dir;
  fm.canvas = m.canvas;
  int written = 0;
  int skipped = 0;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const SampleRecord& r = m.records[i];
    const std::string name = stems[i] + ".adwf";
    const std::string fpath = (fs::path(opt.out_dir) / name).string();
    if (fs::exists(fpath) && !cfg.force) {
      ++skipped;
    } else {
      const MultiScaleFeatures f = extract_features(read_image(m.resolve(r.image)), ecfg);
      const std::string tmp = fpath + ".tmp";
      write_features(tmp, f);
      commit_file(tmp, fpath);
      ++written;
    }
    SampleRecord fr = r;
    fr.image = name;
    if (r.mask) fr.mask = rel_from_dir(opt.out_dir, m.resolve(*r.mask));
    if (r.defect_mask) fr.defect_mask = rel_from_dir(opt.out_dir, m.resolve(*r.defect_mask));
    fm.records.push_back(std::move(fr));
  }

  const std::string fmanifest = (fs::path(opt.out_dir) / "features.jsonl").string();
  const std::string tmp = fmanifest + ".tmp";
  save_manifest(fm, tmp);
  commit_file(tmp, fmanifest);

  Json options = Json::object();
  options["manifest"] = opt.manifest;
  options["out_dir"] = opt.out_dir;
  RunEnvelope env = make_envelope("features", std::move(options), cfg);
  env.input_hash = hex64(hash_manifest_inputs(m, opt.manifest));
  env.outputs = {fmanifest};
  write_sidecar((fs::path(opt.out_dir) / "run_config.json").string(), env);
  append_run_record(opt.out_dir, env);

  out << "features: wrote " << written << ", skipped " << skipped << " -> " << fmanifest
      << "\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string manifest;
  std::string model;
};

Mask full_grid(const VectorField& field) {
  Mask all(field.w, field.h);
  std::fill(all.data.begin(), all.data.end(), std::uint8_t{1});
  return all;
}

void cmd_train(const RunConfig& cfg, const TrainOptions& opt, std::ostream& out) {
  if (cfg.detector != "flow" && cfg.detector != "discriminator")
    throw ValidationError("train: detector kind \"" + cfg.detector + "\" is not trainable");
  const DatasetManifest m = load_manifest(opt.manifest);
  std::vector<SampleRecord> nominal;
  for (const SampleRecord& r : m.records)
    if (r.label == Label::nominal) nominal.push_back(r);
  if (nominal.empty())
    throw ValidationError("train: no nominal records in " + opt.manifest);

  const ExtractorConfig ecfg = extractor_of(cfg);
  const std::string tmp = opt.model + ".tmp";
  TrainHistory history;
  if (cfg.detector == "flow") {
    std::vector<MultiScaleFeatures> feats;
    feats.reserve(nominal.size());
    for (const SampleRecord& r : nominal) feats.push_back(sample_features(m, r, ecfg));
    const Standardizer standardizer = Standardizer::fit(feats);
    std::vector<std::vector<VectorField>> fields;
    fields.reserve(feats.size());
    for (const MultiScaleFeatures& f : feats) fields.push_back(standardizer.apply(f));
    FlowConfig fc;
    fc.dim = feats.front().scales.front().channels;
    fc.num_scales = static_cast<int>(feats.front().scales.size());
    fc.num_blocks = cfg.flow_blocks;
    fc.hidden = cfg.flow_hidden;
    fc.seed = cfg.seed;
    CouplingFlow flow = make_flow(fc);
    history = train_flow(flow, fields, flow_train_of(cfg));
    save_checkpoint(tmp, flow, standardizer);
  } else {
    std::vector<VectorField> fields;
    std::vector<Mask> grids;
    fields.reserve(nominal.size());
    for (const SampleRecord& r : nominal) {
      VectorField field = to_fields(sample_features(m, r, ecfg)).front();
      grids.push_back(r.mask ? mask_to_grid(read_mask(m.resolve(*r.mask)), field.h, field.w)
                             : full_grid(field));
      fields.push_back(std::move(field));
    }
    AdaptorDiscriminator model =
        make_adaptor_discriminator(fields.front().dim, cfg.disc_hidden, cfg.seed);
    history = train_discriminator(model, fields, grids, disc_train_of(cfg));
    save_checkpoint(tmp, model);
  }
  commit_file(tmp, opt.model);
  const std::string csv_path = opt.model + ".loss.csv";
  write_file_atomic(csv_path, loss_csv(history));

  Json options = Json::object();
  options["manifest"] = opt.manifest;
  options["model"] = opt.model;
  RunEnvelope env = make_envelope("train", std::move(options), cfg);
  env.input_hash = hex64(hash_manifest_inputs(m, opt.manifest));
  env.outputs = {opt.model, csv_path};
  write_sidecar(opt.model + ".run.json", env);
  append_run_record(fs::path(opt.model).parent_path().string().empty()
                        ? "."
                        : fs::path(opt.model).parent_path().string(),
                    env);

  out << "train: " << cfg.detector << " on " << nominal.size() << " nominal records, "
      << cfg.epochs << " epochs";
  if (!history.epoch_loss.empty())
    out << ", final loss " << fmt_g6(history.epoch_loss.back());
  out << " -> " << opt.model << "\n";
}

// ---------------------------------------------------------------------------
// score

struct ScoreOptions {
  std::string model;
  std::string manifest;
  std::string csv;
  std::string maps_dir;
};

void cmd_score(const RunConfig& cfg, const ScoreOptions& opt, std::ostream& out) {
  const DatasetManifest m = load_manifest(opt.manifest);
  const bool want_maps = !opt.maps_dir.empty();
  const ExtractorConfig ecfg = extractor_of(cfg);
  const ScoreAggregation agg = aggregation_of(cfg);

  std::vector<ScoreRecord> records;
  std::vector<ScoreMap> maps;
  records.reserve(m.records.size());

  if (opt.model == "oracle" || opt.model == "gaussian") {
    if (want_maps)
      throw ValidationError("score: --maps requires a flow or discriminator model");
    DetectorSpec spec = detector_spec_of(cfg);
    spec.kind = opt.model;
    const std::unique_ptr<AnomalyDetector> det = make_detector(spec, cfg.seed);
    for (const SampleRecord& r : m.records) records.push_back(det->score(m, r));
  } else {
    const ModelKind kind = checkpoint_kind(opt.model);
    if (kind == ModelKind::flow) {
      const FlowCheckpoint ck = load_flow_checkpoint(opt.model);
      for (const SampleRecord& r : m.records) {
        const MultiScaleFeatures f = sample_features(m, r, ecfg);
        ScoreMap map;
        double score = 0.0;
        try {
          score = flow_sample_score(ck.flow, ck.standardizer, f, agg,
                                    want_maps ? &map : nullptr);
        } catch (const ShapeError& e) {
          throw ShapeError("sample \"" + r.sample_id + "\": " + e.what());
        }
        records.push_back({r.sample_id, r.label, score, std::nullopt});
        if (want_maps) maps.push_back(std::move(map));
      }
    } else {
      const DiscCheckpoint ck = load_disc_checkpoint(opt.model);
      for (const SampleRecord& r : m.records) {
        const MultiScaleFeatures f = sample_features(m, r, ecfg);
        std::optional<Mask> image_mask;
        if (r.mask) image_mask = read_mask(m.resolve(*r.mask));
        ScoreMap map;
        double score = 0.0;
        try {
          score = disc_sample_score(ck.model, f, image_mask ? &*image_mask : nullptr,
                                    want_maps ? &map : nullptr);
        } catch (const ShapeError& e) {
          throw ShapeError("sample \"" + r.sample_id + "\": " + e.what());
        }
        records.push_back({r.sample_id, r.label, score, std::nullopt});
        if (want_maps) maps.push_back(std::move(map));
      }
    }
  }

  const std::string tmp = opt.csv + ".tmp";
  save_scores_csv(tmp, records);
  commit_file(tmp, opt.csv);

  if (want_maps) {
    fs::create_directories(opt.maps_dir);
    const std::vector<std::string> stems = record_stems(m);
    for (std::size_t i = 0; i < maps.size(); ++i) {
      const std::string mpath = (fs::path(opt.maps_dir) / (stems[i] + ".adwf")).string();
      const std::string mtmp = mpath + ".tmp";
      write_features(mtmp, map_container(maps[i]));
      commit_file(mtmp, mpath);
    }
  }

  Json options = Json::object();
  options["model"] = opt.model;
  options["manifest"] = opt.manifest;
  options["csv"] = opt.csv;
  options["maps_dir"] = opt.maps_dir;
  RunEnvelope env = make_envelope("score", std::move(options), cfg);
  std::uint64_t ih = hash_manifest_inputs(m, opt.manifest);
  if (opt.model != "oracle" && opt.model != "gaussian")
    ih = mix_hash(ih, fnv1a64(read_file(opt.model)));
  env.input_hash = hex64(ih);
  env.outputs = {opt.csv};
  write_sidecar(opt.csv + ".run.json", env);
  const std::string dir = fs::path(opt.csv).parent_path().string();
  append_run_record(dir.empty() ? "." : dir, env);

  out << "score: " << records.size() << " records -> " << opt.csv << "\n";
}

// ---------------------------------------------------------------------------
// protocol

struct ProtocolOptions {
  std::string manifest;
  std::string report;
};

int cmd_protocol(const RunConfig& cfg, const ProtocolOptions& opt, std::ostream& out,
                 std::ostream& err) {
  const DatasetManifest m = load_manifest(opt.manifest);
  const DetectorSpec spec = detector_spec_of(cfg);
  ProtocolConfig pc;
  pc.folds = cfg.folds;
  pc.seed = cfg.seed;
  pc.criterion = criterion_from_name(cfg.criterion);
  pc.cost_fp = cfg.cost_fp;
  pc.cost_fn = cfg.cost_fn;
  pc.nominal_train_fraction = cfg.nominal_train_fraction;
  pc.bootstrap_samples = cfg.bootstrap_samples;
  pc.ci_level = cfg.ci_level;

  ProtocolFailure failure;
  const RiskReport report = run_protocol(m, make_detector_factory(spec), pc, &failure);

  Json options = Json::object();
  options["manifest"] = opt.manifest;
  options["report"] = opt.report;
  RunEnvelope env = make_envelope("protocol", std::move(options), cfg);
  env.input_hash = hex64(hash_manifest_inputs(m, opt.manifest));
  env.outputs = {opt.report};

  ReportDocument doc;
  doc.detector = cfg.detector;
  doc.dataset = opt.manifest;
  doc.config_hash = env.config_hash;
  doc.input_hash = env.input_hash;
  doc.effective_config = envelope_json(env);
  doc.report = report;
  if (!failure.message.empty()) doc.failure = failure;

  write_file_atomic(opt.report, report_to_json(doc).dump(2) + "\n");
  const std::string dir = fs::path(opt.report).parent_path().string();
  append_run_record(dir.empty() ? "." : dir, env);

  out << render_table(doc);
  if (doc.failure) {
    err << "error: " << doc.failure->message << "\n";
    return doc.failure->numeric ? 2 : 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// report

struct ReportOptions {
  std::string report;
  std::string out_dir;
};

void cmd_report(const RunConfig& cfg, const ReportOptions& opt, std::ostream& out) {
  Json j;
  ReportDocument doc;
  try {
    j = Json::parse(read_file(opt.report));
    doc = report_from_json(j);
  } catch (const Json::exception& e) {
    throw ValidationError("report: malformed report " + opt.report + ": " + e.what());
  }
  fs::create_directories(opt.out_dir);

  const fs::path dir(opt.out_dir);
  write_file_atomic((dir / "roc.svg").string(), render_roc_svg(doc));
  write_file_atomic((dir / "scores.svg").string(), render_score_histogram_svg(doc));
  write_file_atomic((dir / "metrics.svg").string(), render_metric_bars_svg(doc));
  write_file_atomic((dir / "summary.md").string(), render_markdown(doc));

  Json options = Json::object();
  options["report"] = opt.report;
  options["out_dir"] = opt.out_dir;
  RunEnvelope env = make_envelope("report", std::move(options), cfg);
  env.input_hash = hex64(fnv1a64(read_file(opt.report)));
  env.outputs = {(dir / "roc.svg").string(), (dir / "scores.svg").string(),
                 (dir / "metrics.svg").string(), (dir / "summary.md").string()};
  write_sidecar((dir / "run_config.json").string(), env);
  append_run_record(opt.out_dir, env);

  out << "report: wrote roc.svg, scores.svg, metrics.svg, summary.md -> " << opt.out_dir
      << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"anomaly detection workbench"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  int jobs = 0;
  bool force = false;
  auto* opt_config = app.add_option("--config", config_path, "JSON config file");
  auto* opt_seed = app.add_option("--seed", seed, "global RNG seed");
  auto* opt_jobs = app.add_option("--jobs", jobs, "worker thread cap");
  auto* opt_force = app.add_flag("--force", force, "recompute outputs that already exist");

  PrepOptions prep;
  auto* prep_cmd = app.add_subcommand("prep", "stage a dataset: mask, rotate, center-embed");
  prep_cmd->fallthrough();
  prep_cmd->add_option("manifest", prep.manifest, "input manifest (JSONL)")->required();
  prep_cmd->add_option("out_dir", prep.out_dir, "output dataset directory")->required();
  prep_cmd->add_flag("--mask", prep.mask, "zero background pixels using each record's mask");
  prep_cmd->add_flag("--center-embed", prep.center_embed,
                     "center each object on the measured canvas");
  prep_cmd->add_option("--rotate", prep.rotate,
                       "append rotated copies; comma-separated angles from {90,180,270}");

  FeaturesOptions features;
  auto* features_cmd = app.add_subcommand("features", "extract multi-scale feature files");
  features_cmd->fallthrough();
  features_cmd->add_option("manifest", features.manifest, "input manifest (JSONL)")->required();
  features_cmd->add_option("out_dir", features.out_dir, "output feature directory")->required();

  TrainOptions train;
  std::string train_detector;
  int train_epochs = 0;
  auto* train_cmd = app.add_subcommand("train", "train a detector on nominal records");
  train_cmd->fallthrough();
  train_cmd->add_option("manifest", train.manifest, "training manifest (images or features)")
      ->required();
  train_cmd->add_option("model", train.model, "output checkpoint path")->required();
  auto* opt_train_detector =
      train_cmd->add_option("--detector", train_detector, "flow | discriminator");
  auto* opt_train_epochs = train_cmd->add_option("--epochs", train_epochs, "training epochs");

  ScoreOptions score;
  auto* score_cmd = app.add_subcommand("score", "score records with a trained model");
  score_cmd->fallthrough();
  score_cmd->add_option("model", score.model, "checkpoint path, or \"oracle\"/\"gaussian\"")
      ->required();
  score_cmd->add_option("manifest", score.manifest, "manifest to score (images or features)")
      ->required();
  score_cmd->add_option("csv", score.csv, "output score CSV")->required();
  score_cmd->add_option("--maps", score.maps_dir, "also write localization maps here");

  ProtocolOptions protocol;
  std::string protocol_detector;
  int protocol_folds = 0;
  auto* protocol_cmd =
      app.add_subcommand("protocol", "run the repeated-resampling risk protocol");
  protocol_cmd->fallthrough();
  protocol_cmd->add_option("manifest", protocol.manifest, "dataset manifest")->required();
  protocol_cmd->add_option("report", protocol.report, "output report JSON")->required();
  auto* opt_protocol_detector = protocol_cmd->add_option(
      "--detector", protocol_detector, "flow | discriminator | oracle | gaussian");
  auto* opt_protocol_folds =
      protocol_cmd->add_option("--folds", protocol_folds, "number of folds (K)");

  ReportOptions report;
  auto* report_cmd = app.add_subcommand("report", "render plots and a summary from a report");
  report_cmd->fallthrough();
  report_cmd->add_option("report", report.report, "report JSON from the protocol command")
      ->required();
  report_cmd->add_option("out_dir", report.out_dir, "output directory")->required();

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("adw");
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    RunConfig cfg;
    if (opt_config->count()) apply_config_file(cfg, config_path);
    if (opt_seed->count()) cfg.seed = seed;
    if (opt_jobs->count()) cfg.jobs = jobs;
    if (opt_force->count()) cfg.force = force;
    if (opt_train_detector->count()) cfg.detector = train_detector;
    if (opt_protocol_detector->count()) cfg.detector = protocol_detector;
    if (opt_train_epochs->count()) cfg.epochs = train_epochs;
    if (opt_protocol_folds->count()) cfg.folds = protocol_folds;
    set_threads(cfg.jobs);

    if (prep_cmd->parsed()) cmd_prep(cfg, prep, out);
    else if (features_cmd->parsed()) cmd_features(cfg, features, out);
    else if (train_cmd->parsed()) cmd_train(cfg, train, out);
    else if (score_cmd->parsed()) cmd_score(cfg, score, out);
    else if (protocol_cmd->parsed()) return cmd_protocol(cfg, protocol, out, err);
    else if (report_cmd->parsed()) cmd_report(cfg, report, out);
    return 0;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace adw::cli
