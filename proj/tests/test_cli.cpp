#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "adw/checkpoint.hpp"
#include "adw/cli.hpp"
#include "adw/dataprep.hpp"
#include "adw/detectors.hpp"
#include "adw/eval.hpp"
#include "adw/features.hpp"
#include "adw/image.hpp"
#include "adw/report.hpp"
#include "test_util.hpp"

using namespace adw;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliResult r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

// Gray .pgm with a deterministic noise texture plus an optional bright patch.
void write_noise_image(const std::string& path, int w, int h, std::uint64_t seed,
                       bool bright_patch) {
  Image img;
  img.width = w;
  img.height = h;
  img.channels = 1;
  img.data.resize(static_cast<std::size_t>(w) * h);
  std::uint64_t s = seed * 0x9e3779b97f4a7c15ULL + 1;
  for (auto& v : img.data) {
    s ^= s << 13;
    s ^= s >> 7;
    s ^= s << 17;
    v = static_cast<unsigned char>(60 + (s % 61));
  }
  if (bright_patch)
    for (int y = h / 3; y < h / 3 + 4; ++y)
      for (int x = w / 3; x < w / 3 + 4; ++x) img.at(x, y, 0) = 250;
  write_image(path, img);
}

void write_rect_mask(const std::string& path, int w, int h, int x0, int y0, int bw,
                     int bh) {
  Mask m(w, h);
  for (int y = y0; y < y0 + bh; ++y)
    for (int x = x0; x < x0 + bw; ++x) m.set(x, y, true);
  write_mask(path, m);
}

// 6 objects x 2 records, 16x16 gray images with full-ish rectangular masks.
// Objects 4 and 5 are anomalous (bright patch).
std::string make_toy_dataset(const fs::path& dir) {
  fs::create_directories(dir);
  std::ostringstream manifest;
  for (int o = 0; o < 6; ++o) {
    const bool anom = o >= 4;
    for (int r = 0; r < 2; ++r) {
      const std::string sid = "o" + std::to_string(o) + "_r" + std::to_string(r);
      write_noise_image((dir / (sid + ".pgm")).string(), 16, 16,
                        static_cast<std::uint64_t>(o * 10 + r), anom);
      write_rect_mask((dir / (sid + "_mask.pgm")).string(), 16, 16, 2, 2, 12, 12);
      manifest << "{\"sample_id\":\"" << sid << "\",\"object_id\":\"o" << o
               << "\",\"label\":\"" << (anom ? "anomalous" : "nominal")
               << "\",\"image\":\"" << sid << ".pgm\",\"mask\":\"" << sid
               << "_mask.pgm\"}\n";
    }
  }
  const std::string path = (dir / "manifest.jsonl").string();
  write_text(path, manifest.str());
  return path;
}

int count_files_with_ext(const fs::path& dir, const std::string& ext) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) ++n;
  return n;
}

}  // namespace

TEST_CASE("help exits clean and bad invocations exit with the validation code") {
  CliResult help = run_cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("prep") != std::string::npos);
  CHECK(help.out.find("protocol") != std::string::npos);

  CHECK(run_cli({}).code == 1);
  CHECK(run_cli({"bogus-subcommand"}).code == 1);
  CHECK(run_cli({"train"}).code == 1);  // missing positionals
}

TEST_CASE("prep without flags stages records byte-for-byte") {
  testutil::TempDir dir("cli_prep_plain");
  const std::string manifest = make_toy_dataset(dir.path() / "ds");
  const std::string out_dir = dir.file("staged");

  CliResult r = run_cli({"prep", manifest, out_dir});
  REQUIRE(r.code == 0);
  CHECK(r.err.empty());

  const DatasetManifest src = load_manifest(manifest);
  const DatasetManifest got = load_manifest(out_dir + "/manifest.jsonl");
  REQUIRE(got.records.size() == src.records.size());
  CHECK(!got.canvas.has_value());
  for (std::size_t i = 0; i < src.records.size(); ++i) {
    CHECK(got.records[i].sample_id == src.records[i].sample_id);
    CHECK(got.records[i].label == src.records[i].label);
    CHECK(read_all(got.resolve(got.records[i].image)) ==
          read_all(src.resolve(src.records[i].image)));
  }
}

TEST_CASE("prep --center-embed echoes the componentwise max canvas") {
  testutil::TempDir dir("cli_prep_ce");
  const fs::path ds = dir.path() / "ds";
  fs::create_directories(ds);
  // bboxes 8x3 and 5x6; componentwise max canvas is 8x6
  write_noise_image((ds / "a.pgm").string(), 12, 10, 1, false);
  write_rect_mask((ds / "a_mask.pgm").string(), 12, 10, 1, 2, 8, 3);
  write_noise_image((ds / "b.pgm").string(), 12, 10, 2, false);
  write_rect_mask((ds / "b_mask.pgm").string(), 12, 10, 3, 1, 5, 6);
  write_text((ds / "m.jsonl").string(),
             "{\"sample_id\":\"a\",\"object_id\":\"a\",\"label\":\"nominal\","
             "\"image\":\"a.pgm\",\"mask\":\"a_mask.pgm\"}\n"
             "{\"sample_id\":\"b\",\"object_id\":\"b\",\"label\":\"nominal\","
             "\"image\":\"b.pgm\",\"mask\":\"b_mask.pgm\"}\n");

  const std::string out_dir = dir.file("staged");
  CliResult r = run_cli({"prep", (ds / "m.jsonl").string(), out_dir, "--center-embed"});
  REQUIRE(r.code == 0);

  const DatasetManifest got = load_manifest(out_dir + "/m.jsonl");
  REQUIRE(got.canvas.has_value());
  CHECK(got.canvas->width == 8);
  CHECK(got.canvas->height == 6);
  for (const SampleRecord& rec : got.records) {
    const Image img = read_image(got.resolve(rec.image));
    CHECK(img.width == 8);
    CHECK(img.height == 6);
  }
}

TEST_CASE("prep rejects a duplicate rotation angle") {
  testutil::TempDir dir("cli_prep_dup");
  const std::string manifest = make_toy_dataset(dir.path() / "ds");
  CliResult r = run_cli({"prep", manifest, dir.file("staged"), "--rotate", "180,180"});
  CHECK(r.code == 1);
  CHECK(r.err.find("duplicate angle") != std::string::npos);
}

TEST_CASE("features on an empty manifest writes no feature files") {
  testutil::TempDir dir("cli_feat_empty");
  const std::string manifest = dir.file("empty.jsonl");
  write_text(manifest, "");

  CliResult r = run_cli({"features", manifest, dir.file("feat")});
  CHECK(r.code == 0);
  CHECK(count_files_with_ext(dir.path() / "feat", ".adwf") == 0);
  CHECK(load_manifest(dir.file("feat") + "/features.jsonl").records.empty());
}

TEST_CASE("features writes one readable file per sample with extractor shapes") {
  testutil::TempDir dir("cli_feat_shape");
  const fs::path ds = dir.path() / "ds";
  fs::create_directories(ds);
  std::ostringstream manifest;
  for (int i = 0; i < 3; ++i) {
    const std::string sid = "s" + std::to_string(i);
    write_noise_image((ds / (sid + ".pgm")).string(), 16, 16, 100 + i, false);
    manifest << "{\"sample_id\":\"" << sid << "\",\"object_id\":\"" << sid
             << "\",\"label\":\"nominal\",\"image\":\"" << sid << ".pgm\"}\n";
  }
  write_text((ds / "m.jsonl").string(), manifest.str());

  const std::string feat_dir = dir.file("feat");
  CliResult r = run_cli({"features", (ds / "m.jsonl").string(), feat_dir});
  REQUIRE(r.code == 0);
  CHECK(count_files_with_ext(feat_dir, ".adwf") == 3);

  const ExtractorConfig ecfg;  // cli defaults match the library defaults
  for (int i = 0; i < 3; ++i) {
    const std::string sid = "s" + std::to_string(i);
    const MultiScaleFeatures got = read_features(feat_dir + "/" + sid + ".adwf");
    const MultiScaleFeatures want =
        extract_features(read_image((ds / (sid + ".pgm")).string()), ecfg);
    REQUIRE(got.scales.size() == want.scales.size());
    for (std::size_t s = 0; s < want.scales.size(); ++s) {
      CHECK(got.scales[s].channels == want.scales[s].channels);
      CHECK(got.scales[s].height == want.scales[s].height);
      CHECK(got.scales[s].width == want.scales[s].width);
      CHECK(got.scales[s].data == want.scales[s].data);
    }
  }

  // the features manifest loads and points at the feature files
  const DatasetManifest fm = load_manifest(feat_dir + "/features.jsonl");
  REQUIRE(fm.records.size() == 3);
  for (const SampleRecord& rec : fm.records)
    CHECK(rec.image.find(".adwf") != std::string::npos);
}

TEST_CASE("features rerun without --force leaves existing files untouched") {
  testutil::TempDir dir("cli_feat_skip");
  const std::string manifest = make_toy_dataset(dir.path() / "ds");
  const std::string feat_dir = dir.file("feat");

  REQUIRE(run_cli({"features", manifest, feat_dir}).code == 0);
  std::vector<fs::file_time_type> before;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(feat_dir))
    if (e.path().extension() == ".adwf") {
      files.push_back(e.path());
      before.push_back(fs::last_write_time(e.path()));
    }
  REQUIRE(files.size() == 12);

  CliResult again = run_cli({"features", manifest, feat_dir});
  REQUIRE(again.code == 0);
  CHECK(again.out.find("skipped 12") != std::string::npos);
  for (std::size_t i = 0; i < files.size(); ++i)
    CHECK(fs::last_write_time(files[i]) == before[i]);

  CliResult forced = run_cli({"--force", "features", manifest, feat_dir});
  REQUIRE(forced.code == 0);
  CHECK(forced.out.find("wrote 12") != std::string::npos);
}

TEST_CASE("train with zero epochs checkpoints the initial model") {
  testutil::TempDir dir("cli_train0");
  const std::string manifest = make_toy_dataset(dir.path() / "ds");
  const std::string model = dir.file("model.adwm");

  CliResult r = run_cli({"--seed", "5", "train", manifest, model, "--epochs", "0"});
  REQUIRE(r.code == 0);

  const FlowCheckpoint ck = load_flow_checkpoint(model);
  const MultiScaleFeatures f = extract_features(
      read_image((dir.path() / "ds" / "o0_r0.pgm").string()), ExtractorConfig{.seed = 5});
  const double score = flow_sample_score(ck.flow, ck.standardizer, f);
  CHECK(std::isfinite(score));

  CHECK(read_all(model + ".loss.csv") == "epoch,loss\n");
}

TEST_CASE("train reruns with a fixed seed write identical bytes") {
  testutil::TempDir dir("cli_train_seed");
  const std::string manifest = make_toy_dataset(dir.path() / "ds");
  const std::string model = dir.file("model.adwm");
  const std::vector<std::string> args = {"--seed", "7",         "train", manifest,
                                         model,    "--epochs", "2"};

  REQUIRE(run_cli(args).code == 0);
  const std::string ck1 = read_all(model);
  const std::string loss1 = read_all(model + ".loss.csv");

  REQUIRE(run_cli(args).code == 0);
  CHECK(read_all(model) == ck1);
  CHECK(read_all(model + ".loss.csv") == loss1);
}

TEST_CASE("train loss history descends on the toy set") {
  testutil::TempDir dir("cli_train_loss");
  const std::string manifest = make_toy_dataset(dir.path() / "ds");
  const std::string model = dir.file("model.adwm");

  REQUIRE(run_cli({"--seed", "3", "train", manifest, model, "--epochs", "4"}).code == 0);

  std::ifstream csv(model + ".loss.csv");
  std::string line;
  REQUIRE(std::getline(csv, line));
  CHECK(line == "epoch,loss");
  std::vector<double> losses;
  while (std::getline(csv, line)) {
    const auto comma = line.find(',');
    REQUIRE(comma != std::string::npos);
    losses.push_back(std::stod(line.substr(comma + 1)));
  }
  REQUIRE(losses.size() == 4);
  CHECK(losses.back() < losses.front());
}

TEST_CASE("score on an empty manifest writes the bare header") {
  testutil::TempDir dir("cli_score_empty");
  const std::string manifest = dir.file("empty.jsonl");
  write_text(manifest, "");
  const std::string csv = dir.file("scores.csv");

  CliResult r = run_cli({"score", "oracle", manifest, csv});
  REQUIRE(r.code == 0);
  CHECK(read_all(csv) == "sample_id,label,score\n");
}

TEST_CASE("scoring the training set with a flow keeps every score finite") {
  testutil::TempDir dir("cli_score_flow");
  const std::string manifest = make_toy_dataset(dir.path() / "ds");
  const std::string model = dir.file("model.adwm");
  const std::string csv = dir.file("scores.csv");

  REQUIRE(run_cli({"--seed", "9", "train", manifest, model, "--epochs", "2"}).code == 0);
  const std::string maps_dir = dir.file("maps");
  CliResult r = run_cli({"score", model, manifest, csv, "--maps", maps_dir});
  REQUIRE(r.code == 0);

  const std::vector<ScoreRecord> scores = load_scores_csv(csv);
  REQUIRE(scores.size() == 12);
  for (const ScoreRecord& s : scores) CHECK(std::isfinite(s.score));

  // one single-scale localization container per sample
  CHECK(count_files_with_ext(maps_dir, ".adwf") == 12);
  const MultiScaleFeatures map = read_features(maps_dir + "/o0_r0.adwf");
  REQUIRE(map.scales.size() == 1);
  CHECK(map.scales[0].channels == 1);
}

TEST_CASE("oracle scores separate the toy labels perfectly") {
  testutil::TempDir dir("cli_score_oracle");
  const std::string manifest = make_toy_dataset(dir.path() / "ds");
  const std::string csv = dir.file("scores.csv");

  REQUIRE(run_cli({"score", "oracle", manifest, csv}).code == 0);
  const std::vector<ScoreRecord> records = load_scores_csv(csv);
  REQUIRE(records.size() == 12);
  std::vector<double> scores;
  std::vector<Label> labels;
  for (const ScoreRecord& r : records) {
    scores.push_back(r.score);
    labels.push_back(r.label);
  }
  CHECK(auroc(scores, labels) == 1.0);

  CliResult maps = run_cli({"score", "oracle", manifest, csv, "--maps", dir.file("m")});
  CHECK(maps.code == 1);  // pseudo detectors have no localization
}

TEST_CASE("protocol with one fold and the oracle reports perfect metrics") {
  testutil::TempDir dir("cli_proto_oracle");
  const std::string manifest = make_toy_dataset(dir.path() / "ds");
  const std::string report = dir.file("report.json");

  CliResult r = run_cli(
      {"--seed", "11", "protocol", manifest, report, "--detector", "oracle", "--folds", "1"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("oracle") != std::string::npos);

  const ReportDocument doc = report_from_json(Json::parse(read_all(report)));
  CHECK(doc.detector == "oracle");
  CHECK(!doc.failure.has_value());
  REQUIRE(doc.report.folds.size() == 1);
  CHECK(doc.report.summary.at("auroc_inference").mean == 1.0);
  CHECK(doc.report.summary.at("f1").mean == 1.0);
  CHECK(doc.report.summary.at("tpr").mean == 1.0);
  CHECK(doc.report.summary.at("fpr").mean == 0.0);
}

TEST_CASE("identical protocol invocations regenerate byte-identical reports") {
  testutil::TempDir dir("cli_proto_repeat");
  const std::string manifest = make_toy_dataset(dir.path() / "ds");
  const std::string report = dir.file("report.json");
  const std::vector<std::string> args = {"--seed",     "42",       "protocol", manifest,
                                         report,       "--detector", "gaussian",
                                         "--folds",    "3"};

  REQUIRE(run_cli(args).code == 0);
  const std::string bytes1 = read_all(report);
  fs::remove(report);

  REQUIRE(run_cli(args).code == 0);
  CHECK(read_all(report) == bytes1);

  // the effective config rides inside the report itself
  const Json doc = Json::parse(bytes1);
  CHECK(doc.at("effective_config").at("config").at("seed").get<std::uint64_t>() == 42);
  CHECK(doc.at("config_hash").get<std::string>().size() == 16);
}

TEST_CASE("gaussian protocol mean lands near the analytic value") {
  testutil::TempDir dir("cli_proto_gauss");
  const fs::path ds = dir.path() / "ds";
  fs::create_directories(ds);
  std::ostringstream manifest;
  auto add = [&](const std::string& oid, const char* label, int count) {
    for (int r = 0; r < count; ++r) {
      const std::string sid = oid + "_" + std::to_string(r);
      write_text((ds / (sid + ".png")).string(), "x");
      manifest << "{\"sample_id\":\"" << sid << "\",\"object_id\":\"" << oid
               << "\",\"label\":\"" << label << "\",\"image\":\"" << sid << ".png\"}\n";
    }
  };
  for (int o = 0; o < 8; ++o) add("anom" + std::to_string(o), "anomalous", 12);
  for (int o = 0; o < 24; ++o) add("nom" + std::to_string(o), "nominal", 12);
  write_text((ds / "m.jsonl").string(), manifest.str());

  const std::string report = dir.file("report.json");
  CliResult r = run_cli({"--seed", "5", "protocol", (ds / "m.jsonl").string(), report,
                         "--detector", "gaussian", "--folds", "10"});
  REQUIRE(r.code == 0);

  const ReportDocument doc = report_from_json(Json::parse(read_all(report)));
  const double analytic = 0.5 * std::erfc(-1.0);  // Phi(sqrt(2))
  CHECK(std::abs(doc.report.summary.at("auroc_inference").mean - analytic) <= 0.03);
}

TEST_CASE("report renders a monotone one-fold roc polyline") {
  testutil::TempDir dir("cli_report_roc");
  const std::string manifest = make_toy_dataset(dir.path() / "ds");
  const std::string report = dir.file("report.json");
  REQUIRE(run_cli({"--seed", "2", "protocol", manifest, report, "--detector", "oracle",
                   "--folds", "1"})
              .code == 0);

  const std::string out_dir = dir.file("plots");
  REQUIRE(run_cli({"report", report, out_dir}).code == 0);

  const std::string svg = read_all(out_dir + "/roc.svg");
  const auto poly = svg.find("<polyline points=\"");
  REQUIRE(poly != std::string::npos);
  CHECK(svg.find("<polyline", poly + 1) == std::string::npos);  // exactly one fold

  const auto start = poly + std::string("<polyline points=\"").size();
  const std::string pts = svg.substr(start, svg.find('"', start) - start);
  std::istringstream ss(pts);
  std::string pair;
  double prev_x = -1e300, prev_y = 1e300;
  int n = 0;
  while (ss >> pair) {
    const auto comma = pair.find(',');
    REQUIRE(comma != std::string::npos);
    const double x = std::stod(pair.substr(0, comma));
    const double y = std::stod(pair.substr(comma + 1));
    CHECK(x >= prev_x - 1e-9);  // fpr non-decreasing
    CHECK(y <= prev_y + 1e-9);  // tpr non-decreasing; the svg y axis points down
    prev_x = x;
    prev_y = y;
    ++n;
  }
  CHECK(n >= 3);
}

TEST_CASE("disjoint class ranges get annotated in the histogram plot") {
  testutil::TempDir dir("cli_report_sep");
  const std::string manifest = make_toy_dataset(dir.path() / "ds");
  const std::string report = dir.file("report.json");
  REQUIRE(run_cli({"--seed", "2", "protocol", manifest, report, "--detector", "oracle",
                   "--folds", "1"})
              .code == 0);
  REQUIRE(run_cli({"report", report, dir.file("plots")}).code == 0);

  CHECK(read_all(dir.file("plots") + "/scores.svg").find("class score ranges are disjoint") !=
        std::string::npos);
}

TEST_CASE("report reruns emit byte-identical renderings") {
  testutil::TempDir dir("cli_report_repeat");
  const std::string manifest = make_toy_dataset(dir.path() / "ds");
  const std::string report = dir.file("report.json");
  REQUIRE(run_cli({"--seed", "8", "protocol", manifest, report, "--detector", "gaussian",
                   "--folds", "2"})
              .code == 0);

  REQUIRE(run_cli({"report", report, dir.file("a")}).code == 0);
  REQUIRE(run_cli({"report", report, dir.file("b")}).code == 0);
  for (const char* name : {"roc.svg", "scores.svg", "metrics.svg", "summary.md"})
    CHECK(read_all(dir.file("a") + "/" + name) == read_all(dir.file("b") + "/" + name));

  CliResult bad = run_cli({"report", manifest, dir.file("c")});
  CHECK(bad.code == 1);  // manifests are not reports
}

TEST_CASE("unknown config keys are rejected by name") {
  testutil::TempDir dir("cli_cfg_unknown");
  const std::string manifest = make_toy_dataset(dir.path() / "ds");
  write_text(dir.file("cfg.json"), "{\"epochz\": 2}\n");

  CliResult r = run_cli({"--config", dir.file("cfg.json"), "train", manifest,
                         dir.file("model.adwm")});
  CHECK(r.code == 1);
  CHECK(r.err.find("epochz") != std::string::npos);
}

TEST_CASE("flags override config file values") {
  testutil::TempDir dir("cli_cfg_prec");
  const std::string manifest = make_toy_dataset(dir.path() / "ds");
  const std::string model = dir.file("model.adwm");
  write_text(dir.file("cfg.json"), "{\"epochs\": 5, \"seed\": 4}\n");

  CliResult r = run_cli({"--config", dir.file("cfg.json"), "train", manifest, model,
                         "--epochs", "2"});
  REQUIRE(r.code == 0);

  std::ifstream csv(model + ".loss.csv");
  std::string line;
  int rows = 0;
  std::getline(csv, line);
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 2);  // flag wins over the config file

  const Json sidecar = Json::parse(read_all(model + ".run.json"));
  CHECK(sidecar.at("config").at("epochs").get<int>() == 2);
  CHECK(sidecar.at("config").at("seed").get<std::uint64_t>() == 4);  // file wins over default
}

TEST_CASE("divergent training exits with the numeric failure code") {
  testutil::TempDir dir("cli_diverge");
  const std::string manifest = make_toy_dataset(dir.path() / "ds");
  write_text(dir.file("cfg.json"), "{\"epochs\": 4, \"learning_rate\": 1e200}\n");

  CliResult r = run_cli({"--config", dir.file("cfg.json"), "train", manifest,
                         dir.file("model.adwm")});
  CHECK(r.code == 2);
  CHECK(r.err.find("diverged") != std::string::npos);
}

TEST_CASE("a numeric fold failure yields a partial report and exit code 2") {
  testutil::TempDir dir("cli_proto_fail");
  const std::string manifest = make_toy_dataset(dir.path() / "ds");
  const std::string report = dir.file("report.json");
  write_text(dir.file("cfg.json"), "{\"epochs\": 4, \"learning_rate\": 1e200}\n");

  CliResult r = run_cli({"--config", dir.file("cfg.json"), "protocol", manifest, report,
                         "--detector", "flow", "--folds", "2"});
  CHECK(r.code == 2);
  CHECK(r.err.find("fold 0") != std::string::npos);

  const ReportDocument doc = report_from_json(Json::parse(read_all(report)));
  REQUIRE(doc.failure.has_value());
  CHECK(doc.failure->fold == 0);
  CHECK(doc.failure->numeric);
  CHECK(doc.report.folds.empty());
  CHECK(doc.report.summary.empty());
}
