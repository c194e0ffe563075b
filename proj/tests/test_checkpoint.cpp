#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "adw/checkpoint.hpp"
#include "adw/errors.hpp"
#include "adw/features.hpp"
#include "adw/flow.hpp"
#include "adw/rng.hpp"
#include "adw/synthdisc.hpp"
#include "test_util.hpp"

using namespace adw;

namespace {

// Fresh flows have zero conditioners; scatter real values into every layer so
// the round-trip test cannot pass by reproducing zeros.
void randomize_mlp(MlpParams& p, RngStream& rng) {
  for (MlpLayer& l : p.layers) {
    for (double& w : l.weights) w = rng.draw_normal();
    for (double& b : l.bias) b = rng.draw_normal();
  }
}

CouplingFlow sample_flow(std::uint64_t seed) {
  FlowConfig cfg;
  cfg.dim = 3;
  cfg.num_scales = 3;
  cfg.num_blocks = 3;
  cfg.hidden = 8;
  cfg.seed = seed;
  CouplingFlow flow = make_flow(cfg);
  RngStream rng = seeded_rng(seed).split(17);
  for (CouplingBlock& b : flow.blocks) {
    randomize_mlp(b.cond_s, rng);
    randomize_mlp(b.cond_t, rng);
  }
  return flow;
}

std::vector<VectorField> sample_fields(std::uint64_t seed) {
  RngStream rng = seeded_rng(seed);
  std::vector<VectorField> fields;
  int side = 8;
  for (int s = 0; s < 3; ++s, side /= 2) {
    VectorField f(side, side, 3);
    for (double& v : f.data) v = rng.draw_normal();
    fields.push_back(std::move(f));
  }
  return fields;
}

Standardizer sample_standardizer(std::uint64_t seed) {
  RngStream rng = seeded_rng(seed);
  std::vector<MultiScaleFeatures> batch(4);
  for (MultiScaleFeatures& ms : batch) {
    int side = 8;
    for (int s = 0; s < 3; ++s, side /= 2) {
      FeatureTensor t(3, side, side);
      for (float& v : t.data) v = static_cast<float>(rng.draw_uniform());
      ms.scales.push_back(std::move(t));
    }
  }
  return Standardizer::fit(batch);
}

void check_mlp_equal(const MlpParams& a, const MlpParams& b) {
  REQUIRE(a.layers.size() == b.layers.size());
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    CHECK(a.layers[i].in_dim == b.layers[i].in_dim);
    CHECK(a.layers[i].out_dim == b.layers[i].out_dim);
    CHECK(a.layers[i].act == b.layers[i].act);
    CHECK(a.layers[i].weights == b.layers[i].weights);  // bitwise
    CHECK(a.layers[i].bias == b.layers[i].bias);
  }
}

}  // namespace

TEST_CASE("flow checkpoint round-trips bitwise") {
  testutil::TempDir dir("ckpt_flow_rt");
  const std::string path = dir.file("flow.adwm");
  CouplingFlow flow = sample_flow(5);
  Standardizer st = sample_standardizer(9);
  save_checkpoint(path, flow, st);

  FlowCheckpoint loaded = load_flow_checkpoint(path);
  CHECK(loaded.flow.config.dim == flow.config.dim);
  CHECK(loaded.flow.config.num_scales == flow.config.num_scales);
  CHECK(loaded.flow.config.num_blocks == flow.config.num_blocks);
  CHECK(loaded.flow.config.hidden == flow.config.hidden);
  CHECK(loaded.flow.config.alpha == flow.config.alpha);
  CHECK(loaded.flow.config.cross_scale == flow.config.cross_scale);
  CHECK(loaded.flow.config.seed == flow.config.seed);
  REQUIRE(loaded.flow.blocks.size() == flow.blocks.size());
  for (std::size_t i = 0; i < flow.blocks.size(); ++i) {
    CHECK(loaded.flow.blocks[i].permutation == flow.blocks[i].permutation);
    CHECK(loaded.flow.blocks[i].alpha == flow.blocks[i].alpha);
    CHECK(loaded.flow.blocks[i].cross_scale == flow.blocks[i].cross_scale);
    check_mlp_equal(loaded.flow.blocks[i].cond_s, flow.blocks[i].cond_s);
    check_mlp_equal(loaded.flow.blocks[i].cond_t, flow.blocks[i].cond_t);
  }
  CHECK(loaded.standardizer.mean == st.mean);
  CHECK(loaded.standardizer.stddev == st.stddev);

  // same parameters, same code path: densities must match bit for bit
  std::vector<VectorField> x = sample_fields(123);
  LogDensityResult a = log_density(flow, x);
  LogDensityResult b = log_density(loaded.flow, x);
  CHECK(a.logp == b.logp);
  CHECK(a.logdet == b.logdet);
}

TEST_CASE("flow checkpoint with subnormal and extreme doubles") {
  testutil::TempDir dir("ckpt_edge");
  const std::string path = dir.file("edge.adwm");
  CouplingFlow flow = sample_flow(2);
  flow.blocks[0].cond_s.layers[0].weights[0] = 5e-324;   // min subnormal
  flow.blocks[0].cond_s.layers[0].weights[1] = -1.7976931348623157e308;
  flow.blocks[0].cond_t.layers[0].bias[0] = -0.0;
  Standardizer st;
  save_checkpoint(path, flow, st);
  FlowCheckpoint loaded = load_flow_checkpoint(path);
  CHECK(loaded.flow.blocks[0].cond_s.layers[0].weights[0] == 5e-324);
  CHECK(loaded.flow.blocks[0].cond_s.layers[0].weights[1] == -1.7976931348623157e308);
  CHECK(std::signbit(loaded.flow.blocks[0].cond_t.layers[0].bias[0]));
  CHECK(loaded.standardizer.mean.empty());
  CHECK(loaded.standardizer.stddev.empty());
}

TEST_CASE("discriminator checkpoint round-trips bitwise") {
  testutil::TempDir dir("ckpt_disc_rt");
  const std::string path = dir.file("disc.adwm");
  AdaptorDiscriminator model = make_adaptor_discriminator(5, 16, 3);
  RngStream rng = seeded_rng(3).split(42);
  randomize_mlp(model.adaptor, rng);
  randomize_mlp(model.discriminator, rng);
  save_checkpoint(path, model);

  DiscCheckpoint loaded = load_disc_checkpoint(path);
  check_mlp_equal(loaded.model.adaptor, model.adaptor);
  check_mlp_equal(loaded.model.discriminator, model.discriminator);

  VectorField f(4, 4, 5);
  RngStream fr = seeded_rng(77);
  for (double& v : f.data) v = fr.draw_normal();
  DiscScore a = disc_score(model, f);
  DiscScore b = disc_score(loaded.model, f);
  CHECK(a.image_score == b.image_score);
  CHECK(a.map.values == b.map.values);
}

TEST_CASE("kind probe reads only the header") {
  testutil::TempDir dir("ckpt_kind");
  const std::string fp = dir.file("f.adwm");
  const std::string dp = dir.file("d.adwm");
  save_checkpoint(fp, sample_flow(1), Standardizer{});
  save_checkpoint(dp, make_adaptor_discriminator(4, 8, 1));
  CHECK(checkpoint_kind(fp) == ModelKind::flow);
  CHECK(checkpoint_kind(dp) == ModelKind::discriminator);
  CHECK(std::string(model_kind_name(ModelKind::flow)) == "flow");
  CHECK(std::string(model_kind_name(ModelKind::discriminator)) == "discriminator");
}

TEST_CASE("loading the wrong kind names the path") {
  testutil::TempDir dir("ckpt_wrongkind");
  const std::string fp = dir.file("f.adwm");
  const std::string dp = dir.file("d.adwm");
  save_checkpoint(fp, sample_flow(1), Standardizer{});
  save_checkpoint(dp, make_adaptor_discriminator(4, 8, 1));
  try {
    load_flow_checkpoint(dp);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("not a flow") != std::string::npos);
    CHECK(msg.find(dp) != std::string::npos);
  }
  try {
    load_disc_checkpoint(fp);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("not a discriminator") != std::string::npos);
  }
}

TEST_CASE("bad magic is rejected") {
  testutil::TempDir dir("ckpt_magic");
  const std::string path = dir.file("junk.adwm");
  {
    std::ofstream os(path, std::ios::binary);
    os << "ADWXsomething else entirely";
  }
  try {
    checkpoint_kind(path);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("magic") != std::string::npos);
    CHECK(msg.find(path) != std::string::npos);
  }
}

TEST_CASE("unsupported version is rejected") {
  testutil::TempDir dir("ckpt_version");
  const std::string good = dir.file("good.adwm");
  save_checkpoint(good, sample_flow(1), Standardizer{});
  std::ifstream is(good, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  is.close();
  bytes[4] = 9;  // version field, little-endian u16 at offset 4
  const std::string bad = dir.file("future.adwm");
  {
    std::ofstream os(bad, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  try {
    load_flow_checkpoint(bad);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
}

TEST_CASE("truncated checkpoints name the path at any cut") {
  testutil::TempDir dir("ckpt_trunc");
  const std::string good = dir.file("good.adwm");
  save_checkpoint(good, sample_flow(4), sample_standardizer(4));
  std::ifstream is(good, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  is.close();
  REQUIRE(bytes.size() > 64);

  // cut at several depths: inside the header, the config, an mlp, the tail
  for (std::size_t cut : {std::size_t{2}, std::size_t{9}, bytes.size() / 3,
                          bytes.size() / 2, bytes.size() - 3}) {
    const std::string path = dir.file("cut" + std::to_string(cut) + ".adwm");
    std::ofstream os(path, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(cut));
    os.close();
    try {
      load_flow_checkpoint(path);
      FAIL("expected ValidationError at cut ", cut);
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("truncated") != std::string::npos);
      CHECK(msg.find(path) != std::string::npos);
    }
  }
}

TEST_CASE("missing file is reported as unreadable") {
  try {
    load_disc_checkpoint("/nonexistent/dir/model.adwm");
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("cannot read") != std::string::npos);
  }
}

TEST_CASE("saving to an unwritable path throws") {
  CHECK_THROWS_AS(save_checkpoint("/nonexistent/dir/m.adwm",
                                  make_adaptor_discriminator(4, 8, 1)),
                  ValidationError);
}
