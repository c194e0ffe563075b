#include "adw/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "adw/errors.hpp"

namespace adw {

namespace {

void put_raw(std::ofstream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u8(std::ofstream& os, std::uint8_t v) { put_raw(os, &v, 1); }

void put_u16(std::ofstream& os, std::uint16_t v) {
  const std::uint8_t b[2] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8)};
  put_raw(os, b, 2);
}

void put_u32(std::ofstream& os, std::uint32_t v) {
  std::uint8_t b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
  put_raw(os, b, 4);
}

void put_u64(std::ofstream& os, std::uint64_t v) {
  std::uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
  put_raw(os, b, 8);
}

void put_f64(std::ofstream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(os, bits);
}

void get_raw(std::ifstream& is, void* p, std::size_t n, const std::string& path) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw ValidationError("checkpoint truncated: " + path);
}

std::uint8_t get_u8(std::ifstream& is, const std::string& path) {
  std::uint8_t v;
  get_raw(is, &v, 1, path);
  return v;
}

std::uint16_t get_u16(std::ifstream& is, const std::string& path) {
  std::uint8_t b[2];
  get_raw(is, b, 2, path);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::ifstream& is, const std::string& path) {
  std::uint8_t b[4];
  get_raw(is, b, 4, path);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::ifstream& is, const std::string& path) {
  std::uint8_t b[8];
  get_raw(is, b, 8, path);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::ifstream& is, const std::string& path) {
  const std::uint64_t bits = get_u64(is, path);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

constexpr std::uint16_t kVersion = 1;

std::uint8_t act_tag(Activation a) {
  switch (a) {
    case Activation::identity: return 0;
    case Activation::relu: return 1;
    case Activation::tanh: return 2;
  }
  throw ValidationError("unknown activation");
}

Activation act_from_tag(std::uint8_t t, const std::string& path) {
  switch (t) {
    case 0: return Activation::identity;
    case 1: return Activation::relu;
    case 2: return Activation::tanh;
  }
  throw ValidationError("bad activation tag in checkpoint: " + path);
}

void put_mlp(std::ofstream& os, const MlpParams& p) {
  put_u32(os, static_cast<std::uint32_t>(p.layers.size()));
  for (const MlpLayer& l : p.layers) {
    put_u32(os, static_cast<std::uint32_t>(l.in_dim));
    put_u32(os, static_cast<std::uint32_t>(l.out_dim));
    put_u8(os, act_tag(l.act));
    for (double w : l.weights) put_f64(os, w);
    for (double b : l.bias) put_f64(os, b);
  }
}

MlpParams get_mlp(std::ifstream& is, const std::string& path) {
  MlpParams p;
  const std::uint32_t n = get_u32(is, path);
  p.layers.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    MlpLayer l;
    l.in_dim = static_cast<int>(get_u32(is, path));
    l.out_dim = static_cast<int>(get_u32(is, path));
    if (l.in_dim < 1 || l.out_dim < 1 || l.in_dim > (1 << 20) || l.out_dim > (1 << 20))
      throw ValidationError("implausible layer dims in checkpoint: " + path);
    l.act = act_from_tag(get_u8(is, path), path);
    l.weights.resize(static_cast<std::size_t>(l.in_dim) * l.out_dim);
    l.bias.resize(static_cast<std::size_t>(l.out_dim));
    for (double& w : l.weights) w = get_f64(is, path);
    for (double& b : l.bias) b = get_f64(is, path);
    p.layers.push_back(std::move(l));
  }
  p.validate();
  return p;
}

void put_standardizer(std::ofstream& os, const Standardizer& st) {
  put_u32(os, static_cast<std::uint32_t>(st.mean.size()));
  for (std::size_t s = 0; s < st.mean.size(); ++s) {
    put_u32(os, static_cast<std::uint32_t>(st.mean[s].size()));
    for (double m : st.mean[s]) put_f64(os, m);
    for (double d : st.stddev[s]) put_f64(os, d);
  }
}

Standardizer get_standardizer(std::ifstream& is, const std::string& path) {
  Standardizer st;
  const std::uint32_t scales = get_u32(is, path);
  st.mean.resize(scales);
  st.stddev.resize(scales);
  for (std::uint32_t s = 0; s < scales; ++s) {
    const std::uint32_t channels = get_u32(is, path);
    st.mean[s].resize(channels);
    st.stddev[s].resize(channels);
    for (double& m : st.mean[s]) m = get_f64(is, path);
    for (double& d : st.stddev[s]) d = get_f64(is, path);
  }
  return st;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ValidationError("cannot write checkpoint: " + path);
  os.write("ADWM", 4);
  put_u16(os, kVersion);
  return os;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read checkpoint: " + path);
  char magic[4];
  get_raw(is, magic, 4, path);
  if (std::memcmp(magic, "ADWM", 4) != 0)
    throw ValidationError("bad checkpoint magic: " + path);
  const std::uint16_t version = get_u16(is, path);
  if (version != kVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(version) +
                          ": " + path);
  return is;
}

}  // namespace

const char* model_kind_name(ModelKind kind) {
  return kind == ModelKind::flow ? "flow" : "discriminator";
}

ModelKind checkpoint_kind(const std::string& path) {
  std::ifstream is = open_in(path);
  const std::uint8_t tag = get_u8(is, path);
  if (tag > 1) throw ValidationError("unknown model kind in checkpoint: " + path);
  return static_cast<ModelKind>(tag);
}

void save_checkpoint(const std::string& path, const CouplingFlow& flow,
                     const Standardizer& standardizer) {
  std::ofstream os = open_out(path);
  put_u8(os, static_cast<std::uint8_t>(ModelKind::flow));
  put_u32(os, static_cast<std::uint32_t>(flow.config.dim));
  put_u32(os, static_cast<std::uint32_t>(flow.config.num_scales));
  put_u32(os, static_cast<std::uint32_t>(flow.config.num_blocks));
  put_u32(os, static_cast<std::uint32_t>(flow.config.hidden));
  put_f64(os, flow.config.alpha);
  put_u8(os, flow.config.cross_scale ? 1 : 0);
  put_u64(os, flow.config.seed);
  put_u32(os, static_cast<std::uint32_t>(flow.blocks.size()));
  for (const CouplingBlock& b : flow.blocks) {
    put_u32(os, static_cast<std::uint32_t>(b.permutation.size()));
    for (int v : b.permutation) put_u32(os, static_cast<std::uint32_t>(v));
    put_mlp(os, b.cond_s);
    put_mlp(os, b.cond_t);
    put_f64(os, b.alpha);
    put_u8(os, b.cross_scale ? 1 : 0);
  }
  put_standardizer(os, standardizer);
  if (!os) throw ValidationError("failed writing checkpoint: " + path);
}

void save_checkpoint(const std::string& path, const AdaptorDiscriminator& model) {
  model.validate();
  std::ofstream os = open_out(path);
  put_u8(os, static_cast<std::uint8_t>(ModelKind::discriminator));
  put_mlp(os, model.adaptor);
  put_mlp(os, model.discriminator);
  if (!os) throw ValidationError("failed writing checkpoint: " + path);
}

FlowCheckpoint load_flow_checkpoint(const std::string& path) {
  std::ifstream is = open_in(path);
  const std::uint8_t tag = get_u8(is, path);
  if (tag != static_cast<std::uint8_t>(ModelKind::flow))
    throw ValidationError("checkpoint is not a flow model: " + path);

  FlowCheckpoint out;
  out.flow.config.dim = static_cast<int>(get_u32(is, path));
  out.flow.config.num_scales = static_cast<int>(get_u32(is, path));
  out.flow.config.num_blocks = static_cast<int>(get_u32(is, path));
  out.flow.config.hidden = static_cast<int>(get_u32(is, path));
  out.flow.config.alpha = get_f64(is, path);
  out.flow.config.cross_scale = get_u8(is, path) != 0;
  out.flow.config.seed = get_u64(is, path);
  const std::uint32_t nblocks = get_u32(is, path);
  if (nblocks > (1u << 16)) throw ValidationError("implausible block count: " + path);
  out.flow.blocks.reserve(nblocks);
  for (std::uint32_t i = 0; i < nblocks; ++i) {
    CouplingBlock b;
    const std::uint32_t perm = get_u32(is, path);
    if (perm != static_cast<std::uint32_t>(out.flow.config.dim))
      throw ValidationError("permutation size does not match flow dim: " + path);
    b.permutation.resize(perm);
    for (std::uint32_t j = 0; j < perm; ++j)
      b.permutation[j] = static_cast<int>(get_u32(is, path));
    b.cond_s = get_mlp(is, path);
    b.cond_t = get_mlp(is, path);
    b.alpha = get_f64(is, path);
    b.cross_scale = get_u8(is, path) != 0;
    out.flow.blocks.push_back(std::move(b));
  }
  out.standardizer = get_standardizer(is, path);
  return out;
}

DiscCheckpoint load_disc_checkpoint(const std::string& path) {
  std::ifstream is = open_in(path);
  const std::uint8_t tag = get_u8(is, path);
  if (tag != static_cast<std::uint8_t>(ModelKind::discriminator))
    throw ValidationError("checkpoint is not a discriminator model: " + path);
  DiscCheckpoint out;
  out.model.adaptor = get_mlp(is, path);
  out.model.discriminator = get_mlp(is, path);
  out.model.validate();
  return out;
}

}  // namespace adw
