#include "adw/synthdisc.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>

#include "adw/errors.hpp"
#include "adw/parallel.hpp"

namespace adw {

namespace {

double softplus(double l) {
  return std::max(l, 0.0) + std::log1p(std::exp(-std::abs(l)));
}

// Forward through adaptor then discriminator at one position.
double logit_at(const AdaptorDiscriminator& model, std::span<const double> x,
                MlpCache& ca, MlpCache& cd) {
  mlp_forward_cached(model.adaptor, x, ca);
  mlp_forward_cached(model.discriminator, ca.act.back(), cd);
  return cd.act.back()[0];
}

// Backward from d loss / d logit. Parameter gradients accumulate into
// ga/gd; the input gradient accumulates into input_grad when nonempty.
void backprop_at(const AdaptorDiscriminator& model, const MlpCache& ca, const MlpCache& cd,
                 double upstream, MlpGrads& ga, MlpGrads& gd, std::vector<double>& mid,
                 std::span<double> input_grad) {
  const double up[1] = {upstream};
  std::fill(mid.begin(), mid.end(), 0.0);
  mlp_backward(model.discriminator, cd, std::span<const double>(up, 1), gd, mid);
  mlp_backward(model.adaptor, ca, mid, ga, input_grad);
}

void check_field(const AdaptorDiscriminator& model, const VectorField& f, const char* who) {
  if (f.dim != model.feature_dim())
    throw ShapeError(std::string(who) + ": field dim " + std::to_string(f.dim) +
                     " does not match model feature dim " + std::to_string(model.feature_dim()));
  if (f.h < 1 || f.w < 1) throw ShapeError(std::string(who) + ": empty field");
}

GrayImage load_dir_texture(const std::string& dir, int width, int height, RngStream& rng) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  if (!fs::is_directory(dir))
    throw ValidationError("synth_local: texture directory not found: " + dir);
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path().string());
  if (files.empty())
    throw ValidationError("synth_local: texture directory is empty: " + dir);
  std::sort(files.begin(), files.end());
  const std::string& pick = files[rng.draw_index(files.size())];
  GrayImage src = to_gray(read_image(pick));
  GrayImage out(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out.at(x, y) = src.at(x % src.width, y % src.height);
  return out;
}

GrayImage make_texture(int width, int height, const SynthLocalConfig& cfg, RngStream& rng) {
  if (cfg.source == TextureSource::texture_dir)
    return load_dir_texture(cfg.texture_dir, width, height, rng);
  return value_noise(width, height, cfg.noise_cell, rng);
}

}  // namespace

void AdaptorDiscriminator::validate() const {
  adaptor.validate();
  discriminator.validate();
  if (adaptor.input_dim() != adaptor.output_dim())
    throw ValidationError("adaptor must be square (feature dim in == out)");
  if (discriminator.input_dim() != adaptor.output_dim())
    throw ValidationError("discriminator input dim must match the adaptor output");
  if (discriminator.output_dim() != 1)
    throw ValidationError("discriminator must emit a single logit");
}

AdaptorDiscriminator make_adaptor_discriminator(int feature_dim, int hidden,
                                                std::uint64_t seed) {
  if (feature_dim < 1) throw ValidationError("feature_dim must be >= 1");
  if (hidden < 1) throw ValidationError("hidden must be >= 1");
  RngStream rng = seeded_rng(seed).split(0x61646170);
  AdaptorDiscriminator model;
  model.adaptor = mlp_random({feature_dim, feature_dim}, {Activation::identity}, rng);
  model.discriminator = mlp_random({feature_dim, hidden, 1},
                                   {Activation::tanh, Activation::identity}, rng, true);
  return model;
}

double sigmoid(double logit) {
  if (logit >= 0.0) return 1.0 / (1.0 + std::exp(-logit));
  const double e = std::exp(logit);
  return e / (1.0 + e);
}

VectorField adapt(const AdaptorDiscriminator& model, const VectorField& features) {
  check_field(model, features, "adapt");
  VectorField out;
  mlp_apply_field(model.adaptor, features, out);
  return out;
}

// Local synthesis -------------------------------------------------------------

void SynthLocalConfig::validate() const {
  if (!(beta > 0.0 && beta <= 1.0)) throw ValidationError("synth_local: beta must be in (0,1]");
  if (min_blobs < 1 || max_blobs < min_blobs)
    throw ValidationError("synth_local: blob count range invalid");
  // fractions above 1 are allowed: the ellipse is intersected with the
  // foreground, so oversized blobs are how a caller covers it entirely
  if (!(min_area_fraction > 0.0 && max_area_fraction >= min_area_fraction))
    throw ValidationError("synth_local: area fraction range invalid");
  if (noise_cell < 1) throw ValidationError("synth_local: noise_cell must be >= 1");
  if (source == TextureSource::texture_dir && texture_dir.empty())
    throw ValidationError("synth_local: texture_dir source needs a directory");
}

Mask random_blob_mask(const Mask& fg, const SynthLocalConfig& cfg, RngStream& rng) {
  cfg.validate();
  std::vector<std::pair<int, int>> fg_pixels;
  fg_pixels.reserve(fg.count_foreground());
  for (int y = 0; y < fg.height; ++y)
    for (int x = 0; x < fg.width; ++x)
      if (fg.at(x, y)) fg_pixels.emplace_back(x, y);
  if (fg_pixels.empty()) throw ValidationError("synth_local: empty foreground mask");

  int blobs = cfg.min_blobs;
  if (cfg.max_blobs > cfg.min_blobs)
    blobs += static_cast<int>(rng.draw_index(
        static_cast<std::size_t>(cfg.max_blobs - cfg.min_blobs + 1)));

  Mask out(fg.width, fg.height);
  for (int b = 0; b < blobs; ++b) {
    const double area = std::max(
        1.0, (cfg.min_area_fraction +
              rng.draw_uniform() * (cfg.max_area_fraction - cfg.min_area_fraction)) *
                 static_cast<double>(fg_pixels.size()));
    // aspect ratio in [1/2, 2], log-uniform
    const double aspect = std::exp((rng.draw_uniform() * 2.0 - 1.0) * std::log(2.0));
    const double a = std::max(0.5, std::sqrt(area * aspect / 3.14159265358979323846));
    const double bb = std::max(0.5, std::sqrt(area / (aspect * 3.14159265358979323846)));
    const double theta = rng.draw_uniform() * 3.14159265358979323846;
    const auto [cx, cy] = fg_pixels[rng.draw_index(fg_pixels.size())];

    const double ct = std::cos(theta), st = std::sin(theta);
    const int r = static_cast<int>(std::ceil(std::max(a, bb)));
    for (int y = std::max(0, cy - r); y <= std::min(fg.height - 1, cy + r); ++y) {
      for (int x = std::max(0, cx - r); x <= std::min(fg.width - 1, cx + r); ++x) {
        const double dx = x - cx, dy = y - cy;
        const double u = (dx * ct + dy * st) / a;
        const double v = (-dx * st + dy * ct) / bb;
        if (u * u + v * v <= 1.0 && fg.at(x, y)) out.set(x, y, true);
      }
    }
  }
  return out;
}

GrayImage value_noise(int width, int height, int cell, RngStream& rng) {
  if (width < 1 || height < 1) throw ValidationError("value_noise: empty image");
  if (cell < 1) throw ValidationError("value_noise: cell must be >= 1");
  const int gw = (width + cell - 1) / cell + 1;
  const int gh = (height + cell - 1) / cell + 1;
  std::vector<double> lattice(static_cast<std::size_t>(gw) * gh);
  for (double& v : lattice) v = rng.draw_uniform();
  auto lat = [&](int gx, int gy) { return lattice[static_cast<std::size_t>(gy) * gw + gx]; };

  GrayImage out(width, height);
  for (int y = 0; y < height; ++y) {
    const int gy = y / cell;
    double ty = static_cast<double>(y - gy * cell) / cell;
    ty = ty * ty * (3.0 - 2.0 * ty);
    for (int x = 0; x < width; ++x) {
      const int gx = x / cell;
      double tx = static_cast<double>(x - gx * cell) / cell;
      tx = tx * tx * (3.0 - 2.0 * tx);
      const double top = lat(gx, gy) + tx * (lat(gx + 1, gy) - lat(gx, gy));
      const double bot = lat(gx, gy + 1) + tx * (lat(gx + 1, gy + 1) - lat(gx, gy + 1));
      out.at(x, y) = top + ty * (bot - top);
    }
  }
  return out;
}

LocalSynthesis synth_local(const GrayImage& img, const Mask& fg,
                           const SynthLocalConfig& cfg, RngStream& rng) {
  if (fg.width != img.width || fg.height != img.height)
    throw ShapeError("synth_local: mask dims do not match the image");
  Mask blob = random_blob_mask(fg, cfg, rng);
  GrayImage texture = make_texture(img.width, img.height, cfg, rng);

  LocalSynthesis out{img, Mask(img.width, img.height)};
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (!blob.at(x, y)) continue;
      const double v = img.at(x, y);
      const double blended = (1.0 - cfg.beta) * v + cfg.beta * texture.at(x, y);
      out.image.at(x, y) = blended;
      out.mask.set(x, y, blended != v);
    }
  }
  return out;
}

LocalFieldSynthesis synth_local(const VectorField& field, const Mask& fg_grid,
                                const SynthLocalConfig& cfg, RngStream& rng) {
  if (fg_grid.width != field.w || fg_grid.height != field.h)
    throw ShapeError("synth_local: grid mask dims do not match the field");
  Mask blob = random_blob_mask(fg_grid, cfg, rng);
  GrayImage texture = make_texture(field.w, field.h, cfg, rng);

  std::vector<double> lo(field.dim), amp(field.dim);
  for (int c = 0; c < field.dim; ++c) {
    double mn = field.data[c], mx = field.data[c];
    for (int p = 0; p < field.positions(); ++p) {
      mn = std::min(mn, field.at(p)[c]);
      mx = std::max(mx, field.at(p)[c]);
    }
    lo[c] = mn;
    amp[c] = (mx - mn < 1e-12) ? 1.0 : mx - mn;
  }

  LocalFieldSynthesis out{field, Mask(field.w, field.h)};
  for (int y = 0; y < field.h; ++y) {
    for (int x = 0; x < field.w; ++x) {
      if (!blob.at(x, y)) continue;
      const int pos = y * field.w + x;
      bool changed = false;
      for (int c = 0; c < field.dim; ++c) {
        const double v = field.at(pos)[c];
        const double t = lo[c] + texture.at(x, y) * amp[c];
        const double blended = (1.0 - cfg.beta) * v + cfg.beta * t;
        out.field.at(pos)[c] = blended;
        changed = changed || blended != v;
      }
      out.mask.set(x, y, changed);
    }
  }
  return out;
}

// OOD hypotheses --------------------------------------------------------------

void OodCriterion::validate() const {
  if (kind == Kind::hypersphere) {
    if (center.empty()) throw ValidationError("ood: hypersphere needs a center");
    if (radius < 0.0) throw ValidationError("ood: radius must be >= 0");
  } else {
    if (nominal_store.empty()) throw ValidationError("ood: empty nominal store");
    if (k < 1 || static_cast<std::size_t>(k) > nominal_store.size())
      throw ValidationError("ood: k must be in [1, store size]");
  }
}

OodCriterion fit_hypersphere(const std::vector<std::vector<double>>& vectors) {
  if (vectors.empty()) throw ValidationError("fit_hypersphere: no vectors");
  const std::size_t dim = vectors.front().size();
  OodCriterion c;
  c.kind = OodCriterion::Kind::hypersphere;
  c.center.assign(dim, 0.0);
  for (const auto& v : vectors) {
    if (v.size() != dim) throw ShapeError("fit_hypersphere: inconsistent dims");
    for (std::size_t i = 0; i < dim; ++i) c.center[i] += v[i];
  }
  for (double& x : c.center) x /= static_cast<double>(vectors.size());
  c.radius = 0.0;
  for (const auto& v : vectors) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) d2 += (v[i] - c.center[i]) * (v[i] - c.center[i]);
    c.radius = std::max(c.radius, std::sqrt(d2));
  }
  return c;
}

OodCriterion fit_manifold(std::vector<std::vector<double>> vectors, int k) {
  OodCriterion c;
  c.kind = OodCriterion::Kind::manifold;
  c.nominal_store = std::move(vectors);
  c.k = k;
  c.validate();
  const std::size_t dim = c.nominal_store.front().size();
  for (const auto& v : c.nominal_store)
    if (v.size() != dim) throw ShapeError("fit_manifold: inconsistent dims");
  return c;
}

double ood_score(const OodCriterion& criterion, std::span<const double> f) {
  criterion.validate();
  if (criterion.kind == OodCriterion::Kind::hypersphere) {
    if (f.size() != criterion.center.size())
      throw ShapeError("ood_score: vector dim does not match the center");
    double d2 = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i)
      d2 += (f[i] - criterion.center[i]) * (f[i] - criterion.center[i]);
    return std::sqrt(d2) - criterion.radius;
  }
  if (f.size() != criterion.nominal_store.front().size())
    throw ShapeError("ood_score: vector dim does not match the store");
  std::vector<double> dist;
  dist.reserve(criterion.nominal_store.size());
  for (const auto& v : criterion.nominal_store) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) d2 += (f[i] - v[i]) * (f[i] - v[i]);
    dist.push_back(std::sqrt(d2));
  }
  std::partial_sort(dist.begin(), dist.begin() + criterion.k, dist.end());
  double sum = 0.0;
  for (int i = 0; i < criterion.k; ++i) sum += dist[i];
  return sum / criterion.k;
}

// Global synthesis ------------------------------------------------------------

void SynthGlobalConfig::validate() const {
  if (eta < 0.0 || delta < 0.0 || sigma < 0.0)
    throw ValidationError("synth_global: eta, delta, sigma must be >= 0");
  if (steps < 0) throw ValidationError("synth_global: steps must be >= 0");
}

SynthGlobalConfig default_global_config(double feature_std) {
  if (!(feature_std >= 0.0)) throw ValidationError("default_global_config: negative std");
  SynthGlobalConfig cfg;
  cfg.eta = 0.1;
  cfg.delta = 0.2 * feature_std;
  cfg.sigma = 0.05 * feature_std;
  cfg.steps = 5;
  return cfg;
}

VectorField synth_global(const AdaptorDiscriminator& model, const VectorField& features,
                         const SynthGlobalConfig& cfg, RngStream& rng,
                         const OodCriterion* stop) {
  cfg.validate();
  model.validate();
  check_field(model, features, "synth_global");

  VectorField x = features;
  const int positions = x.positions();
  const int dim = x.dim;
  std::vector<double> grad(static_cast<std::size_t>(positions) * dim);

  for (int step = 0; step < cfg.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    ADW_PRAGMA_OMP(parallel for schedule(static))
    for (int p = 0; p < positions; ++p) {
      MlpCache ca, cd;
      MlpGrads ga, gd;
      ga.init_like(model.adaptor);
      gd.init_like(model.discriminator);
      std::vector<double> mid(static_cast<std::size_t>(model.feature_dim()));
      const double l = logit_at(model, {x.at(p), static_cast<std::size_t>(dim)}, ca, cd);
      const double up = sigmoid(l) / positions;  // d mean-softplus / d logit
      backprop_at(model, ca, cd, up, ga, gd, mid,
                  {grad.data() + static_cast<std::size_t>(p) * dim,
                   static_cast<std::size_t>(dim)});
    }
    for (double g : grad)
      if (!std::isfinite(g)) throw NumericError("synth_global: non-finite gradient");

    for (std::size_t i = 0; i < grad.size(); ++i) {
      const double eps = cfg.sigma > 0.0 ? rng.draw_normal(0.0, cfg.sigma) : 0.0;
      const double upd = std::clamp(cfg.eta * (grad[i] + eps), -cfg.delta, cfg.delta);
      x.data[i] += upd;
    }

    if (stop != nullptr) {
      VectorField adapted = adapt(model, x);
      double mean = 0.0;
      for (int p = 0; p < positions; ++p)
        mean += ood_score(*stop, {adapted.at(p), static_cast<std::size_t>(dim)});
      if (mean / positions > 0.0) break;
    }
  }
  return x;
}

// Training loss ----------------------------------------------------------------

double three_branch_loss(const ScoreMap& predictions, Branch branch, const Mask* local_mask) {
  if (predictions.h < 1 || predictions.w < 1)
    throw ShapeError("three_branch_loss: empty prediction map");
  if (branch == Branch::local_anomaly && local_mask == nullptr)
    throw ValidationError("three_branch_loss: local branch requires a mask");
  if (branch != Branch::local_anomaly && local_mask != nullptr)
    throw ValidationError("three_branch_loss: mask given for a non-local branch");
  if (local_mask != nullptr &&
      (local_mask->width != predictions.w || local_mask->height != predictions.h))
    throw ShapeError("three_branch_loss: mask dims do not match predictions");

  double sum = 0.0;
  for (int y = 0; y < predictions.h; ++y) {
    for (int x = 0; x < predictions.w; ++x) {
      const double p = predictions.at(x, y);
      const bool target_one = branch == Branch::global_anomaly ||
                              (branch == Branch::local_anomaly && local_mask->at(x, y));
      sum += target_one ? -std::log(p) : -std::log1p(-p);
    }
  }
  return sum / (static_cast<double>(predictions.h) * predictions.w);
}

// Training ----------------------------------------------------------------------

void DiscTrainConfig::validate() const {
  if (epochs < 0) throw ValidationError("disc train: epochs must be >= 0");
  if (learning_rate <= 0.0) throw ValidationError("disc train: learning rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("disc train: momentum in [0,1)");
  if (batch_size < 1) throw ValidationError("disc train: batch size must be >= 1");
  local.validate();
  global.validate();
  if (use_ood_gate && ood_kind == OodCriterion::Kind::manifold) {
    if (ood_k < 1) throw ValidationError("disc train: ood_k must be >= 1");
    if (ood_store_cap < ood_k) throw ValidationError("disc train: ood store cap below k");
  }
}

namespace {

// Forward/backward for one field against a constant or masked target.
// target_mask == nullptr with target_one selects the constant branches.
double field_branch(const AdaptorDiscriminator& model, const VectorField& x,
                    const Mask* target_mask, bool target_one, MlpGrads& ga, MlpGrads& gd,
                    std::vector<double>& mid, std::vector<double>& gin_scratch) {
  const int positions = x.positions();
  double loss = 0.0;
  for (int p = 0; p < positions; ++p) {
    MlpCache ca, cd;
    const double l =
        logit_at(model, {x.at(p), static_cast<std::size_t>(x.dim)}, ca, cd);
    const bool one = target_mask != nullptr
                         ? target_mask->at(p % x.w, p / x.w)
                         : target_one;
    loss += one ? softplus(-l) : softplus(l);
    const double up = (sigmoid(l) - (one ? 1.0 : 0.0)) / positions;
    backprop_at(model, ca, cd, up, ga, gd, mid, gin_scratch);
  }
  return loss / positions;
}

}  // namespace

TrainHistory train_discriminator(AdaptorDiscriminator& model,
                                 const std::vector<VectorField>& nominal,
                                 const std::vector<Mask>& fg_grids,
                                 const DiscTrainConfig& cfg) {
  cfg.validate();
  model.validate();
  if (nominal.empty())
    throw ValidationError("train_discriminator: needs at least one nominal sample");
  if (fg_grids.size() != nominal.size())
    throw ValidationError("train_discriminator: one foreground grid per sample required");
  for (std::size_t i = 0; i < nominal.size(); ++i) {
    check_field(model, nominal[i], "train_discriminator");
    if (fg_grids[i].width != nominal[i].w || fg_grids[i].height != nominal[i].h)
      throw ShapeError("train_discriminator: grid mask dims do not match sample " +
                       std::to_string(i));
  }

  const int n = static_cast<int>(nominal.size());
  SgdOptimizer opt({cfg.learning_rate, cfg.momentum, cfg.clip_norm});
  RngStream base = seeded_rng(cfg.seed).split(0x64697363);
  TrainHistory history;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream er = base.split(static_cast<std::uint64_t>(epoch));

    OodCriterion gate;
    if (cfg.use_ood_gate) {
      std::vector<std::vector<double>> adapted_vecs;
      for (const VectorField& f : nominal) {
        VectorField a = adapt(model, f);
        for (int p = 0; p < a.positions(); ++p)
          adapted_vecs.emplace_back(a.at(p), a.at(p) + a.dim);
      }
      if (cfg.ood_kind == OodCriterion::Kind::hypersphere) {
        gate = fit_hypersphere(adapted_vecs);
      } else {
        // key above 2^32 so it cannot collide with per-sample batch keys
        RngStream sub = er.split(0x6f6f64737562ULL);
        sub.shuffle(adapted_vecs);
        if (adapted_vecs.size() > static_cast<std::size_t>(cfg.ood_store_cap))
          adapted_vecs.resize(static_cast<std::size_t>(cfg.ood_store_cap));
        gate = fit_manifold(std::move(adapted_vecs), cfg.ood_k);
      }
    }

    std::vector<int> order(nominal.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    RngStream sh = er.split(0x7368756666ULL);
    sh.shuffle(order);

    double epoch_sum = 0.0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int count = std::min(cfg.batch_size, n - start);
      std::vector<double> losses(count, 0.0);
      std::vector<MlpGrads> gas(count), gds(count);

      ADW_PRAGMA_OMP(parallel for schedule(static))
      for (int j = 0; j < count; ++j) {
        const int idx = order[start + j];
        RngStream sr = er.split(static_cast<std::uint64_t>(start + j));
        gas[j].init_like(model.adaptor);
        gds[j].init_like(model.discriminator);
        std::vector<double> mid(static_cast<std::size_t>(model.feature_dim()));
        std::vector<double> gin(static_cast<std::size_t>(model.feature_dim()));

        const VectorField& x = nominal[static_cast<std::size_t>(idx)];
        double loss = field_branch(model, x, nullptr, false, gas[j], gds[j], mid, gin);

        VectorField xg = synth_global(model, x, cfg.global, sr,
                                      cfg.use_ood_gate ? &gate : nullptr);
        loss += field_branch(model, xg, nullptr, true, gas[j], gds[j], mid, gin);

        LocalFieldSynthesis ls =
            synth_local(x, fg_grids[static_cast<std::size_t>(idx)], cfg.local, sr);
        loss += field_branch(model, ls.field, &ls.mask, false, gas[j], gds[j], mid, gin);

        losses[j] = loss;
      }

      MlpGrads ga, gd;
      ga.init_like(model.adaptor);
      gd.init_like(model.discriminator);
      double batch_loss = 0.0;
      for (int j = 0; j < count; ++j) {
        ga.add(gas[j]);
        gd.add(gds[j]);
        batch_loss += losses[j];
      }
      ga.scale(1.0 / count);
      gd.scale(1.0 / count);
      if (!std::isfinite(batch_loss))
        throw NumericError("discriminator training diverged at epoch " +
                           std::to_string(epoch));
      MlpParams* params[2] = {&model.adaptor, &model.discriminator};
      const MlpGrads* grads[2] = {&ga, &gd};
      opt.step(params, grads);
      epoch_sum += batch_loss;
    }
    history.epoch_loss.push_back(epoch_sum / n);
  }
  return history;
}

// Scoring ------------------------------------------------------------------------

ScoreMap disc_probability_map(const AdaptorDiscriminator& model, const VectorField& features) {
  model.validate();
  check_field(model, features, "disc_probability_map");
  ScoreMap map(features.h, features.w);
  const int positions = features.positions();
  ADW_PRAGMA_OMP(parallel for schedule(static))
  for (int p = 0; p < positions; ++p) {
    MlpCache ca, cd;
    const double l =
        logit_at(model, {features.at(p), static_cast<std::size_t>(features.dim)}, ca, cd);
    map.values[static_cast<std::size_t>(p)] = sigmoid(l);
  }
  return map;
}

DiscScore disc_score(const AdaptorDiscriminator& model, const VectorField& features,
                     const Mask* fg_grid) {
  DiscScore out;
  out.map = disc_probability_map(model, features);
  if (fg_grid != nullptr) {
    if (fg_grid->width != features.w || fg_grid->height != features.h)
      throw ShapeError("disc_score: grid mask dims do not match the field");
    for (int y = 0; y < out.map.h; ++y)
      for (int x = 0; x < out.map.w; ++x)
        if (!fg_grid->at(x, y)) out.map.at(x, y) = 0.0;
  }
  out.image_score = *std::max_element(out.map.values.begin(), out.map.values.end());
  return out;
}

}  // namespace adw
