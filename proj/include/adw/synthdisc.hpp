#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adw/image.hpp"
#include "adw/mlp.hpp"
#include "adw/rng.hpp"
#include "adw/tensor.hpp"

namespace adw {

// Self-supervised branch: a per-position feature adaptor followed by a
// discriminator that emits one logit per position. Probabilities are
// sigmoid(logit), so they sit in (0,1); logits beyond ~745 in magnitude
// saturate to exactly 0 or 1 in double arithmetic.
struct AdaptorDiscriminator {
  MlpParams adaptor;        // feature dim -> feature dim
  MlpParams discriminator;  // feature dim -> 1 (logit)

  int feature_dim() const { return adaptor.input_dim(); }
  void validate() const;
};

// Random adaptor (single linear layer), zero-initialized discriminator head:
// the initial probability map is 0.5 everywhere.
AdaptorDiscriminator make_adaptor_discriminator(int feature_dim, int hidden,
                                                std::uint64_t seed);

double sigmoid(double logit);

// Applies the adaptor at every position; shape preserving.
// Throws ShapeError when the field dim does not match the adaptor.
VectorField adapt(const AdaptorDiscriminator& model, const VectorField& features);

// Local synthesis ------------------------------------------------------------

enum class TextureSource { procedural_noise, texture_dir };

struct SynthLocalConfig {
  TextureSource source = TextureSource::procedural_noise;
  std::string texture_dir;  // read when source == texture_dir
  double beta = 0.5;        // blend opacity, (0, 1]
  int min_blobs = 1;
  int max_blobs = 3;
  double min_area_fraction = 0.01;  // per blob, fraction of the foreground area
  double max_area_fraction = 0.10;
  int noise_cell = 4;  // value-noise lattice pitch in pixels
  std::uint64_t seed = 0;

  void validate() const;
};

// Union of random ellipses (count in [min_blobs, max_blobs]) intersected with
// the foreground. Each ellipse is centered on a foreground pixel and its axes
// are at least half a pixel, so the result is never empty.
// Throws ValidationError when the foreground is empty.
Mask random_blob_mask(const Mask& fg, const SynthLocalConfig& cfg, RngStream& rng);

// Seeded single-octave value noise in [0,1]: random lattice values every
// `cell` pixels, smoothstep-faded bilinear interpolation between them.
GrayImage value_noise(int width, int height, int cell, RngStream& rng);

struct LocalSynthesis {
  GrayImage image;
  Mask mask;  // exactly the pixels the blend changed
};

// Blends a texture into random blobs restricted to the foreground:
// inside the blob, v <- (1-beta)*v + beta*texture; outside, untouched.
// The returned mask is the exact altered-pixel set, so a pixel where the
// blend reproduces the original value bit for bit is not labeled anomalous
// (mislabeled unchanged pixels would corrupt the local training target).
LocalSynthesis synth_local(const GrayImage& img, const Mask& fg,
                           const SynthLocalConfig& cfg, RngStream& rng);

struct LocalFieldSynthesis {
  VectorField field;
  Mask mask;  // grid positions whose vectors changed
};

// Feature-space variant used during discriminator training. The gray texture
// is rescaled per channel to the field's own value range (constant channels
// fall back to unit range so the blend still produces an anomaly).
LocalFieldSynthesis synth_local(const VectorField& field, const Mask& fg_grid,
                                const SynthLocalConfig& cfg, RngStream& rng);

// OOD hypotheses -------------------------------------------------------------

struct OodCriterion {
  enum class Kind { hypersphere, manifold };

  Kind kind = Kind::hypersphere;
  std::vector<double> center;  // hypersphere
  double radius = 0.0;
  std::vector<std::vector<double>> nominal_store;  // manifold
  int k = 1;  // neighbors, 1 <= k <= nominal_store.size()

  void validate() const;
};

// center = mean of the vectors, radius = max distance to the center; every
// training vector then scores <= 0 by construction.
OodCriterion fit_hypersphere(const std::vector<std::vector<double>>& vectors);
OodCriterion fit_manifold(std::vector<std::vector<double>> vectors, int k);

// hypersphere: ||f - center|| - radius.
// manifold: mean Euclidean distance to the k nearest stored vectors.
double ood_score(const OodCriterion& criterion, std::span<const double> f);

// Global synthesis -----------------------------------------------------------

struct SynthGlobalConfig {
  double eta = 0.1;    // step size
  double delta = 0.1;  // per-step elementwise truncation bound
  double sigma = 0.0;  // gradient noise std
  int steps = 5;

  void validate() const;
};

// delta = 0.2 * feature_std, sigma = 0.05 * feature_std.
SynthGlobalConfig default_global_config(double feature_std);

// Noisy truncated gradient ascent on the nominal-branch loss of the frozen
// model: per step, x <- x + clamp(eta*(g + eps), -delta, +delta) elementwise
// with g = d loss / dx and eps ~ N(0, sigma^2). Consequently
// ||out - in||_inf <= steps * delta for every input and seed. When `stop` is
// given, iteration ends once the mean ood_score over adapted positions turns
// positive. Throws NumericError on a non-finite gradient.
VectorField synth_global(const AdaptorDiscriminator& model, const VectorField& features,
                         const SynthGlobalConfig& cfg, RngStream& rng,
                         const OodCriterion* stop = nullptr);

// Training loss ---------------------------------------------------------------

enum class Branch { nominal, global_anomaly, local_anomaly };

// Mean binary cross-entropy of per-position probabilities against the branch
// target map: nominal -> all zeros, global -> all ones, local -> the mask.
// The mask is required exactly for the local branch. Saturated probabilities
// on the wrong side yield an infinite loss; the trainer works on logits and
// never hits that.
double three_branch_loss(const ScoreMap& predictions, Branch branch,
                         const Mask* local_mask = nullptr);

// Training --------------------------------------------------------------------

struct DiscTrainConfig {
  int epochs = 20;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double clip_norm = 10.0;
  int batch_size = 8;
  std::uint64_t seed = 0;
  SynthLocalConfig local;
  SynthGlobalConfig global;
  bool use_ood_gate = false;  // gate global ascent with a criterion
  OodCriterion::Kind ood_kind = OodCriterion::Kind::hypersphere;
  int ood_k = 3;          // manifold neighbor count
  int ood_store_cap = 512;  // manifold store subsample cap

  void validate() const;
};

// Each sample contributes three branches per batch: the nominal field
// (target all zeros), one global synthesis (target all ones) and one local
// synthesis (target = returned mask). Branch losses are summed per sample and
// averaged over the batch. Deterministic under a fixed seed for any thread
// count. Throws NumericError when the loss turns non-finite.
TrainHistory train_discriminator(AdaptorDiscriminator& model,
                                 const std::vector<VectorField>& nominal,
                                 const std::vector<Mask>& fg_grids,
                                 const DiscTrainConfig& cfg);

// Scoring ---------------------------------------------------------------------

// Per-position probability map, without masking. On all-zero features with an
// identity adaptor and zero-bias discriminator every position gets
// sigmoid(0) = 0.5; that is why masked deployment passes the foreground grid.
ScoreMap disc_probability_map(const AdaptorDiscriminator& model, const VectorField& features);

struct DiscScore {
  double image_score = 0.0;  // max over the (masked) map
  ScoreMap map;
};

// When fg_grid is given, positions outside the foreground are zeroed, so the
// background receives exactly no score.
DiscScore disc_score(const AdaptorDiscriminator& model, const VectorField& features,
                     const Mask* fg_grid = nullptr);

}  // namespace adw
