#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "adw/mlp.hpp"
#include "adw/tensor.hpp"

namespace adw {

// One affine coupling step. Channels are permuted, the first half passes
// through unchanged, the second half is scaled and shifted by conditioner
// outputs computed from the first half (plus cross-scale context). The
// block's output stays in permuted order; the inverse unpermutes.
struct CouplingBlock {
  std::vector<int> permutation;  // u[i] = z[permutation[i]]
  MlpParams cond_s;
  MlpParams cond_t;
  double alpha = 1.9;  // soft clamp: s = alpha * tanh(s_raw / alpha)
  bool cross_scale = true;
};

struct FlowConfig {
  int dim = 0;         // channels per position, >= 2
  int num_scales = 3;  // fields per sample
  int num_blocks = 4;
  int hidden = 64;
  double alpha = 1.9;
  bool cross_scale = true;
  std::uint64_t seed = 0;
};

// Multi-scale affine coupling flow. Blocks are stored latent-to-data:
// forward(z) applies blocks[0..B), inverse(x) walks them backwards.
// Conditioners start zero, so a fresh flow is a fixed channel permutation
// with logdet 0.
struct CouplingFlow {
  FlowConfig config;
  std::vector<CouplingBlock> blocks;
};

CouplingFlow make_flow(const FlowConfig& cfg);
// Identity permutations and zero conditioners in a single block: T == id.
CouplingFlow flow_identity(int dim, int num_scales);

// Single-block transform over one sample (one VectorField per scale).
// logdet accumulates sum(s) over all scales, positions, and transformed
// channels (the forward direction's log |det J|).
void coupling_forward(const CouplingBlock& block, const std::vector<VectorField>& z,
                      std::vector<VectorField>& y, double& logdet);
// Exact algebraic inverse; logdet accumulates the same sum(s).
void coupling_inverse(const CouplingBlock& block, const std::vector<VectorField>& y,
                      std::vector<VectorField>& z, double& logdet);

// Whole-flow transforms.
std::vector<VectorField> flow_forward(const CouplingFlow& flow, const std::vector<VectorField>& z,
                                      double* logdet = nullptr);
std::vector<VectorField> flow_inverse(const CouplingFlow& flow, const std::vector<VectorField>& x,
                                      double* logdet = nullptr);

struct LogDensityResult {
  double logp = 0.0;
  std::vector<VectorField> latent;
  double logdet = 0.0;  // log |det J_{T^{-1}}(x)|
};

// logp = sum over scales and positions of logN(z_pos; 0, I) plus logdet.
LogDensityResult log_density(const CouplingFlow& flow, const std::vector<VectorField>& x);

// Gradient buffers for every conditioner in the flow.
struct FlowGrads {
  std::vector<MlpGrads> cond_s;  // per block
  std::vector<MlpGrads> cond_t;

  void init_like(const CouplingFlow& flow);
  void set_zero();
  void add(const FlowGrads& other);
  void scale(double factor);
};

// Pointers in a fixed order (block 0 s, block 0 t, block 1 s, ...) shared
// by the optimizer and the gradient buffers.
std::vector<MlpParams*> flow_trainable(CouplingFlow& flow);
std::vector<const MlpGrads*> flow_grad_refs(const FlowGrads& grads);

// Mean NLL over a batch of samples: -(log p) averaged, constant included.
double nll_loss(const CouplingFlow& flow, const std::vector<std::vector<VectorField>>& batch);

// Reverse-mode gradients of one sample's NLL. Accumulates conditioner
// gradients into `grads`; when `input_grads` is given it is filled with
// d NLL / d x. Returns the sample's NLL.
double nll_backward(const CouplingFlow& flow, const std::vector<VectorField>& x, FlowGrads& grads,
                    std::vector<VectorField>* input_grads = nullptr);

// Batch-mean gradients, OpenMP-parallel over samples; per-sample buffers are
// reduced in sample order so the result is thread-count independent.
double nll_batch_gradient(const CouplingFlow& flow,
                          const std::vector<std::vector<VectorField>>& batch, FlowGrads& grads);

struct TrainConfig {
  int epochs = 40;        // full-scale default 240
  int eval_every = 10;    // full-scale default 60
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double clip_norm = 10.0;
  int batch_size = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

// Plain SGD with momentum and global gradient-norm clipping. Loss must stay
// finite; divergence aborts with a NumericError naming the epoch. With the
// same seed the history is bit-identical run to run.
TrainHistory train_flow(CouplingFlow& flow, const std::vector<std::vector<VectorField>>& train,
                        const TrainConfig& cfg,
                        const std::vector<std::vector<VectorField>>* eval_set = nullptr);

enum class ScoreAggregation { mean_per_dim, max_position };

// Image-level anomaly score. Default: NLL / (total positions * dim), so
// values are comparable across resolutions. max_position takes the worst
// per-position NLL instead (divided by dim).
double image_score(const CouplingFlow& flow, const std::vector<VectorField>& x,
                   ScoreAggregation agg = ScoreAggregation::mean_per_dim);

// Per-position channel L2 norms of the latent, upsampled (nearest neighbor)
// to the first scale's resolution and summed.
ScoreMap localization_map(const std::vector<VectorField>& latent);

// Per-position NLL per dimension, one map per scale:
// (0.5 ||z_pos||^2 + (dim/2) ln 2pi + sum s_pos) / dim. Unlike the z-norm
// map this includes the local volume change, so it is a density.
std::vector<ScoreMap> position_scores(const CouplingFlow& flow,
                                      const std::vector<VectorField>& x);

// log p_background(x) - log p_model(x): high where the model assigns less
// mass than a broad background model, which corrects the raw-NLL pitfall of
// typical-set tails looking anomalous.
double likelihood_ratio_score(const CouplingFlow& model, const CouplingFlow& background,
                              const std::vector<VectorField>& x);

// Same architecture trained on noise-corrupted copies of the nominal data
// (sigma = noise_factor * per-channel std). The corruption is seeded from
// cfg.seed, so the background model is reproducible.
CouplingFlow train_background_flow(const FlowConfig& fcfg,
                                   const std::vector<std::vector<VectorField>>& train,
                                   const TrainConfig& cfg, double noise_factor = 0.5,
                                   TrainHistory* history = nullptr);

}  // namespace adw
