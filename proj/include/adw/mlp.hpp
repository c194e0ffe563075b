#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adw/rng.hpp"
#include "adw/tensor.hpp"

namespace adw {

enum class Activation { identity, relu, tanh };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct MlpLayer {
  int in_dim = 0;
  int out_dim = 0;
  std::vector<double> weights;  // out_dim x in_dim, row-major
  std::vector<double> bias;     // out_dim
  Activation act = Activation::identity;

  double& w(int row, int col) { return weights[static_cast<std::size_t>(row) * in_dim + col]; }
  double w(int row, int col) const { return weights[static_cast<std::size_t>(row) * in_dim + col]; }
};

// A fully-connected network: the conditioner of a coupling block, the feature
// adaptor, and the discriminator are all instances of this.
struct MlpParams {
  std::vector<MlpLayer> layers;

  int input_dim() const { return layers.empty() ? 0 : layers.front().in_dim; }
  int output_dim() const { return layers.empty() ? 0 : layers.back().out_dim; }
  std::size_t param_count() const;
  // Checks adjacent layer dims agree and weight/bias sizes match.
  void validate() const;
};

// Gradient buffers shaped like an MlpParams (one weight and bias block per layer).
struct MlpGrads {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> bias;

  void init_like(const MlpParams& params);
  void set_zero();
  void add(const MlpGrads& other);
  void scale(double factor);
  double squared_norm() const;
};

// Layer constructors -------------------------------------------------------

MlpLayer make_layer(int in_dim, int out_dim, Activation act);
// Identity map: square identity weights, zero bias, identity activation.
MlpParams mlp_identity(int dim);
// Layers with N(0, 1/sqrt(fan_in)) weights; the final layer can be zeroed so
// the network starts as the constant-zero function (used by flow conditioners).
MlpParams mlp_random(const std::vector<int>& dims, const std::vector<Activation>& acts,
                     RngStream& rng, bool zero_final_layer = false);

// Forward / backward --------------------------------------------------------

// Deterministic forward pass. Throws ShapeError on dimension mismatch.
std::vector<double> mlp_apply(const MlpParams& params, std::span<const double> input);
Tensor mlp_apply(const MlpParams& params, const Tensor& input);

// Intermediate activations kept for the backward pass.
struct MlpCache {
  std::vector<std::vector<double>> act;  // act[0] = input, act[L] = output
  std::vector<std::vector<double>> pre;  // pre-activation per layer
};

void mlp_forward_cached(const MlpParams& params, std::span<const double> input, MlpCache& cache);

// Reverse-mode gradients of <upstream, output>: accumulates parameter
// gradients into `grads` and adds the input gradient into `input_grad`
// (both must be pre-sized). Exact, not approximate.
void mlp_backward(const MlpParams& params, const MlpCache& cache, std::span<const double> upstream,
                  MlpGrads& grads, std::span<double> input_grad);

struct MlpGradResult {
  MlpGrads param_grads;
  std::vector<double> input_grad;
};

MlpGradResult mlp_grad(const MlpParams& params, std::span<const double> input,
                       std::span<const double> upstream);

// Applies the network at every position of a field. `out` is resized to the
// input grid with the network's output dim. OpenMP-parallel over positions;
// results are bit-identical to the serial reference for any thread count.
void mlp_apply_field(const MlpParams& params, const VectorField& in, VectorField& out);

// Gradient checking ---------------------------------------------------------

struct DifferentiableScalar {
  std::function<double(std::span<const double>)> value;
  std::function<std::vector<double>(std::span<const double>)> gradient;
};

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// Throws NumericError if an evaluation is non-finite.
double grad_check(const DifferentiableScalar& f, std::span<const double> point, double h);

// Optimizer ------------------------------------------------------------------

// Epoch-mean training losses plus periodic eval-set losses; shared by the
// flow and discriminator trainers.
struct TrainHistory {
  std::vector<double> epoch_loss;
  std::vector<std::pair<int, double>> eval_loss;  // (epoch, eval-set loss)
};

struct SgdConfig {
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double clip_norm = 10.0;  // global gradient-norm clip; <= 0 disables
};

// SGD with momentum over a set of networks updated together; the clip is
// applied to the global norm across all of them.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(SgdConfig cfg) : cfg_(cfg) {}

  void step(std::span<MlpParams* const> params, std::span<const MlpGrads* const> grads);
  const SgdConfig& config() const { return cfg_; }

 private:
  SgdConfig cfg_;
  std::vector<MlpGrads> velocity_;
};

}  // namespace adw
