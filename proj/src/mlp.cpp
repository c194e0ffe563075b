#include "adw/mlp.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "adw/errors.hpp"
#include "adw/parallel.hpp"

namespace adw {
namespace {

double activate(Activation act, double z) {
  switch (act) {
    case Activation::identity: return z;
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::tanh: return std::tanh(z);
  }
  return z;
}

// Derivative expressed via pre-activation z and activation a = act(z).
double activate_grad(Activation act, double z, double a) {
  switch (act) {
    case Activation::identity: return 1.0;
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: return 1.0 - a * a;
  }
  return 1.0;
}

void forward_layer(const MlpLayer& layer, std::span<const double> in, std::vector<double>& pre,
                   std::vector<double>& out) {
  pre.resize(layer.out_dim);
  out.resize(layer.out_dim);
  for (int r = 0; r < layer.out_dim; ++r) {
    double z = layer.bias[r];
    const double* wrow = layer.weights.data() + static_cast<std::size_t>(r) * layer.in_dim;
    for (int c = 0; c < layer.in_dim; ++c) z += wrow[c] * in[c];
    pre[r] = z;
    out[r] = activate(layer.act, z);
  }
}

}  // namespace

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "identity";
}

Activation activation_from_name(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw ValidationError("unknown activation: " + name);
}

std::size_t MlpParams::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

void MlpParams::validate() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.in_dim <= 0 || l.out_dim <= 0) throw ShapeError("mlp: non-positive layer dim");
    if (l.weights.size() != static_cast<std::size_t>(l.in_dim) * l.out_dim)
      throw ShapeError("mlp: weight count does not match layer dims");
    if (l.bias.size() != static_cast<std::size_t>(l.out_dim))
      throw ShapeError("mlp: bias count does not match out dim");
    if (i > 0 && layers[i - 1].out_dim != l.in_dim)
      throw ShapeError("mlp: layer " + std::to_string(i) + " input dim " + std::to_string(l.in_dim) +
                       " does not match previous output dim " + std::to_string(layers[i - 1].out_dim));
  }
}

void MlpGrads::init_like(const MlpParams& params) {
  weights.assign(params.layers.size(), {});
  bias.assign(params.layers.size(), {});
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    weights[i].assign(params.layers[i].weights.size(), 0.0);
    bias[i].assign(params.layers[i].bias.size(), 0.0);
  }
}

void MlpGrads::set_zero() {
  for (auto& w : weights) std::fill(w.begin(), w.end(), 0.0);
  for (auto& b : bias) std::fill(b.begin(), b.end(), 0.0);
}

void MlpGrads::add(const MlpGrads& other) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    for (std::size_t j = 0; j < weights[i].size(); ++j) weights[i][j] += other.weights[i][j];
    for (std::size_t j = 0; j < bias[i].size(); ++j) bias[i][j] += other.bias[i][j];
  }
}

void MlpGrads::scale(double factor) {
  for (auto& w : weights)
    for (double& v : w) v *= factor;
  for (auto& b : bias)
    for (double& v : b) v *= factor;
}

double MlpGrads::squared_norm() const {
  double s = 0.0;
  for (const auto& w : weights)
    for (double v : w) s += v * v;
  for (const auto& b : bias)
    for (double v : b) s += v * v;
  return s;
}

MlpLayer make_layer(int in_dim, int out_dim, Activation act) {
  MlpLayer layer;
  layer.in_dim = in_dim;
  layer.out_dim = out_dim;
  layer.weights.assign(static_cast<std::size_t>(in_dim) * out_dim, 0.0);
  layer.bias.assign(out_dim, 0.0);
  layer.act = act;
  return layer;
}

MlpParams mlp_identity(int dim) {
  MlpParams params;
  MlpLayer layer = make_layer(dim, dim, Activation::identity);
  for (int i = 0; i < dim; ++i) layer.w(i, i) = 1.0;
  params.layers.push_back(std::move(layer));
  return params;
}

MlpParams mlp_random(const std::vector<int>& dims, const std::vector<Activation>& acts,
                     RngStream& rng, bool zero_final_layer) {
  if (dims.size() < 2) throw ShapeError("mlp_random: need at least input and output dims");
  if (acts.size() != dims.size() - 1) throw ShapeError("mlp_random: one activation per layer");
  MlpParams params;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    MlpLayer layer = make_layer(dims[i], dims[i + 1], acts[i]);
    const bool zero = zero_final_layer && i + 2 == dims.size();
    if (!zero) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(dims[i]));
      for (double& w : layer.weights) w = rng.draw_normal(0.0, scale);
    }
    params.layers.push_back(std::move(layer));
  }
  return params;
}

std::vector<double> mlp_apply(const MlpParams& params, std::span<const double> input) {
  if (params.layers.empty()) throw ShapeError("mlp_apply: empty network");
  if (static_cast<int>(input.size()) != params.input_dim())
    throw ShapeError("mlp_apply: input dim " + std::to_string(input.size()) + " != layer dim " +
                     std::to_string(params.input_dim()));
  std::vector<double> cur(input.begin(), input.end());
  std::vector<double> pre, next;
  for (const auto& layer : params.layers) {
    forward_layer(layer, cur, pre, next);
    cur.swap(next);
  }
  return cur;
}

Tensor mlp_apply(const MlpParams& params, const Tensor& input) {
  auto out = mlp_apply(params, input.values());
  return Tensor::vector(std::move(out));
}

void mlp_forward_cached(const MlpParams& params, std::span<const double> input, MlpCache& cache) {
  if (params.layers.empty()) throw ShapeError("mlp_forward: empty network");
  if (static_cast<int>(input.size()) != params.input_dim())
    throw ShapeError("mlp_forward: input dim mismatch");
  const std::size_t n_layers = params.layers.size();
  cache.act.resize(n_layers + 1);
  cache.pre.resize(n_layers);
  cache.act[0].assign(input.begin(), input.end());
  for (std::size_t i = 0; i < n_layers; ++i) {
    forward_layer(params.layers[i], cache.act[i], cache.pre[i], cache.act[i + 1]);
  }
}

void mlp_backward(const MlpParams& params, const MlpCache& cache, std::span<const double> upstream,
                  MlpGrads& grads, std::span<double> input_grad) {
  const std::size_t n_layers = params.layers.size();
  if (static_cast<int>(upstream.size()) != params.output_dim())
    throw ShapeError("mlp_backward: upstream dim mismatch");
  if (static_cast<int>(input_grad.size()) != params.input_dim())
    throw ShapeError("mlp_backward: input grad dim mismatch");

  std::vector<double> delta(upstream.begin(), upstream.end());
  std::vector<double> prev_delta;
  for (std::size_t li = n_layers; li-- > 0;) {
    const MlpLayer& layer = params.layers[li];
    const auto& in_act = cache.act[li];
    const auto& pre = cache.pre[li];
    const auto& out_act = cache.act[li + 1];
    // delta through the activation
    for (int r = 0; r < layer.out_dim; ++r)
      delta[r] *= activate_grad(layer.act, pre[r], out_act[r]);
    // parameter grads
    auto& gw = grads.weights[li];
    auto& gb = grads.bias[li];
    for (int r = 0; r < layer.out_dim; ++r) {
      gb[r] += delta[r];
      double* grow = gw.data() + static_cast<std::size_t>(r) * layer.in_dim;
      for (int c = 0; c < layer.in_dim; ++c) grow[c] += delta[r] * in_act[c];
    }
    // delta to previous layer
    prev_delta.assign(layer.in_dim, 0.0);
    for (int r = 0; r < layer.out_dim; ++r) {
      const double* wrow = layer.weights.data() + static_cast<std::size_t>(r) * layer.in_dim;
      for (int c = 0; c < layer.in_dim; ++c) prev_delta[c] += wrow[c] * delta[r];
    }
    delta.swap(prev_delta);
  }
  for (std::size_t c = 0; c < input_grad.size(); ++c) input_grad[c] += delta[c];
}

MlpGradResult mlp_grad(const MlpParams& params, std::span<const double> input,
                       std::span<const double> upstream) {
  MlpGradResult result;
  result.param_grads.init_like(params);
  result.input_grad.assign(input.size(), 0.0);
  MlpCache cache;
  mlp_forward_cached(params, input, cache);
  mlp_backward(params, cache, upstream, result.param_grads, result.input_grad);
  return result;
}

void mlp_apply_field(const MlpParams& params, const VectorField& in, VectorField& out) {
  if (in.dim != params.input_dim()) throw ShapeError("mlp_apply_field: field dim mismatch");
  out = VectorField(in.h, in.w, params.output_dim());
  const int n = in.positions();
  ADW_PRAGMA_OMP(parallel for schedule(static))
  for (int p = 0; p < n; ++p) {
    std::vector<double> cur(in.at(p), in.at(p) + in.dim);
    std::vector<double> pre, next;
    for (const auto& layer : params.layers) {
      forward_layer(layer, cur, pre, next);
      cur.swap(next);
    }
    std::memcpy(out.at(p), cur.data(), sizeof(double) * cur.size());
  }
}

double grad_check(const DifferentiableScalar& f, std::span<const double> point, double h) {
  std::vector<double> x(point.begin(), point.end());
  std::vector<double> analytic = f.gradient(x);
  if (analytic.size() != x.size()) throw ShapeError("grad_check: gradient dim mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f.value(x);
    x[i] = keep - h;
    const double fm = f.value(x);
    x[i] = keep;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("grad_check: non-finite evaluation");
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

void SgdOptimizer::step(std::span<MlpParams* const> params, std::span<const MlpGrads* const> grads) {
  if (params.size() != grads.size()) throw ShapeError("sgd: params/grads count mismatch");
  if (velocity_.empty()) {
    velocity_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) velocity_[i].init_like(*params[i]);
  }
  if (velocity_.size() != params.size()) throw ShapeError("sgd: model set changed between steps");

  double sq = 0.0;
  for (const MlpGrads* g : grads) sq += g->squared_norm();
  double scale = 1.0;
  if (cfg_.clip_norm > 0.0) {
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    MlpParams& p = *params[i];
    const MlpGrads& g = *grads[i];
    MlpGrads& v = velocity_[i];
    for (std::size_t li = 0; li < p.layers.size(); ++li) {
      auto& w = p.layers[li].weights;
      auto& b = p.layers[li].bias;
      for (std::size_t j = 0; j < w.size(); ++j) {
        v.weights[li][j] = cfg_.momentum * v.weights[li][j] + scale * g.weights[li][j];
        w[j] -= cfg_.learning_rate * v.weights[li][j];
      }
      for (std::size_t j = 0; j < b.size(); ++j) {
        v.bias[li][j] = cfg_.momentum * v.bias[li][j] + scale * g.bias[li][j];
        b[j] -= cfg_.learning_rate * v.bias[li][j];
      }
    }
  }
}

}  // namespace adw
