#include "adw/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "adw/errors.hpp"
#include "adw/parallel.hpp"

namespace adw {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

int identity_half(int dim) { return dim / 2; }

void check_block(const CouplingBlock& block) {
  const int d = static_cast<int>(block.permutation.size());
  if (d < 2) throw ShapeError("coupling: dim must be >= 2");
  std::vector<char> seen(d, 0);
  for (int i : block.permutation) {
    if (i < 0 || i >= d || seen[i]) throw ValidationError("coupling: permutation is not a bijection");
    seen[i] = 1;
  }
  if (block.alpha <= 0.0) throw ValidationError("coupling: alpha must be > 0");
  block.cond_s.validate();
  block.cond_t.validate();
}

void check_fields(const CouplingBlock& block, const std::vector<VectorField>& fields) {
  const int d = static_cast<int>(block.permutation.size());
  if (fields.empty()) throw ShapeError("coupling: no input fields");
  for (const VectorField& f : fields) {
    if (f.dim != d) throw ShapeError("coupling: field dim does not match block");
    if (f.positions() < 1) throw ShapeError("coupling: empty field");
  }
  const int d1 = identity_half(d);
  const int expected =
      d1 + (block.cross_scale && fields.size() > 1 ? static_cast<int>(fields.size() - 1) * d1 : 0);
  if (block.cond_s.input_dim() != expected || block.cond_t.input_dim() != expected)
    throw ShapeError("coupling: conditioner input dim does not match scales");
  if (block.cond_s.output_dim() != d - d1 || block.cond_t.output_dim() != d - d1)
    throw ShapeError("coupling: conditioner output dim does not match");
}

// Mean of the first d1 channels over all positions, one vector per scale.
std::vector<std::vector<double>> context_means(const std::vector<VectorField>& u, int d1) {
  std::vector<std::vector<double>> ctx(u.size());
  for (std::size_t s = 0; s < u.size(); ++s) {
    ctx[s].assign(d1, 0.0);
    const VectorField& f = u[s];
    for (int pos = 0; pos < f.positions(); ++pos) {
      const double* v = f.at(pos);
      for (int c = 0; c < d1; ++c) ctx[s][c] += v[c];
    }
    for (int c = 0; c < d1; ++c) ctx[s][c] /= f.positions();
  }
  return ctx;
}

void build_cond_input(const CouplingBlock& block, std::size_t scale, const double* u1, int d1,
                      const std::vector<std::vector<double>>& ctx, std::vector<double>& out) {
  out.assign(u1, u1 + d1);
  if (block.cross_scale && ctx.size() > 1) {
    for (std::size_t o = 0; o < ctx.size(); ++o) {
      if (o == scale) continue;
      out.insert(out.end(), ctx[o].begin(), ctx[o].end());
    }
  }
}

double soft_clamp(double s_raw, double alpha) { return alpha * std::tanh(s_raw / alpha); }

void check_cond_finite(const std::vector<double>& s_raw, const std::vector<double>& t) {
  for (double v : s_raw)
    if (!std::isfinite(v)) throw NumericError("coupling: non-finite scale conditioner output");
  for (double v : t)
    if (!std::isfinite(v)) throw NumericError("coupling: non-finite shift conditioner output");
}

}  // namespace

void coupling_forward(const CouplingBlock& block, const std::vector<VectorField>& z,
                      std::vector<VectorField>& y, double& logdet) {
  check_block(block);
  const int d = static_cast<int>(block.permutation.size());
  const int d1 = identity_half(d);
  const int d2 = d - d1;

  // u = P z per position
  std::vector<VectorField> u(z.size());
  for (std::size_t s = 0; s < z.size(); ++s) {
    u[s] = VectorField(z[s].h, z[s].w, d);
    for (int pos = 0; pos < z[s].positions(); ++pos) {
      const double* src = z[s].at(pos);
      double* dst = u[s].at(pos);
      for (int i = 0; i < d; ++i) dst[i] = src[block.permutation[i]];
    }
  }
  check_fields(block, u);

  const auto ctx = context_means(u, d1);
  y.resize(u.size());
  std::vector<double> cond_in;
  for (std::size_t s = 0; s < u.size(); ++s) {
    y[s] = VectorField(u[s].h, u[s].w, d);
    for (int pos = 0; pos < u[s].positions(); ++pos) {
      const double* up = u[s].at(pos);
      double* yp = y[s].at(pos);
      build_cond_input(block, s, up, d1, ctx, cond_in);
      const auto s_raw = mlp_apply(block.cond_s, cond_in);
      const auto t = mlp_apply(block.cond_t, cond_in);
      check_cond_finite(s_raw, t);
      for (int c = 0; c < d1; ++c) yp[c] = up[c];
      for (int c = 0; c < d2; ++c) {
        const double sc = soft_clamp(s_raw[c], block.alpha);
        yp[d1 + c] = up[d1 + c] * std::exp(sc) + t[c];
        logdet += sc;
      }
    }
  }
}

void coupling_inverse(const CouplingBlock& block, const std::vector<VectorField>& y,
                      std::vector<VectorField>& z, double& logdet) {
  check_block(block);
  check_fields(block, y);
  const int d = static_cast<int>(block.permutation.size());
  const int d1 = identity_half(d);
  const int d2 = d - d1;

  const auto ctx = context_means(y, d1);  // identity half is unpermuted in y
  z.resize(y.size());
  std::vector<double> cond_in, u(d);
  for (std::size_t s = 0; s < y.size(); ++s) {
    z[s] = VectorField(y[s].h, y[s].w, d);
    for (int pos = 0; pos < y[s].positions(); ++pos) {
      const double* yp = y[s].at(pos);
      build_cond_input(block, s, yp, d1, ctx, cond_in);
      const auto s_raw = mlp_apply(block.cond_s, cond_in);
      const auto t = mlp_apply(block.cond_t, cond_in);
      check_cond_finite(s_raw, t);
      for (int c = 0; c < d1; ++c) u[c] = yp[c];
      for (int c = 0; c < d2; ++c) {
        const double sc = soft_clamp(s_raw[c], block.alpha);
        u[d1 + c] = (yp[d1 + c] - t[c]) * std::exp(-sc);
        logdet += sc;
      }
      double* zp = z[s].at(pos);
      for (int i = 0; i < d; ++i) zp[block.permutation[i]] = u[i];
    }
  }
}

namespace {

void check_flow_input(const CouplingFlow& flow, const std::vector<VectorField>& fields) {
  if (static_cast<int>(fields.size()) != flow.config.num_scales)
    throw ShapeError("flow: expected " + std::to_string(flow.config.num_scales) +
                     " scales, got " + std::to_string(fields.size()));
  for (const VectorField& f : fields) {
    if (f.dim != flow.config.dim) throw ShapeError("flow: field dim does not match config");
    if (f.positions() < 1) throw ShapeError("flow: empty field");
    for (double v : f.data)
      if (!std::isfinite(v)) throw NumericError("flow: non-finite input");
  }
}

}  // namespace

std::vector<VectorField> flow_forward(const CouplingFlow& flow, const std::vector<VectorField>& z,
                                      double* logdet) {
  check_flow_input(flow, z);
  std::vector<VectorField> cur = z, next;
  double ld = 0.0;
  for (const CouplingBlock& block : flow.blocks) {
    coupling_forward(block, cur, next, ld);
    cur.swap(next);
  }
  if (logdet) *logdet = ld;
  return cur;
}

std::vector<VectorField> flow_inverse(const CouplingFlow& flow, const std::vector<VectorField>& x,
                                      double* logdet) {
  check_flow_input(flow, x);
  std::vector<VectorField> cur = x, next;
  double sum_s = 0.0;
  for (auto it = flow.blocks.rbegin(); it != flow.blocks.rend(); ++it) {
    coupling_inverse(*it, cur, next, sum_s);
    cur.swap(next);
  }
  if (logdet) *logdet = -sum_s;  // log |det J| of the inverse map
  return cur;
}

CouplingFlow make_flow(const FlowConfig& cfg) {
  if (cfg.dim < 2) throw ValidationError("flow: dim must be >= 2");
  if (cfg.num_scales < 1) throw ValidationError("flow: num_scales must be >= 1");
  if (cfg.num_blocks < 1) throw ValidationError("flow: num_blocks must be >= 1");
  if (cfg.hidden < 1) throw ValidationError("flow: hidden must be >= 1");
  if (cfg.alpha <= 0.0) throw ValidationError("flow: alpha must be > 0");

  const int d1 = identity_half(cfg.dim);
  const int d2 = cfg.dim - d1;
  const bool use_ctx = cfg.cross_scale && cfg.num_scales > 1;
  const int in_dim = d1 + (use_ctx ? (cfg.num_scales - 1) * d1 : 0);

  CouplingFlow flow;
  flow.config = cfg;
  RngStream base(cfg.seed);
  std::vector<int> prev_perm;
  for (int b = 0; b < cfg.num_blocks; ++b) {
    RngStream r = base.split(static_cast<std::uint64_t>(b));
    CouplingBlock block;
    block.permutation.resize(cfg.dim);
    if (b % 2 == 0) {
      std::iota(block.permutation.begin(), block.permutation.end(), 0);
      r.shuffle(block.permutation);
    } else {
      // rotate the previous permutation by d1 so the halves swap roles:
      // every channel is transformed at least once per block pair
      for (int i = 0; i < cfg.dim; ++i)
        block.permutation[i] = prev_perm[(i + d1) % cfg.dim];
    }
    prev_perm = block.permutation;
    block.cond_s = mlp_random({in_dim, cfg.hidden, d2},
                              {Activation::tanh, Activation::identity}, r, true);
    block.cond_t = mlp_random({in_dim, cfg.hidden, d2},
                              {Activation::tanh, Activation::identity}, r, true);
    block.alpha = cfg.alpha;
    block.cross_scale = use_ctx;
    flow.blocks.push_back(std::move(block));
  }
  return flow;
}

CouplingFlow flow_identity(int dim, int num_scales) {
  if (dim < 2) throw ValidationError("flow: dim must be >= 2");
  const int d1 = identity_half(dim);
  const int d2 = dim - d1;
  CouplingFlow flow;
  flow.config = {.dim = dim, .num_scales = num_scales, .num_blocks = 1, .hidden = 1,
                 .alpha = 1.9, .cross_scale = false, .seed = 0};
  CouplingBlock block;
  block.permutation.resize(dim);
  std::iota(block.permutation.begin(), block.permutation.end(), 0);
  block.cond_s.layers.push_back(make_layer(d1, d2, Activation::identity));
  block.cond_t.layers.push_back(make_layer(d1, d2, Activation::identity));
  block.cross_scale = false;
  flow.blocks.push_back(std::move(block));
  return flow;
}

namespace {

// Inverse pass keeping everything the backward sweep needs.
struct BlockTrace {
  std::vector<VectorField> y;           // data-side input fields
  std::vector<VectorField> s;           // clamped scales, dim d2 per position
  std::vector<VectorField> t;           // shifts
  std::vector<VectorField> u2;          // recovered transformed half
  std::vector<std::vector<double>> ctx; // per-scale identity-half means
};

struct InverseTrace {
  std::vector<BlockTrace> blocks;       // indexed by block id
  std::vector<VectorField> latent;
  std::vector<std::vector<double>> pos_logdet;  // per scale, per position: sum of s
  double sum_s = 0.0;                           // total over everything
};

InverseTrace inverse_with_trace(const CouplingFlow& flow, const std::vector<VectorField>& x) {
  check_flow_input(flow, x);
  InverseTrace trace;
  trace.blocks.resize(flow.blocks.size());
  trace.pos_logdet.resize(x.size());
  for (std::size_t s = 0; s < x.size(); ++s) trace.pos_logdet[s].assign(x[s].positions(), 0.0);

  std::vector<VectorField> cur = x;
  for (int b = static_cast<int>(flow.blocks.size()) - 1; b >= 0; --b) {
    const CouplingBlock& block = flow.blocks[b];
    check_block(block);
    check_fields(block, cur);
    const int d = flow.config.dim;
    const int d1 = identity_half(d);
    const int d2 = d - d1;

    BlockTrace& bt = trace.blocks[b];
    bt.y = cur;
    bt.ctx = context_means(cur, d1);
    bt.s.resize(cur.size());
    bt.t.resize(cur.size());
    bt.u2.resize(cur.size());

    std::vector<VectorField> out(cur.size());
    std::vector<double> cond_in;
    for (std::size_t sc = 0; sc < cur.size(); ++sc) {
      const VectorField& y = cur[sc];
      bt.s[sc] = VectorField(y.h, y.w, d2);
      bt.t[sc] = VectorField(y.h, y.w, d2);
      bt.u2[sc] = VectorField(y.h, y.w, d2);
      out[sc] = VectorField(y.h, y.w, d);
      for (int pos = 0; pos < y.positions(); ++pos) {
        const double* yp = y.at(pos);
        build_cond_input(block, sc, yp, d1, bt.ctx, cond_in);
        const auto s_raw = mlp_apply(block.cond_s, cond_in);
        const auto t = mlp_apply(block.cond_t, cond_in);
        check_cond_finite(s_raw, t);
        double* sp = bt.s[sc].at(pos);
        double* tp = bt.t[sc].at(pos);
        double* u2p = bt.u2[sc].at(pos);
        double* zp = out[sc].at(pos);
        for (int c = 0; c < d2; ++c) {
          sp[c] = soft_clamp(s_raw[c], block.alpha);
          tp[c] = t[c];
          u2p[c] = (yp[d1 + c] - t[c]) * std::exp(-sp[c]);
          trace.pos_logdet[sc][pos] += sp[c];
          trace.sum_s += sp[c];
        }
        for (int i = 0; i < d1; ++i) zp[block.permutation[i]] = yp[i];
        for (int c = 0; c < d2; ++c) zp[block.permutation[d1 + c]] = u2p[c];
      }
    }
    cur.swap(out);
  }
  trace.latent = std::move(cur);
  return trace;
}

double nll_from_trace(const CouplingFlow& flow, const InverseTrace& trace) {
  double half_sq = 0.0;
  std::size_t total_positions = 0;
  for (const VectorField& f : trace.latent) {
    for (double v : f.data) half_sq += v * v;
    total_positions += static_cast<std::size_t>(f.positions());
  }
  half_sq *= 0.5;
  const double constant = 0.5 * flow.config.dim * kLog2Pi * static_cast<double>(total_positions);
  return half_sq + constant + trace.sum_s;
}

}  // namespace

LogDensityResult log_density(const CouplingFlow& flow, const std::vector<VectorField>& x) {
  InverseTrace trace = inverse_with_trace(flow, x);
  LogDensityResult r;
  r.logdet = -trace.sum_s;
  r.latent = std::move(trace.latent);
  double logp = r.logdet;
  for (const VectorField& f : r.latent) {
    double sq = 0.0;
    for (double v : f.data) sq += v * v;
    logp += -0.5 * sq - 0.5 * flow.config.dim * kLog2Pi * f.positions();
  }
  if (!std::isfinite(logp)) throw NumericError("flow: non-finite log-density");
  r.logp = logp;
  return r;
}

void FlowGrads::init_like(const CouplingFlow& flow) {
  cond_s.resize(flow.blocks.size());
  cond_t.resize(flow.blocks.size());
  for (std::size_t b = 0; b < flow.blocks.size(); ++b) {
    cond_s[b].init_like(flow.blocks[b].cond_s);
    cond_t[b].init_like(flow.blocks[b].cond_t);
  }
}

void FlowGrads::set_zero() {
  for (auto& g : cond_s) g.set_zero();
  for (auto& g : cond_t) g.set_zero();
}

void FlowGrads::add(const FlowGrads& other) {
  for (std::size_t b = 0; b < cond_s.size(); ++b) {
    cond_s[b].add(other.cond_s[b]);
    cond_t[b].add(other.cond_t[b]);
  }
}

void FlowGrads::scale(double factor) {
  for (auto& g : cond_s) g.scale(factor);
  for (auto& g : cond_t) g.scale(factor);
}

std::vector<MlpParams*> flow_trainable(CouplingFlow& flow) {
  std::vector<MlpParams*> out;
  for (CouplingBlock& b : flow.blocks) {
    out.push_back(&b.cond_s);
    out.push_back(&b.cond_t);
  }
  return out;
}

std::vector<const MlpGrads*> flow_grad_refs(const FlowGrads& grads) {
  std::vector<const MlpGrads*> out;
  for (std::size_t b = 0; b < grads.cond_s.size(); ++b) {
    out.push_back(&grads.cond_s[b]);
    out.push_back(&grads.cond_t[b]);
  }
  return out;
}

double nll_loss(const CouplingFlow& flow, const std::vector<std::vector<VectorField>>& batch) {
  if (batch.empty()) throw ValidationError("flow: empty batch");
  double total = 0.0;
  for (const auto& sample : batch) total += -log_density(flow, sample).logp;
  return total / static_cast<double>(batch.size());
}

double nll_backward(const CouplingFlow& flow, const std::vector<VectorField>& x, FlowGrads& grads,
                    std::vector<VectorField>* input_grads) {
  InverseTrace trace = inverse_with_trace(flow, x);
  const double loss = nll_from_trace(flow, trace);
  const int d = flow.config.dim;
  const int d1 = identity_half(d);
  const int d2 = d - d1;

  // dL/dz = z
  std::vector<VectorField> grad = trace.latent;

  std::vector<double> cond_in, g_in, g_s_raw(d2), g_t(d2);
  MlpCache cache_s, cache_t;
  for (std::size_t b = 0; b < flow.blocks.size(); ++b) {
    const CouplingBlock& block = flow.blocks[b];
    const BlockTrace& bt = trace.blocks[b];
    std::vector<VectorField> grad_y(bt.y.size());
    std::vector<std::vector<double>> grad_ctx(bt.y.size());
    for (std::size_t sc = 0; sc < bt.y.size(); ++sc) {
      grad_y[sc] = VectorField(bt.y[sc].h, bt.y[sc].w, d);
      grad_ctx[sc].assign(d1, 0.0);
    }

    for (std::size_t sc = 0; sc < bt.y.size(); ++sc) {
      for (int pos = 0; pos < bt.y[sc].positions(); ++pos) {
        const double* gz = grad[sc].at(pos);
        const double* sp = bt.s[sc].at(pos);
        const double* u2p = bt.u2[sc].at(pos);
        const double* yp = bt.y[sc].at(pos);
        double* gy = grad_y[sc].at(pos);

        // undo the output permutation: g_u[i] = g_z[perm[i]]
        for (int c = 0; c < d2; ++c) {
          const double gu2 = gz[block.permutation[d1 + c]];
          const double ems = std::exp(-sp[c]);
          gy[d1 + c] += gu2 * ems;
          g_t[c] = -gu2 * ems;
          const double gs = 1.0 - gu2 * u2p[c];  // +1 from the sum(s) term of the NLL
          const double ratio = sp[c] / block.alpha;
          g_s_raw[c] = gs * (1.0 - ratio * ratio);
        }

        build_cond_input(block, sc, yp, d1, bt.ctx, cond_in);
        g_in.assign(cond_in.size(), 0.0);
        mlp_forward_cached(block.cond_s, cond_in, cache_s);
        mlp_backward(block.cond_s, cache_s, g_s_raw, grads.cond_s[b], g_in);
        mlp_forward_cached(block.cond_t, cond_in, cache_t);
        mlp_backward(block.cond_t, cache_t, g_t, grads.cond_t[b], g_in);

        for (int c = 0; c < d1; ++c) gy[c] += g_in[c] + gz[block.permutation[c]];
        if (block.cross_scale && bt.y.size() > 1) {
          std::size_t off = d1;
          for (std::size_t o = 0; o < bt.y.size(); ++o) {
            if (o == sc) continue;
            for (int c = 0; c < d1; ++c) grad_ctx[o][c] += g_in[off + c];
            off += d1;
          }
        }
      }
    }

    // context means distribute evenly over the source positions
    for (std::size_t sc = 0; sc < bt.y.size(); ++sc) {
      const double inv = 1.0 / bt.y[sc].positions();
      for (int pos = 0; pos < bt.y[sc].positions(); ++pos) {
        double* gy = grad_y[sc].at(pos);
        for (int c = 0; c < d1; ++c) gy[c] += grad_ctx[sc][c] * inv;
      }
    }
    grad.swap(grad_y);
  }

  if (input_grads) *input_grads = std::move(grad);
  return loss;
}

double nll_batch_gradient(const CouplingFlow& flow,
                          const std::vector<std::vector<VectorField>>& batch, FlowGrads& grads) {
  if (batch.empty()) throw ValidationError("flow: empty batch");
  const int n = static_cast<int>(batch.size());
  std::vector<FlowGrads> per_sample(n);
  std::vector<double> losses(n, 0.0);
  for (int i = 0; i < n; ++i) per_sample[i].init_like(flow);

  ADW_PRAGMA_OMP(parallel for schedule(static))
  for (int i = 0; i < n; ++i) losses[i] = nll_backward(flow, batch[i], per_sample[i]);

  // serial reduction in sample order keeps results thread-count independent
  for (int i = 0; i < n; ++i) grads.add(per_sample[i]);
  grads.scale(1.0 / n);
  double total = 0.0;
  for (double l : losses) total += l;
  return total / n;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ValidationError("train: epochs must be >= 0");
  if (eval_every < 1) throw ValidationError("train: eval_every must be >= 1");
  if (learning_rate <= 0.0) throw ValidationError("train: learning_rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("train: momentum must be in [0,1)");
  if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
}

TrainHistory train_flow(CouplingFlow& flow, const std::vector<std::vector<VectorField>>& train,
                        const TrainConfig& cfg,
                        const std::vector<std::vector<VectorField>>* eval_set) {
  cfg.validate();
  if (train.empty()) throw ValidationError("flow: no training samples");
  TrainHistory history;
  if (cfg.epochs == 0) return history;

  SgdOptimizer opt({.learning_rate = cfg.learning_rate, .momentum = cfg.momentum,
                    .clip_norm = cfg.clip_norm});
  auto params = flow_trainable(flow);
  FlowGrads grads;
  grads.init_like(flow);
  RngStream base(cfg.seed);

  const int n = static_cast<int>(train.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream epoch_rng = base.split(static_cast<std::uint64_t>(epoch));
    epoch_rng.shuffle(order);

    double loss_sum = 0.0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int end = std::min(n, start + cfg.batch_size);
      std::vector<std::vector<VectorField>> batch;
      batch.reserve(end - start);
      for (int i = start; i < end; ++i) batch.push_back(train[order[i]]);
      grads.set_zero();
      const double batch_loss = nll_batch_gradient(flow, batch, grads);
      loss_sum += batch_loss * (end - start);
      auto grad_refs = flow_grad_refs(grads);
      opt.step(params, grad_refs);
    }
    const double epoch_loss = loss_sum / n;
    if (!std::isfinite(epoch_loss))
      throw NumericError("flow training diverged at epoch " + std::to_string(epoch));
    history.epoch_loss.push_back(epoch_loss);

    if ((epoch + 1) % cfg.eval_every == 0) {
      const auto& eval_data = eval_set ? *eval_set : train;
      history.eval_loss.emplace_back(epoch + 1, nll_loss(flow, eval_data));
    }
  }
  return history;
}

double image_score(const CouplingFlow& flow, const std::vector<VectorField>& x,
                   ScoreAggregation agg) {
  InverseTrace trace = inverse_with_trace(flow, x);
  const int d = flow.config.dim;
  if (agg == ScoreAggregation::mean_per_dim) {
    std::size_t total_positions = 0;
    for (const VectorField& f : trace.latent) total_positions += f.positions();
    return nll_from_trace(flow, trace) / (static_cast<double>(total_positions) * d);
  }
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t sc = 0; sc < trace.latent.size(); ++sc) {
    const VectorField& f = trace.latent[sc];
    for (int pos = 0; pos < f.positions(); ++pos) {
      const double* z = f.at(pos);
      double sq = 0.0;
      for (int c = 0; c < d; ++c) sq += z[c] * z[c];
      const double pos_nll = 0.5 * sq + 0.5 * d * kLog2Pi + trace.pos_logdet[sc][pos];
      worst = std::max(worst, pos_nll);
    }
  }
  return worst / d;
}

std::vector<ScoreMap> position_scores(const CouplingFlow& flow,
                                      const std::vector<VectorField>& x) {
  InverseTrace trace = inverse_with_trace(flow, x);
  const int d = flow.config.dim;
  std::vector<ScoreMap> maps;
  maps.reserve(trace.latent.size());
  for (std::size_t sc = 0; sc < trace.latent.size(); ++sc) {
    const VectorField& f = trace.latent[sc];
    ScoreMap map(f.h, f.w);
    for (int pos = 0; pos < f.positions(); ++pos) {
      const double* z = f.at(pos);
      double sq = 0.0;
      for (int c = 0; c < d; ++c) sq += z[c] * z[c];
      map.values[pos] = (0.5 * sq + 0.5 * d * kLog2Pi + trace.pos_logdet[sc][pos]) / d;
    }
    maps.push_back(std::move(map));
  }
  return maps;
}

ScoreMap localization_map(const std::vector<VectorField>& latent) {
  if (latent.empty()) throw ValidationError("localization: no latent fields");
  const int h0 = latent[0].h;
  const int w0 = latent[0].w;
  ScoreMap out(h0, w0);
  for (const VectorField& f : latent) {
    for (int y = 0; y < h0; ++y) {
      const int cy = static_cast<int>(static_cast<std::int64_t>(y) * f.h / h0);
      for (int x = 0; x < w0; ++x) {
        const int cx = static_cast<int>(static_cast<std::int64_t>(x) * f.w / w0);
        const double* v = f.at(cy * f.w + cx);
        double sq = 0.0;
        for (int c = 0; c < f.dim; ++c) sq += v[c] * v[c];
        out.at(x, y) += std::sqrt(sq);
      }
    }
  }
  return out;
}

double likelihood_ratio_score(const CouplingFlow& model, const CouplingFlow& background,
                              const std::vector<VectorField>& x) {
  if (model.config.dim != background.config.dim ||
      model.config.num_scales != background.config.num_scales)
    throw ShapeError("likelihood ratio: flows do not share dims");
  return log_density(background, x).logp - log_density(model, x).logp;
}

CouplingFlow train_background_flow(const FlowConfig& fcfg,
                                   const std::vector<std::vector<VectorField>>& train,
                                   const TrainConfig& cfg, double noise_factor,
                                   TrainHistory* history) {
  if (train.empty()) throw ValidationError("background flow: no training samples");
  const std::size_t num_scales = train.front().size();

  // per (scale, channel) std over the whole training set
  std::vector<std::vector<double>> sum(num_scales), sumsq(num_scales);
  std::vector<std::uint64_t> count(num_scales, 0);
  for (std::size_t s = 0; s < num_scales; ++s) {
    sum[s].assign(train.front()[s].dim, 0.0);
    sumsq[s].assign(train.front()[s].dim, 0.0);
  }
  for (const auto& sample : train) {
    if (sample.size() != num_scales) throw ShapeError("background flow: inconsistent scale counts");
    for (std::size_t s = 0; s < num_scales; ++s) {
      const VectorField& f = sample[s];
      for (int pos = 0; pos < f.positions(); ++pos) {
        const double* v = f.at(pos);
        for (int c = 0; c < f.dim; ++c) {
          sum[s][c] += v[c];
          sumsq[s][c] += v[c] * v[c];
        }
      }
      count[s] += static_cast<std::uint64_t>(f.positions());
    }
  }

  RngStream noise_rng = RngStream(cfg.seed).split(0xb6);
  std::vector<std::vector<VectorField>> corrupted = train;
  for (auto& sample : corrupted) {
    for (std::size_t s = 0; s < num_scales; ++s) {
      VectorField& f = sample[s];
      for (int pos = 0; pos < f.positions(); ++pos) {
        double* v = f.at(pos);
        for (int c = 0; c < f.dim; ++c) {
          const double mean = sum[s][c] / count[s];
          const double var = std::max(0.0, sumsq[s][c] / count[s] - mean * mean);
          v[c] += noise_rng.draw_normal(0.0, noise_factor * std::sqrt(var));
        }
      }
    }
  }

  CouplingFlow flow = make_flow(fcfg);
  TrainHistory h = train_flow(flow, corrupted, cfg);
  if (history) *history = std::move(h);
  return flow;
}

}  // namespace adw
