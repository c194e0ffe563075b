#include "adw/reference.hpp"

#include <cstring>

#include "adw/errors.hpp"

namespace adw::reference {

// Two passes (conv+relu map, then pooling) instead of the fused parallel
// loop. Per output value the additions happen in the same order, so the
// results are bit-identical.
FeatureTensor conv_relu_pool(const GrayImage& img, const std::vector<float>& filters,
                             int num_filters, int kernel, int pool) {
  const int ch = img.height - kernel + 1;
  const int cw = img.width - kernel + 1;
  const int oh = ch / pool;
  const int ow = cw / pool;
  FeatureTensor out(num_filters, oh, ow);
  const double pool_norm = 1.0 / (pool * pool);

  std::vector<double> relu_map(static_cast<std::size_t>(ch) * cw);
  for (int f = 0; f < num_filters; ++f) {
    const float* filt = filters.data() + static_cast<std::size_t>(f) * kernel * kernel;
    for (int cy = 0; cy < ch; ++cy) {
      for (int cx = 0; cx < cw; ++cx) {
        double conv = 0.0;
        for (int ky = 0; ky < kernel; ++ky)
          for (int kx = 0; kx < kernel; ++kx)
            conv += filt[ky * kernel + kx] * img.at(cx + kx, cy + ky);
        relu_map[static_cast<std::size_t>(cy) * cw + cx] = conv > 0.0 ? conv : 0.0;
      }
    }
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int py = 0; py < pool; ++py)
          for (int px = 0; px < pool; ++px)
            acc += relu_map[static_cast<std::size_t>(oy * pool + py) * cw + ox * pool + px];
        out.at(f, oy, ox) = static_cast<float>(acc * pool_norm);
      }
    }
  }
  return out;
}

void mlp_apply_field(const MlpParams& params, const VectorField& in, VectorField& out) {
  if (in.dim != params.input_dim())
    throw ShapeError("reference::mlp_apply_field: field dim mismatch");
  out = VectorField(in.h, in.w, params.output_dim());
  for (int p = 0; p < in.positions(); ++p) {
    const std::vector<double> y =
        mlp_apply(params, {in.at(p), static_cast<std::size_t>(in.dim)});
    std::memcpy(out.at(p), y.data(), sizeof(double) * y.size());
  }
}

double nll_batch_gradient(const CouplingFlow& flow,
                          const std::vector<std::vector<VectorField>>& batch,
                          FlowGrads& grads) {
  if (batch.empty()) throw ValidationError("reference: empty batch");
  const int n = static_cast<int>(batch.size());
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    FlowGrads g;
    g.init_like(flow);
    total += nll_backward(flow, batch[i], g);
    grads.add(g);
  }
  grads.scale(1.0 / n);
  return total / n;
}

ScoreMap disc_probability_map(const AdaptorDiscriminator& model,
                              const VectorField& features) {
  model.validate();
  if (features.dim != model.feature_dim())
    throw ShapeError("reference::disc_probability_map: field dim mismatch");
  ScoreMap map(features.h, features.w);
  for (int p = 0; p < features.positions(); ++p) {
    const std::vector<double> mid =
        mlp_apply(model.adaptor, {features.at(p), static_cast<std::size_t>(features.dim)});
    const std::vector<double> logit = mlp_apply(model.discriminator, mid);
    map.values[static_cast<std::size_t>(p)] = sigmoid(logit[0]);
  }
  return map;
}

}  // namespace adw::reference
