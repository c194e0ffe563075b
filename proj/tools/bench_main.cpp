// Times the OpenMP kernels against their serial references and prints a
// speedup table. Usage: adw_bench [threads] [repeats]
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "adw/features.hpp"
#include "adw/flow.hpp"
#include "adw/mlp.hpp"
#include "adw/parallel.hpp"
#include "adw/reference.hpp"
#include "adw/rng.hpp"
#include "adw/synthdisc.hpp"

using namespace adw;

namespace {

double time_ms(int repeats, const std::function<void()>& fn) {
  fn();  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < repeats; ++r) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / repeats;
}

GrayImage random_gray(int w, int h, std::uint64_t seed) {
  GrayImage img(w, h);
  RngStream rng = seeded_rng(seed);
  for (auto& v : img.data) v = rng.draw_uniform() * 255.0;
  return img;
}

VectorField random_field(int h, int w, int dim, std::uint64_t seed) {
  VectorField f(h, w, dim);
  RngStream rng = seeded_rng(seed);
  for (auto& v : f.data) v = rng.draw_normal();
  return f;
}

void row(const char* kernel, const char* size, double serial_ms, double parallel_ms) {
  std::printf("%-22s %-14s %10.3f %12.3f %9.2fx\n", kernel, size, serial_ms, parallel_ms,
              serial_ms / parallel_ms);
}

}  // namespace

int main(int argc, char** argv) {
  const int threads = argc > 1 ? std::atoi(argv[1]) : max_threads();
  const int repeats = argc > 2 ? std::atoi(argv[2]) : 5;
  if (threads < 1 || repeats < 1) {
    std::fprintf(stderr, "usage: adw_bench [threads >= 1] [repeats >= 1]\n");
    return 1;
  }

  std::printf("threads=%d repeats=%d\n", threads, repeats);
  std::printf("%-22s %-14s %10s %12s %9s\n", "kernel", "size", "serial ms", "parallel ms",
              "speedup");

  {
    ExtractorConfig cfg;
    cfg.num_filters = 16;
    const std::vector<float> filters = extractor_filters(cfg);
    for (int side : {128, 256}) {
      const GrayImage img = random_gray(side, side, 1);
      set_threads(1);
      const double serial = time_ms(repeats, [&] {
        reference::conv_relu_pool(img, filters, cfg.num_filters, cfg.kernel, cfg.pool);
      });
      set_threads(threads);
      const double parallel = time_ms(repeats, [&] {
        conv_relu_pool(img, filters, cfg.num_filters, cfg.kernel, cfg.pool);
      });
      const std::string size = std::to_string(side) + "x" + std::to_string(side);
      row("conv_relu_pool", size.c_str(), serial, parallel);
    }
  }

  {
    RngStream rng = seeded_rng(2);
    const MlpParams params =
        mlp_random({16, 64, 64, 16}, {Activation::relu, Activation::relu, Activation::identity},
                   rng);
    const VectorField in = random_field(48, 48, 16, 3);
    set_threads(1);
    VectorField out;
    const double serial =
        time_ms(repeats, [&] { reference::mlp_apply_field(params, in, out); });
    set_threads(threads);
    const double parallel = time_ms(repeats, [&] { mlp_apply_field(params, in, out); });
    row("mlp_apply_field", "48x48x16", serial, parallel);
  }

  {
    FlowConfig fc;
    fc.dim = 8;
    fc.num_scales = 2;
    fc.num_blocks = 4;
    fc.hidden = 32;
    fc.seed = 4;
    const CouplingFlow flow = make_flow(fc);
    std::vector<std::vector<VectorField>> batch;
    for (int i = 0; i < 16; ++i)
      batch.push_back({random_field(12, 12, 8, 10 + i), random_field(6, 6, 8, 40 + i)});
    set_threads(1);
    const double serial = time_ms(repeats, [&] {
      FlowGrads g;
      g.init_like(flow);
      reference::nll_batch_gradient(flow, batch, g);
    });
    set_threads(threads);
    const double parallel = time_ms(repeats, [&] {
      FlowGrads g;
      g.init_like(flow);
      nll_batch_gradient(flow, batch, g);
    });
    row("nll_batch_gradient", "16x(12x12x8)", serial, parallel);
  }

  {
    AdaptorDiscriminator model = make_adaptor_discriminator(16, 64, 5);
    RngStream rng = seeded_rng(6);
    for (auto& layer : model.discriminator.layers)
      for (auto& w : layer.weights) w = rng.draw_normal() * 0.3;
    const VectorField field = random_field(64, 64, 16, 7);
    set_threads(1);
    const double serial =
        time_ms(repeats, [&] { reference::disc_probability_map(model, field); });
    set_threads(threads);
    const double parallel = time_ms(repeats, [&] { disc_probability_map(model, field); });
    row("disc_probability_map", "64x64x16", serial, parallel);
  }

  set_threads(1);
  return 0;
}
