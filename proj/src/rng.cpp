#include "adw/rng.hpp"

#include <cmath>

#include "adw/errors.hpp"

namespace adw {
namespace {

constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

RngStream RngStream::split(std::uint64_t key) const {
  return RngStream(mix64(seed_ ^ mix64((key + 1) * kGamma)));
}

std::uint64_t RngStream::next_u64() {
  ++counter_;
  return mix64(seed_ + counter_ * kGamma);
}

double RngStream::draw_uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::draw_uniform(double lo, double hi) {
  return lo + (hi - lo) * draw_uniform();
}

std::uint64_t RngStream::draw_index(std::uint64_t n) {
  if (n == 0) throw ValidationError("draw_index: n must be positive");
  // Rejection-free modulo is biased for huge n; our n are tiny, but use
  // rejection anyway so the stream is unbiased for any n.
  const std::uint64_t limit = ~0ULL - (~0ULL % n);
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % n;
}

double RngStream::draw_normal() {
  // Box-Muller, cosine branch only: two raw draws per normal keeps the
  // stream position a pure function of the draw count.
  double u1 = draw_uniform();
  double u2 = draw_uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  return r * std::cos(6.283185307179586476925286766559 * u2);
}

double RngStream::draw_normal(double mean, double stddev) {
  return mean + stddev * draw_normal();
}

}  // namespace adw
