#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace adw {

// Counter-based deterministic random stream (SplitMix64 finalizer over
// seed + counter * golden gamma). Same seed gives the same sequence on every
// platform; sub-streams derived with split() are decorrelated, so per-fold /
// per-epoch streams can be handed out without sharing state.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t seed) : seed_(seed) {}

  // Derived stream for a labeled sub-task (fold index, epoch, block id, ...).
  // Independent of this stream's counter position.
  RngStream split(std::uint64_t key) const;

  std::uint64_t next_u64();

  // Uniform on [0, 1).
  double draw_uniform();
  // Uniform on [lo, hi).
  double draw_uniform(double lo, double hi);
  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t draw_index(std::uint64_t n);
  // Standard normal via Box-Muller (consumes two raw draws).
  double draw_normal();
  double draw_normal(double mean, double stddev);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    // Fisher-Yates on this stream.
    if (items.size() < 2) return;
    for (std::size_t i = items.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(draw_index(i + 1));
      std::swap(items[i], items[j]);
    }
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

inline RngStream seeded_rng(std::uint64_t seed) { return RngStream(seed); }

}  // namespace adw
