#pragma once

#include <cstdint>
#include <vector>

namespace drbert {

/// Counter-based random stream. Every draw is a pure function of
/// (seed, stream, counter), so sequences are identical across platforms
/// and a stream can be split off without disturbing its parent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

  /// Independent child stream; the parent's counter is untouched.
  Rng split(std::uint64_t child) const {
    return Rng(seed_, mix(stream_ * 0x9E3779B97F4A7C15ULL + child + 1));
  }

  std::uint64_t next_u64() {
    std::uint64_t key = mix(seed_ ^ mix(stream_ + 0xD1B54A32D192ED03ULL));
    return mix(key + 0x9E3779B97F4A7C15ULL * ++counter_);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Uses rejection to stay unbiased.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Fisher-Yates; std::shuffle's element order is implementation-defined.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace drbert
