#ifndef STACKPRED_RNG_HPP
#define STACKPRED_RNG_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace stackpred {

/// Counter-based generator: the j-th output of stream `s` under seed `k` is a
/// pure function of (k, s, j), so substreams can be handed to independent
/// workers and still reproduce the same numbers in any execution order.
///
/// Mixing is the SplitMix64 finalizer. Distributions are implemented here
/// rather than through <random> so sequences do not depend on the standard
/// library vendor.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ULL))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix(key_ + (counter_++) * kGamma); }

  /// A child stream; children of distinct ids never share outputs with the parent.
  CounterRng substream(std::uint64_t id) const { return CounterRng(key_, id + 1); }

  std::uint64_t counter() const { return counter_; }

  /// Uniform on the open interval (0, 1), 53 bits.
  double uniform() {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Unit-rate exponential.
  double exponential() { return -std::log(uniform()); }

  /// Standard normal via Box-Muller (two uniforms per draw).
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Uniform integer in [0, bound), rejection-free multiply-shift.
  std::uint64_t below(std::uint64_t bound) {
    const unsigned __int128 product =
        static_cast<unsigned __int128>((*this)()) * static_cast<unsigned __int128>(bound);
    return static_cast<std::uint64_t>(product >> 64);
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z += kGamma;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace stackpred

#endif  // STACKPRED_RNG_HPP
