// Splittable counter-based random number streams.
//
// Every stochastic routine in the library takes an explicit RngStream so that
// results are reproducible regardless of thread count: streams are derived by
// key, never by execution order.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>

#include <Eigen/Dense>

namespace ebmcal {

namespace detail {

// SplitMix64 finalizer (Stafford variant 13).
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

}  // namespace detail

// Counter-based generator: output i of stream k is mix64(k + (i+1)*golden),
// i.e. the SplitMix64 sequence seeded at k. split(j) derives a decorrelated
// child stream; the parent may keep drawing afterwards.
class RngStream {
 public:
  RngStream() : RngStream(0) {}
  explicit RngStream(std::uint64_t seed)
      : key_(detail::mix64(seed ^ 0x5851f42d4c957f2dULL)), counter_(0) {}

  static RngStream from_raw(std::uint64_t key, std::uint64_t counter,
                            bool has_spare = false, double spare = 0.0) {
    RngStream s;
    s.key_ = key;
    s.counter_ = counter;
    s.has_spare_ = has_spare;
    s.spare_ = spare;
    return s;
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }
  bool has_spare() const { return has_spare_; }
  double spare() const { return spare_; }

  RngStream split(std::uint64_t index) const {
    RngStream child;
    child.key_ = detail::mix64(key_ ^ detail::mix64((index + 1) * detail::kGolden));
    child.counter_ = 0;
    return child;
  }

  std::uint64_t next_u64() {
    counter_ += 1;
    return detail::mix64(key_ + counter_ * detail::kGolden);
  }

  // Uniform on (0, 1].
  double uniform() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal();
    return z;
  }

  // Gamma(shape, 1) by Marsaglia-Tsang, with the alpha < 1 boost.
  double gamma(double shape) {
    if (!(shape > 0.0)) throw std::invalid_argument("gamma: shape must be > 0");
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x;
      double v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double chi_squared(double dof) { return 2.0 * gamma(0.5 * dof); }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ebmcal
