#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "pbam/types.hpp"

namespace pbam {

/// Deterministic random stream.
///
/// Built on std::mt19937_64, whose output sequence is fixed by the C++
/// standard, with explicit uniform/normal transforms (Box-Muller). The
/// standard distribution adaptors are implementation-defined and deliberately
/// avoided, so that a given seed reproduces the same draws bit for bit on any
/// conforming platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  /// Uniform on [0, 1) with 53 random mantissa bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  /// Standard normal. Box-Muller pairs; the second value of each pair is
  /// cached and returned by the next call.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 on the open interval (0,1) so the log is always finite
    const double u1 = (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  std::uint64_t next_u64() { return gen_(); }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Independent child seed for sub-stream `index` of a master seed
/// (splitmix64 finalizer over master + (index+1) * golden gamma).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

/// Fills in column-major order (column by column) from `rng`.
MatrixXd normal_matrix(Rng& rng, Index rows, Index cols);
VectorXd normal_vector(Rng& rng, Index n);
VectorXd uniform_vector(Rng& rng, Index n);

}  // namespace pbam
