#include "pbam/rng.hpp"

namespace pbam {

namespace {

// splitmix64 finalizer
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return mix64(master + (index + 1) * 0x9E3779B97F4A7C15ULL);
}

MatrixXd normal_matrix(Rng& rng, Index rows, Index cols) {
  MatrixXd m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
  return m;
}

VectorXd normal_vector(Rng& rng, Index n) {
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

VectorXd uniform_vector(Rng& rng, Index n) {
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = rng.uniform();
  return v;
}

}  // namespace pbam
