#include "pbam/kernels.hpp"

#include <atomic>
#include <stdexcept>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pbam::kernels {

namespace {

std::atomic<bool> g_parallel{true};

inline Index chunk_count(Index rows) {
  return (rows + row_chunk - 1) / row_chunk;
}

inline bool use_parallel(Index chunks) {
#ifdef _OPENMP
  return g_parallel.load(std::memory_order_relaxed) && chunks > 1;
#else
  (void)chunks;
  return false;
#endif
}

}  // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }

void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

MatrixXd gram(const Eigen::Ref<const MatrixXd>& a,
              const Eigen::Ref<const MatrixXd>& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("gram: row mismatch");
  const Index n = a.rows();
  const Index nc = chunk_count(n);
  if (nc <= 1) return a.transpose() * b;

  std::vector<MatrixXd> part(static_cast<std::size_t>(nc));
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (use_parallel(nc))
#endif
  for (Index c = 0; c < nc; ++c) {
    const Index r0 = c * row_chunk;
    const Index len = std::min(row_chunk, n - r0);
    part[static_cast<std::size_t>(c)].noalias() =
        a.middleRows(r0, len).transpose() * b.middleRows(r0, len);
  }
  // Sum partials in chunk order: the result does not depend on thread count.
  MatrixXd out = part[0];
  for (Index c = 1; c < nc; ++c) out += part[static_cast<std::size_t>(c)];
  return out;
}

MatrixXd tall_times_small(const Eigen::Ref<const MatrixXd>& a,
                          const Eigen::Ref<const MatrixXd>& s) {
  if (a.cols() != s.rows())
    throw std::invalid_argument("tall_times_small: inner dimension mismatch");
  const Index n = a.rows();
  const Index nc = chunk_count(n);
  MatrixXd out(n, s.cols());
  if (nc <= 1) {
    out.noalias() = a * s;
    return out;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (use_parallel(nc))
#endif
  for (Index c = 0; c < nc; ++c) {
    const Index r0 = c * row_chunk;
    const Index len = std::min(row_chunk, n - r0);
    out.middleRows(r0, len).noalias() = a.middleRows(r0, len) * s;
  }
  return out;
}

MatrixXd scale_rows(const Eigen::Ref<const VectorXd>& d,
                    const Eigen::Ref<const MatrixXd>& a) {
  if (d.size() != a.rows())
    throw std::invalid_argument("scale_rows: size mismatch");
  const Index n = a.rows();
  const Index nc = chunk_count(n);
  MatrixXd out(n, a.cols());
  if (nc <= 1) {
    out = d.asDiagonal() * a;
    return out;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (use_parallel(nc))
#endif
  for (Index c = 0; c < nc; ++c) {
    const Index r0 = c * row_chunk;
    const Index len = std::min(row_chunk, n - r0);
    out.middleRows(r0, len) = d.segment(r0, len).asDiagonal() * a.middleRows(r0, len);
  }
  return out;
}

VectorXd hadamard_rowsum(const Eigen::Ref<const MatrixXd>& a,
                         const Eigen::Ref<const MatrixXd>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("hadamard_rowsum: shape mismatch");
  const Index n = a.rows();
  const Index nc = chunk_count(n);
  VectorXd out(n);
  if (nc <= 1) {
    out = (a.array() * b.array()).rowwise().sum();
    return out;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (use_parallel(nc))
#endif
  for (Index c = 0; c < nc; ++c) {
    const Index r0 = c * row_chunk;
    const Index len = std::min(row_chunk, n - r0);
    out.segment(r0, len) =
        (a.middleRows(r0, len).array() * b.middleRows(r0, len).array())
            .rowwise()
            .sum();
  }
  return out;
}

VectorXd rowwise_sqnorm(const Eigen::Ref<const MatrixXd>& a) {
  return hadamard_rowsum(a, a);
}

namespace reference {

MatrixXd gram(const Eigen::Ref<const MatrixXd>& a,
              const Eigen::Ref<const MatrixXd>& b) {
  return a.transpose() * b;
}

MatrixXd tall_times_small(const Eigen::Ref<const MatrixXd>& a,
                          const Eigen::Ref<const MatrixXd>& s) {
  return a * s;
}

MatrixXd scale_rows(const Eigen::Ref<const VectorXd>& d,
                    const Eigen::Ref<const MatrixXd>& a) {
  return d.asDiagonal() * a;
}

VectorXd hadamard_rowsum(const Eigen::Ref<const MatrixXd>& a,
                         const Eigen::Ref<const MatrixXd>& b) {
  return (a.array() * b.array()).rowwise().sum();
}

VectorXd rowwise_sqnorm(const Eigen::Ref<const MatrixXd>& a) {
  return a.array().square().rowwise().sum();
}

}  // namespace reference

}  // namespace pbam::kernels
