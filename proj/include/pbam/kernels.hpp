#pragma once

#include "pbam/types.hpp"

// Data-parallel primitives for tall-and-thin matrices (many rows, few
// columns). All hot loops in the library run through these kernels; they are
// parallelized over fixed row chunks with OpenMP. Because the chunk
// partition depends only on the row count — never on the thread count — the
// results are bitwise identical whether the kernels run on one thread or
// many, which is what makes seeded runs reproducible.
//
// kernels::reference holds the plain single-threaded Eigen versions. They
// are kept as the correctness baseline for the test suite and as the
// comparison point for the kernels benchmark.

namespace pbam::kernels {

/// Fixed row-chunk size for partitioned loops and reductions.
inline constexpr Index row_chunk = 4096;

bool parallel_enabled();
void set_parallel(bool on);
int thread_count();

/// a^T * b for a: n x p, b: n x q (reduction over the long dimension n).
/// Chunk partials are accumulated in chunk order.
MatrixXd gram(const Eigen::Ref<const MatrixXd>& a,
              const Eigen::Ref<const MatrixXd>& b);

/// a * s for tall a: n x p and small s: p x q.
MatrixXd tall_times_small(const Eigen::Ref<const MatrixXd>& a,
                          const Eigen::Ref<const MatrixXd>& s);

/// Row i of the result is d(i) * row i of a.
MatrixXd scale_rows(const Eigen::Ref<const VectorXd>& d,
                    const Eigen::Ref<const MatrixXd>& a);

/// Rowwise sum of a .* b, i.e. diag(a b^T).
VectorXd hadamard_rowsum(const Eigen::Ref<const MatrixXd>& a,
                         const Eigen::Ref<const MatrixXd>& b);

/// Rowwise sum of a .* a.
VectorXd rowwise_sqnorm(const Eigen::Ref<const MatrixXd>& a);

namespace reference {

MatrixXd gram(const Eigen::Ref<const MatrixXd>& a,
              const Eigen::Ref<const MatrixXd>& b);
MatrixXd tall_times_small(const Eigen::Ref<const MatrixXd>& a,
                          const Eigen::Ref<const MatrixXd>& s);
MatrixXd scale_rows(const Eigen::Ref<const VectorXd>& d,
                    const Eigen::Ref<const MatrixXd>& a);
VectorXd hadamard_rowsum(const Eigen::Ref<const MatrixXd>& a,
                         const Eigen::Ref<const MatrixXd>& b);
VectorXd rowwise_sqnorm(const Eigen::Ref<const MatrixXd>& a);

}  // namespace reference

}  // namespace pbam::kernels
