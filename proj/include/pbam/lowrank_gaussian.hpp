#pragma once

#include <string>

#include <Eigen/Cholesky>

#include "pbam/rng.hpp"
#include "pbam/types.hpp"

namespace pbam {

/// Gaussian with covariance Sigma = Lambda Lambda^T + diag(psi), where Lambda
/// is D x K with K <= D (K = 0 gives a purely diagonal covariance) and psi is
/// a strictly positive diagonal stored as a vector.
///
/// Instances are immutable after construction. The Woodbury pieces
/// (psi^{-1} Lambda and the Cholesky factor of S = I + Lambda^T psi^{-1}
/// Lambda) are computed once in the constructor, so every solve, log-density,
/// and log-determinant afterwards costs O(D) in the dimension.
class LowRankGaussian {
 public:
  static constexpr double psi_floor = 1e-10;

  LowRankGaussian(VectorXd mu, MatrixXd lambda, VectorXd psi);

  Index dim() const { return mu_.size(); }
  Index rank() const { return lambda_.cols(); }
  const VectorXd& mu() const { return mu_; }
  const MatrixXd& lambda() const { return lambda_; }
  const VectorXd& psi() const { return psi_; }

  /// diag(Lambda Lambda^T + Psi): the marginal variances.
  VectorXd marginal_variances() const;

  // Cached factorization pieces. capacitance() is S = I + Lambda^T psi^{-1}
  // Lambda; capacitance_llt() its Cholesky factorization.
  const VectorXd& psi_inv() const { return psi_inv_; }
  const MatrixXd& psi_inv_lambda() const { return w_; }
  const Eigen::LLT<MatrixXd>& capacitance_llt() const;

 private:
  VectorXd mu_;
  MatrixXd lambda_;
  VectorXd psi_;
  VectorXd psi_inv_;
  MatrixXd w_;  // psi^{-1} Lambda
  Eigen::LLT<MatrixXd> llt_;
  bool llt_ok_ = true;
  double logdet_ = 0.0;

  friend double logdet(const LowRankGaussian&);
};

/// n independent draws, one per row, via z = mu + Lambda zeta + sqrt(psi) eps.
/// Draw order per sample: K factor normals, then D noise normals.
MatrixXd sample(const LowRankGaussian& q, Index n, Rng& rng);

/// (Lambda Lambda^T + Psi)^{-1} y via the Woodbury identity; y is D x m.
MatrixXd woodbury_solve(const LowRankGaussian& q,
                        const Eigen::Ref<const MatrixXd>& y);

/// diag((Lambda Lambda^T + Psi)^{-1}).
VectorXd precision_diagonal(const LowRankGaussian& q);

/// log |Lambda Lambda^T + Psi| by the matrix determinant lemma.
double logdet(const LowRankGaussian& q);

double logpdf(const LowRankGaussian& q, const Eigen::Ref<const VectorXd>& z);

/// Closed-form KL(qa || qb); the trace term is computed factor-wise.
double gauss_kl(const LowRankGaussian& qa, const LowRankGaussian& qb);

double entropy(const LowRankGaussian& q);

// Binary container: 8-byte magic "PBAMGLRD", little-endian uint64 D and K,
// then mu, Lambda (column-major), psi as little-endian IEEE-754 doubles.
// Round-trips bit-exactly.
void save(const LowRankGaussian& q, const std::string& path);
LowRankGaussian load(const std::string& path);

}  // namespace pbam
