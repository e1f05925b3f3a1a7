#pragma once

#include <vector>

#include "pbam/bam.hpp"

// Patch step: project an implicit covariance onto the low-rank plus diagonal
// family by EM for infinite-data factor analysis, with over-relaxation and a
// surrogate-based early stop.

namespace pbam {

struct PatchConfig {
  double eta = 1.2;     // momentum, in (0, 2)
  double tol = 1e-4;    // early-stop tolerance on the surrogate change
  int max_steps = 500;  // >= 1
  Index rank = 0;       // K of the projected family

  void validate() const;
};

struct PatchReport {
  int steps_taken = 0;
  std::vector<double> kl_surrogate_trace;  // value before step 1, then per step
  bool stopped_early = false;
  int floored_psi_entries = 0;   // momentum overshoots clamped to the floor
  int momentum_fallbacks = 0;    // over-relaxed steps retaken at eta = 1
};

/// beta = Lambda^T (Lambda Lambda^T + Psi)^{-1}, K x D, via the Woodbury
/// identity (no D x D intermediate).
MatrixXd em_beta(const MatrixXd& lambda, const VectorXd& psi);

struct EmStepResult {
  MatrixXd lambda;
  VectorXd psi;
  int floored = 0;
};

/// One EM update with momentum eta:
///   Lambda' = Sigma_half beta^T (beta Sigma_half beta^T + I - beta Lambda)^{-1}
///   Psi'    = diag((I - Lambda' beta) Sigma_half)
/// followed by the blend (1-eta) old + eta new for both parameters. Products
/// with Sigma_half use its factor form. Psi entries are floored at 1e-10; an
/// all-floored Psi is reported as a degenerate-diagonal error.
EmStepResult em_step(const ImplicitCov& sigma_half, const MatrixXd& lambda_tau,
                     const VectorXd& psi_tau, double eta);

/// log|Lambda Lambda^T + Psi| + tr((Lambda Lambda^T + Psi)^{-1} Sigma_half).
/// Equals 2 KL(q_half || q) up to the constant D + log|Sigma_half|.
double kl_surrogate(const ImplicitCov& sigma_half, const MatrixXd& lambda,
                    const VectorXd& psi);

struct PatchResult {
  MatrixXd lambda;
  VectorXd psi;
  PatchReport report;
};

/// Runs em_step until the surrogate change is small relative to the true
/// divergence KL(q_half || q) = (surrogate - D - log|Sigma_half|) / 2, or
/// max_steps is reached. A surrogate-increasing over-relaxed step (possible
/// at eta > 1; monotonicity is only guaranteed at eta = 1) is retaken without
/// momentum. Callers warm-start with the parameters of the previous
/// iteration.
PatchResult patch(const ImplicitCov& sigma_half, MatrixXd lambda_init,
                  VectorXd psi_init, const PatchConfig& cfg);

}  // namespace pbam
