#pragma once

#include <string>

#include "pbam/lowrank_gaussian.hpp"
#include "pbam/score_target.hpp"

// Batch and match steps. One iteration draws a batch from the current
// approximation, matches scores by solving the regularized proximal update in
// closed form, and hands the resulting implicit covariance to the patch step.
// Everything here works on thin factor matrices; nothing allocates a D x D
// object.

namespace pbam {

/// Per-batch statistics: sample/score means and centered columns. The
/// centered factors carry the rank-B matrices C and Gamma without forming
/// them.
struct BatchStats {
  VectorXd z_bar;       // mean sample
  VectorXd g_bar;       // mean score
  MatrixXd z_centered;  // D x B, columns z_b - z_bar
  MatrixXd g_centered;  // D x B, columns g_b - g_bar
  Index batch_size = 0;

  /// Builds statistics from raw column-samples (both D x B).
  static BatchStats from_samples(const Eigen::Ref<const MatrixXd>& z_cols,
                                 const Eigen::Ref<const MatrixXd>& g_cols);
};

/// The un-patched covariance Sigma_half = diag(psi_t) + R R^T - H M H^T,
/// held in factor form. H = (Psi_t + R R^T) Q is cached so later products
/// with Sigma_half reuse it.
struct ImplicitCov {
  VectorXd psi_t;
  MatrixXd r;  // D x (K+B+1)
  MatrixXd h;  // D x (B+1)
  MatrixXd m;  // (B+1) x (B+1), symmetric positive semidefinite

  Index dim() const { return psi_t.size(); }

  /// Sigma_half * x computed factor-wise: psi .* x + R (R^T x) - H (M (H^T x)).
  MatrixXd times(const Eigen::Ref<const MatrixXd>& x) const;

  /// diag(Sigma_half) = psi_t + rowsum(R.*R) - rowsum((H M).*H).
  VectorXd diagonal() const;
};

/// log |Sigma_half| by two determinant-lemma steps (O(D (K+B)^2)):
/// log|V| = sum log psi + log|I + R^T Psi^{-1} R| and
/// log|V - H M H^T| = log|V| + log|I - M^{1/2} H^T V^{-1} H M^{1/2}|.
double logdet(const ImplicitCov& cov);

struct LearningSchedule {
  enum class Rule { one_over_t, constant };
  double lambda0 = 1.0;
  Rule rule = Rule::one_over_t;

  /// Parses "one_over_t" or "constant"; anything else is a config error.
  static LearningSchedule parse(double lambda0, const std::string& rule_id);
};

/// lambda_t for iteration t >= 0 (default rule: lambda0 / (1 + t)).
double schedule_value(const LearningSchedule& s, long t);

/// Draws B samples from q, evaluates their scores (in parallel across the
/// batch when the target allows it; results are combined in sample order),
/// and centers. Exactly B score evaluations. Non-finite scores abort with
/// the sample index and the number of offending coordinates.
BatchStats collect_batch(const LowRankGaussian& q, const ScoreTarget& target,
                         Index batch, Rng& rng);

/// Q = [sqrt(lambda/B) (g_b - g_bar) ..., sqrt(lambda/(1+lambda)) g_bar],
/// D x (B+1), chosen so that Q Q^T equals the score-side intermediate matrix
/// U = lambda Gamma + lambda/(1+lambda) g_bar g_bar^T.
MatrixXd build_q_factor(const BatchStats& stats, double lambda_t);

/// R = [sqrt(lambda/B) (z_b - z_bar) ..., sqrt(lambda/(1+lambda)) (mu - z_bar),
/// Lambda_t], D x (B+1+K), so that Psi_t + R R^T equals the sample-side
/// intermediate matrix V.
MatrixXd build_r_factor(const BatchStats& stats, const LowRankGaussian& q,
                        double lambda_t);

/// The closed-form covariance update in factor form:
///   Sigma_half = V - V Q [I/2 + (Q^T V Q + I/4)^{1/2}]^{-2} Q^T V
/// with H = V Q and M the bracketed inverse, computed by eigendecomposition
/// of the symmetrized (B+1) x (B+1) core. Eigenvalues in [-1e-6*norm, 0) are
/// clamped to zero; anything lower is a numeric breakdown (callers may retry
/// with a smaller lambda_t).
ImplicitCov match_step(const LowRankGaussian& q, const BatchStats& stats,
                       double lambda_t);

/// mu_next = mu/(1+lambda) + lambda/(1+lambda) (Sigma_next g_bar + z_bar),
/// where Sigma_next is the patched covariance (lambda_next, psi_next).
VectorXd mean_update(const LowRankGaussian& q, const BatchStats& stats,
                     double lambda_t, const MatrixXd& lambda_next,
                     const VectorXd& psi_next);

/// Full-covariance reference path for small D; the oracle for the implicit
/// update and the dense baseline. Accepts lambda_t = 0 (no-op update).
struct DenseGaussian {
  VectorXd mu;
  MatrixXd sigma;
};

DenseGaussian dense_bam_step(const DenseGaussian& g, const BatchStats& stats,
                             double lambda_t);

}  // namespace pbam
