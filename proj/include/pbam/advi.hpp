#pragma once

#include <functional>

#include "pbam/lowrank_gaussian.hpp"
#include "pbam/score_target.hpp"
#include "pbam/trace.hpp"

// Reparameterization-gradient ELBO maximization over diagonal and low-rank
// plus diagonal Gaussian families, with closed-form gradients (no autodiff)
// and Adam. This is the comparison baseline.

namespace pbam {

struct AdviConfig {
  enum class Family { diagonal, lowrank };
  enum class LrSchedule { constant, linear, cosine };

  Family family = Family::lowrank;
  Index rank = 0;  // K for the lowrank family; ignored (0) for diagonal
  Index batch_size = 32;
  double learning_rate0 = 0.05;
  LrSchedule lr_schedule = LrSchedule::linear;
  double lr_min = 1e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  long iterations = 0;

  void validate() const;
};

/// Learning rate at iteration t of T (linear/cosine interpolate from
/// learning_rate0 at t=0 to lr_min at t=T-1).
double advi_learning_rate(const AdviConfig& cfg, long t);

struct ElboGradient {
  VectorXd grad_mu;     // of the negative ELBO (descent direction convention)
  MatrixXd grad_lambda;
  VectorXd grad_psi;
  double neg_elbo = 0.0;
};

/// One reparameterized batch: z_b = mu + Lambda zeta_b + sqrt(psi) eps_b.
/// Data-term gradients by the chain rule from the scores; entropy-term
/// gradients in closed form via the Woodbury identity. The negative-ELBO
/// estimate uses the batch log-densities and the analytic entropy.
ElboGradient elbo_gradient(const LowRankGaussian& q, const ScoreTarget& target,
                           Index batch, Rng& rng);

struct AdviResult {
  LowRankGaussian q;
  RunTrace trace;  // per-iteration negative-ELBO estimates
};

using AdviCallback =
    std::function<void(long iteration, const LowRankGaussian& q)>;

/// Adam on (mu, Lambda, log sqrt(psi)); the log-scale parameterization keeps
/// psi strictly positive. Non-finite parameters end the run early with the
/// trace flagged diverged. `on_iteration`, when set, observes the state
/// after every update.
AdviResult adam_fit(const ScoreTarget& target, const AdviConfig& cfg,
                    LowRankGaussian init, Rng& rng,
                    const AdviCallback& on_iteration = {});

}  // namespace pbam
