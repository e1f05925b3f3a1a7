#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "pbam/lowrank_gaussian.hpp"
#include "pbam/score_target.hpp"

namespace pbam {

/// Gaussian target with a known low-rank plus diagonal covariance; keeps the
/// ground truth around for exact divergence metrics.
class GaussianTarget final : public ScoreTarget {
 public:
  explicit GaussianTarget(LowRankGaussian q) : q_(std::move(q)) {}

  Index dim() const override { return q_.dim(); }
  VectorXd score(const Eigen::Ref<const VectorXd>& z) const override;
  bool has_log_density() const override { return true; }
  double log_density(const Eigen::Ref<const VectorXd>& z) const override;

  const LowRankGaussian& ground_truth() const { return q_; }

 private:
  LowRankGaussian q_;
};

/// mu_i ~ N(0,1), psi_i ~ U(0,1) floored at 1e-6, Lambda_ij ~ N(0,1).
/// Draw order: mu, then psi, then Lambda column-major.
GaussianTarget synthetic_gaussian(Index dim, Index rank, Rng& rng);

/// Latent-GP Poisson counts on a 1-d grid:
///   rate_n = exp(f_n + lik_offset),
///   log p(f) = sum_n [y_n (f_n + lik_offset) - rate_n]
///              - (f - prior_mean)^T Ktilde^{-1} (f - prior_mean) / 2 + const,
/// with Ktilde the RBF kernel k(x,x') = exp(-(x-x')^2 / (2 l^2)) plus jitter,
/// Cholesky-factored once at construction. Prior solves are O(D^2); the
/// target owns that cost, not the inference loop.
class GpPoissonTarget final : public ScoreTarget {
 public:
  GpPoissonTarget(VectorXd grid, double length_scale, VectorXd counts,
                  double prior_mean = 0.0, double lik_offset = 0.0);
  /// Custom kernel matrix (jitter and factorization still applied here).
  GpPoissonTarget(MatrixXd kernel, VectorXd counts, double prior_mean = 0.0,
                  double lik_offset = 0.0);

  Index dim() const override { return counts_.size(); }
  VectorXd score(const Eigen::Ref<const VectorXd>& f) const override;
  bool has_log_density() const override { return true; }
  double log_density(const Eigen::Ref<const VectorXd>& f) const override;

  const VectorXd& counts() const { return counts_; }
  double lik_offset() const { return lik_offset_; }
  const Eigen::LLT<MatrixXd>& prior_chol() const { return chol_; }

 private:
  VectorXd counts_;
  double prior_mean_;
  double lik_offset_;
  Eigen::LLT<MatrixXd> chol_;
};

/// The Poisson regression setup: unit-amplitude RBF kernel on `grid`,
/// zero-mean prior, rates exp(f).
GpPoissonTarget gp_poisson(const VectorXd& grid, double length_scale,
                           const VectorXd& counts);

/// Binned point-process counts with a whitened latent GP: the inferred
/// variable is w ~ N(0, I) with latent field f = L w (L the Cholesky factor
/// of the kernel plus jitter) and rates exp(f_n + m). The smooth kernels
/// used for event intensities are near-singular, so inference runs in the
/// whitened coordinates where the posterior is well conditioned; the f-space
/// formulation with an explicit K^{-1} solve is numerically explosive there.
class WhitenedGpPoissonTarget final : public ScoreTarget {
 public:
  WhitenedGpPoissonTarget(MatrixXd kernel, VectorXd counts, double lik_offset);

  Index dim() const override { return counts_.size(); }
  VectorXd score(const Eigen::Ref<const VectorXd>& w) const override;
  bool has_log_density() const override { return true; }
  double log_density(const Eigen::Ref<const VectorXd>& w) const override;

  const VectorXd& counts() const { return counts_; }
  double lik_offset() const { return lik_offset_; }
  /// Latent field f = L w for reporting fitted rates.
  VectorXd latent_field(const Eigen::Ref<const VectorXd>& w) const;

 private:
  VectorXd counts_;
  double lik_offset_;
  MatrixXd chol_l_;
};

/// Log-Gaussian Cox process on binned events: n_bins equal-width bins over
/// [window_lo, window_hi] (left-closed, right-open; final bin right-closed),
/// grid in bin units (centers at n + 1/2), and rate offset m inside the
/// likelihood. m defaults to log(#events / n_bins).
WhitenedGpPoissonTarget lgcp_from_events(const std::vector<double>& event_times,
                                         Index n_bins, double length_scale,
                                         std::optional<double> mean_offset,
                                         double window_lo, double window_hi);

/// Bins event times; throws listing the indices of out-of-window events.
VectorXd bin_events(const std::vector<double>& event_times, Index n_bins,
                    double window_lo, double window_hi);

/// One real timestamp per line; '#' starts a comment; blank lines ignored.
/// Returns sorted finite timestamps. Unparsable lines are reported with
/// their line number.
std::vector<double> ingest_events(const std::string& path);

/// Draws f ~ N(0, Ktilde) on the grid and y_n ~ Poisson(exp(f_n)), for
/// prior-simulated regression data.
VectorXd simulate_gp_poisson_counts(const VectorXd& grid, double length_scale,
                                    Rng& rng);

/// Poisson draw by inversion of uniform products (exact for moderate rates;
/// large rates are split additively).
long poisson_draw(double rate, Rng& rng);

/// Target with identically zero score: the negligible-cost model used by the
/// scaling benchmark.
class ZeroScoreTarget final : public ScoreTarget {
 public:
  explicit ZeroScoreTarget(Index dim) : dim_(dim) {}
  Index dim() const override { return dim_; }
  VectorXd score(const Eigen::Ref<const VectorXd>&) const override {
    return VectorXd::Zero(dim_);
  }
  bool has_log_density() const override { return true; }
  double log_density(const Eigen::Ref<const VectorXd>&) const override {
    return 0.0;
  }

 private:
  Index dim_;
};

}  // namespace pbam
