#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "oracles.hpp"
#include "pbam/errors.hpp"
#include "pbam/targets.hpp"

using namespace pbam;

TEST_CASE("schedule_value") {
  const auto s = LearningSchedule::parse(1.0, "one_over_t");
  CHECK(schedule_value(s, 0) == 1.0);
  CHECK(schedule_value(s, 3) == 0.25);
  const auto c = LearningSchedule::parse(0.7, "constant");
  CHECK(schedule_value(c, 0) == 0.7);
  CHECK(schedule_value(c, 1000) == 0.7);
  CHECK_THROWS_AS((void)schedule_value(s, -1), std::invalid_argument);
  CHECK_THROWS_AS((void)LearningSchedule::parse(1.0, "sqrt"), config_error);
  CHECK_THROWS_AS((void)LearningSchedule::parse(0.0, "constant"), config_error);
}

TEST_CASE("collect_batch with a linear score negates the statistics") {
  // standard normal target: s(z) = -z exactly
  const LowRankGaussian std_normal(VectorXd::Zero(3), MatrixXd(3, 0),
                                   VectorXd::Ones(3));
  const GaussianTarget target(std_normal);
  Rng rng(31);
  const BatchStats stats = collect_batch(std_normal, target, 2, rng);
  CHECK((stats.g_bar + stats.z_bar).norm() < 1e-14);
  CHECK((stats.g_centered + stats.z_centered).norm() < 1e-14);
}

TEST_CASE("collect_batch with B = 1 has zero centered columns") {
  const LowRankGaussian q(VectorXd::Zero(2), MatrixXd(2, 0), VectorXd::Ones(2));
  const GaussianTarget target(q);
  Rng rng(32);
  const BatchStats stats = collect_batch(q, target, 1, rng);
  CHECK(stats.z_centered.norm() == 0.0);
  CHECK(stats.g_centered.norm() == 0.0);
}

TEST_CASE("collect_batch statistics match a direct loop") {
  Rng make(33);
  const auto q = oracles::random_gaussian(make, 3, 1);
  const GaussianTarget target(oracles::random_gaussian(make, 3, 2));
  Rng r1(99), r2(99);
  const BatchStats stats = collect_batch(q, target, 4, r1);
  const MatrixXd z = sample(q, 4, r2);  // same draws as inside collect_batch
  VectorXd z_bar = VectorXd::Zero(3), g_bar = VectorXd::Zero(3);
  MatrixXd g_cols(3, 4);
  for (int b = 0; b < 4; ++b) {
    g_cols.col(b) = target.score(z.row(b));
    z_bar += z.row(b).transpose() / 4.0;
    g_bar += g_cols.col(b) / 4.0;
  }
  CHECK((stats.z_bar - z_bar).norm() < 1e-12);
  CHECK((stats.g_bar - g_bar).norm() < 1e-12);
  for (int b = 0; b < 4; ++b) {
    CHECK((stats.z_centered.col(b) - (z.row(b).transpose() - z_bar)).norm() <
          1e-12);
    CHECK((stats.g_centered.col(b) - (g_cols.col(b) - g_bar)).norm() < 1e-12);
  }
}

namespace {

class NanScoreTarget final : public ScoreTarget {
 public:
  explicit NanScoreTarget(Index d) : d_(d) {}
  Index dim() const override { return d_; }
  VectorXd score(const Eigen::Ref<const VectorXd>&) const override {
    VectorXd g = VectorXd::Zero(d_);
    g(0) = std::numeric_limits<double>::quiet_NaN();
    g(1) = std::numeric_limits<double>::infinity();
    return g;
  }

 private:
  Index d_;
};

}  // namespace

TEST_CASE("collect_batch reports non-finite scores with diagnostics") {
  const LowRankGaussian q(VectorXd::Zero(3), MatrixXd(3, 0), VectorXd::Ones(3));
  const NanScoreTarget target(3);
  Rng rng(34);
  try {
    (void)collect_batch(q, target, 2, rng);
    FAIL("expected numeric_error");
  } catch (const numeric_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("sample 0") != std::string::npos);
    CHECK(msg.find("2 of 3") != std::string::npos);
  }
}

TEST_CASE("build_q_factor satisfies Q Q^T = U") {
  Rng rng(35);
  for (double lambda : {0.1, 1.0, 10.0}) {
    const BatchStats stats = oracles::random_stats(rng, 4, 3);
    const MatrixXd qf = build_q_factor(stats, lambda);
    CHECK(qf.cols() == 4);
    const MatrixXd u = oracles::dense_u(stats, lambda);
    CHECK((qf * qf.transpose() - u).norm() < 1e-12 * (1.0 + u.norm()));
  }
  CHECK_THROWS_AS((void)build_q_factor(oracles::random_stats(rng, 3, 2), 0.0),
                  std::invalid_argument);
}

TEST_CASE("build_q_factor edge columns") {
  Rng rng(36);
  // symmetric columns force g_bar = 0
  MatrixXd g(3, 2);
  g.col(0) = normal_vector(rng, 3);
  g.col(1) = -g.col(0);
  const MatrixXd z = normal_matrix(rng, 3, 2);
  const BatchStats stats = BatchStats::from_samples(z, g);
  const MatrixXd qf = build_q_factor(stats, 2.0);
  CHECK(qf.col(2).norm() == 0.0);
  const MatrixXd u = oracles::dense_u(stats, 2.0);
  CHECK((qf * qf.transpose() - u).norm() < 1e-12 * (1.0 + u.norm()));

  // B = 1: the single centered column is zero
  const BatchStats one = BatchStats::from_samples(normal_matrix(rng, 3, 1),
                                                  normal_matrix(rng, 3, 1));
  CHECK(build_q_factor(one, 1.0).col(0).norm() == 0.0);
}

TEST_CASE("build_r_factor satisfies Psi + R R^T = V") {
  Rng rng(37);
  const auto q = oracles::random_gaussian(rng, 3, 1);
  const BatchStats stats = oracles::random_stats(rng, 3, 2);
  for (double lambda : {0.1, 1.0, 10.0}) {
    const MatrixXd rf = build_r_factor(stats, q, lambda);
    CHECK(rf.cols() == 2 + 1 + 1);
    MatrixXd v = MatrixXd(q.psi().asDiagonal());
    v += rf * rf.transpose();
    const MatrixXd expected =
        oracles::dense_v(stats, oracles::dense_cov(q), q.mu(), lambda);
    CHECK((v - expected).norm() < 1e-12 * (1.0 + expected.norm()));
  }

  // mu_t = z_bar zeroes the mean-shift column
  BatchStats centered_stats = stats;
  const LowRankGaussian q_at_mean(stats.z_bar, q.lambda(), q.psi());
  const MatrixXd rf = build_r_factor(centered_stats, q_at_mean, 1.0);
  CHECK(rf.col(2).norm() == 0.0);

  // lambda -> 0 freezes V at Sigma_t
  const MatrixXd rf0 = build_r_factor(stats, q, 1e-12);
  MatrixXd v0 = MatrixXd(q.psi().asDiagonal());
  v0 += rf0 * rf0.transpose();
  CHECK((v0 - oracles::dense_cov(q)).norm() < 1e-9);
}

TEST_CASE("match_step reconstruction equals the dense update") {
  Rng rng(38);
  for (int trial = 0; trial < 60; ++trial) {
    const Index d = 2 + static_cast<Index>(rng.uniform() * 11);
    const Index k = static_cast<Index>(rng.uniform() * std::min<Index>(d + 1, 5));
    const Index b = 1 + static_cast<Index>(rng.uniform() * 6);
    const double lambda = std::vector<double>{0.1, 1.0, 10.0}[trial % 3];
    const auto q = oracles::random_gaussian(rng, d, k);
    const BatchStats stats = oracles::random_stats(rng, d, b);

    const ImplicitCov ic = match_step(q, stats, lambda);
    const MatrixXd implicit = oracles::reconstruct(ic);

    const DenseGaussian dense_in{q.mu(), oracles::dense_cov(q)};
    const DenseGaussian dense_out = dense_bam_step(dense_in, stats, lambda);
    CHECK((implicit - dense_out.sigma).norm() / dense_out.sigma.norm() < 1e-8);

    // symmetry and near-PSD of the reconstruction
    CHECK((implicit - implicit.transpose()).norm() < 1e-10 * implicit.norm());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(implicit);
    CHECK(es.eigenvalues().minCoeff() > -1e-8 * implicit.trace());
  }
}

TEST_CASE("dense_bam_step solves the proximal stationarity equation") {
  // Sigma U Sigma + Sigma = V pins down the update as the argmin.
  Rng rng(39);
  for (int trial = 0; trial < 20; ++trial) {
    const Index d = 2 + static_cast<Index>(rng.uniform() * 5);
    const Index b = 1 + static_cast<Index>(rng.uniform() * 4);
    const double lambda = std::vector<double>{0.1, 1.0, 10.0}[trial % 3];
    const auto q = oracles::random_gaussian(rng, d, 2 % (d + 1));
    const BatchStats stats = oracles::random_stats(rng, d, b);
    const MatrixXd sigma_t = oracles::dense_cov(q);

    const DenseGaussian out = dense_bam_step({q.mu(), sigma_t}, stats, lambda);
    const MatrixXd u = oracles::dense_u(stats, lambda);
    const MatrixXd v = oracles::dense_v(stats, sigma_t, q.mu(), lambda);
    const MatrixXd residual = out.sigma * u * out.sigma + out.sigma - v;
    CHECK(residual.norm() < 1e-8 * (1.0 + v.norm()));
  }
}

TEST_CASE("match_step with zero scores returns V") {
  Rng rng(40);
  const Index d = 4, b = 3;
  const auto q = oracles::random_gaussian(rng, d, 2);
  const MatrixXd z = normal_matrix(rng, d, b);
  const BatchStats stats = BatchStats::from_samples(z, MatrixXd::Zero(d, b));
  const ImplicitCov ic = match_step(q, stats, 1.5);
  const MatrixXd expected =
      oracles::dense_v(stats, oracles::dense_cov(q), q.mu(), 1.5);
  CHECK((oracles::reconstruct(ic) - expected).norm() < 1e-10 * expected.norm());
}

TEST_CASE("match_step keeps the covariance near a self-target fixed point") {
  // q_t equals the Gaussian target; with a large batch the update stays put.
  Rng rng(41);
  const Index d = 2, b = 512;
  const auto q = oracles::random_gaussian(rng, d, 1);
  const GaussianTarget target(q);
  const BatchStats stats = collect_batch(q, target, b, rng);
  const ImplicitCov ic = match_step(q, stats, 1.0);
  const MatrixXd sigma_half = oracles::reconstruct(ic);
  CHECK((sigma_half - oracles::dense_cov(q)).cwiseAbs().maxCoeff() < 0.2);
}

TEST_CASE("dense fixed point for a standard normal target") {
  Rng rng(42);
  const Index d = 2, b = 64;
  const LowRankGaussian q(VectorXd::Zero(d), MatrixXd(d, 0), VectorXd::Ones(d));
  const GaussianTarget target(q);
  const BatchStats stats = collect_batch(q, target, b, rng);
  const DenseGaussian out =
      dense_bam_step({q.mu(), MatrixXd::Identity(d, d)}, stats, 1.0);
  CHECK((out.sigma - MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() < 0.5);
}

TEST_CASE("dense_bam_step with lambda = 0 is the identity") {
  Rng rng(43);
  const auto q = oracles::random_gaussian(rng, 3, 1);
  const BatchStats stats = oracles::random_stats(rng, 3, 2);
  const MatrixXd sigma_t = oracles::dense_cov(q);
  const DenseGaussian out = dense_bam_step({q.mu(), sigma_t}, stats, 0.0);
  CHECK((out.sigma - sigma_t).norm() < 1e-12 * sigma_t.norm());
  CHECK((out.mu - q.mu()).norm() < 1e-12);
}

TEST_CASE("mean_update") {
  Rng rng(44);
  const auto q = oracles::random_gaussian(rng, 3, 2);
  const auto next = oracles::random_gaussian(rng, 3, 2);

  SUBCASE("stationary when g_bar = 0 and z_bar = mu") {
    MatrixXd g(3, 2);
    g.col(0) = normal_vector(rng, 3);
    g.col(1) = -g.col(0);
    MatrixXd z(3, 2);
    z.col(0) = q.mu() + normal_vector(rng, 3);
    z.col(1) = 2.0 * q.mu() - z.col(0);
    const BatchStats stats = BatchStats::from_samples(z, g);
    const VectorXd mu =
        mean_update(q, stats, 0.8, next.lambda(), next.psi());
    CHECK((mu - q.mu()).norm() < 1e-12);
  }
  SUBCASE("large lambda limit") {
    const BatchStats stats = oracles::random_stats(rng, 3, 2);
    const VectorXd mu =
        mean_update(q, stats, 1e12, next.lambda(), next.psi());
    const VectorXd limit =
        oracles::dense_cov(next) * stats.g_bar + stats.z_bar;
    CHECK((mu - limit).norm() < 1e-6 * (1.0 + limit.norm()));
  }
  SUBCASE("matches the dense expression") {
    const BatchStats stats = oracles::random_stats(rng, 3, 2);
    const double lambda = 0.7;
    const VectorXd mu =
        mean_update(q, stats, lambda, next.lambda(), next.psi());
    const VectorXd expected =
        q.mu() / (1.0 + lambda) +
        (lambda / (1.0 + lambda)) *
            (oracles::dense_cov(next) * stats.g_bar + stats.z_bar);
    CHECK((mu - expected).norm() < 1e-12 * (1.0 + expected.norm()));
  }
}

TEST_CASE("match_step reports overflow as a numeric breakdown naming lambda") {
  Rng rng(45);
  const auto q = oracles::random_gaussian(rng, 3, 1);
  const MatrixXd z = normal_matrix(rng, 3, 2);
  const MatrixXd g = 1e200 * normal_matrix(rng, 3, 2);
  const BatchStats stats = BatchStats::from_samples(z, g);
  try {
    (void)match_step(q, stats, 2.0);
    FAIL("expected numeric_error");
  } catch (const numeric_error& e) {
    CHECK(std::string(e.what()).find("lambda_t") != std::string::npos);
  }
}

TEST_CASE("ImplicitCov factor products match the reconstruction") {
  Rng rng(46);
  const auto q = oracles::random_gaussian(rng, 5, 2);
  const BatchStats stats = oracles::random_stats(rng, 5, 3);
  const ImplicitCov ic = match_step(q, stats, 1.0);
  const MatrixXd sigma = oracles::reconstruct(ic);
  const MatrixXd x = normal_matrix(rng, 5, 4);
  CHECK((ic.times(x) - sigma * x).norm() < 1e-10 * (1.0 + sigma.norm()));
  CHECK((ic.diagonal() - sigma.diagonal()).norm() < 1e-10 * sigma.norm());
}
