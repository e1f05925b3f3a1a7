#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "oracles.hpp"
#include "pbam/errors.hpp"
#include "pbam/lowrank_gaussian.hpp"

using namespace pbam;

namespace {

LowRankGaussian standard_normal(Index d) {
  return LowRankGaussian(VectorXd::Zero(d), MatrixXd(d, 0), VectorXd::Ones(d));
}

}  // namespace

TEST_CASE("construction enforces the invariants") {
  CHECK_THROWS_AS(LowRankGaussian(VectorXd::Zero(2), MatrixXd::Zero(2, 3),
                                  VectorXd::Ones(2)),
                  std::invalid_argument);  // K > D
  VectorXd bad_psi = VectorXd::Ones(2);
  bad_psi(1) = 1e-12;  // below the floor
  CHECK_THROWS_AS(LowRankGaussian(VectorXd::Zero(2), MatrixXd(2, 0), bad_psi),
                  std::invalid_argument);
  CHECK_THROWS_AS(LowRankGaussian(VectorXd::Zero(2), MatrixXd::Zero(3, 1),
                                  VectorXd::Ones(2)),
                  std::invalid_argument);  // row mismatch
}

TEST_CASE("identity-covariance samples are standard normal") {
  Rng rng(1);
  const auto q = standard_normal(4);
  const MatrixXd z = sample(q, 200000, rng);
  CHECK(z.colwise().mean().cwiseAbs().maxCoeff() < 0.02);
  const MatrixXd centered = z.rowwise() - z.colwise().mean();
  const MatrixXd cov = centered.transpose() * centered / double(z.rows());
  CHECK((cov - MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("rank-one factor sample covariance matches ones + I") {
  Rng rng(2);
  const LowRankGaussian q(VectorXd::Zero(3), MatrixXd::Ones(3, 1),
                          VectorXd::Ones(3));
  const Index n = 1000000;
  const MatrixXd z = sample(q, n, rng);
  const MatrixXd centered = z.rowwise() - z.colwise().mean();
  const MatrixXd cov = centered.transpose() * centered / double(n);
  const MatrixXd expected = MatrixXd::Ones(3, 3) + MatrixXd::Identity(3, 3);
  CHECK((cov - expected).cwiseAbs().maxCoeff() < 3e-2);
}

TEST_CASE("column-permuted factors give the same distribution") {
  Rng rng(3);
  const Index d = 3, n = 200000;
  const MatrixXd lambda = normal_matrix(rng, d, 2);
  MatrixXd perm(d, 2);
  perm.col(0) = lambda.col(1);
  perm.col(1) = lambda.col(0);
  const LowRankGaussian qa(VectorXd::Zero(d), lambda, VectorXd::Ones(d));
  const LowRankGaussian qb(VectorXd::Zero(d), perm, VectorXd::Ones(d));
  Rng ra(10), rb(11);
  const MatrixXd za = sample(qa, n, ra);
  const MatrixXd zb = sample(qb, n, rb);
  CHECK((za.colwise().mean() - zb.colwise().mean()).cwiseAbs().maxCoeff() < 0.05);
  const MatrixXd ca = za.transpose() * za / double(n);
  const MatrixXd cb = zb.transpose() * zb / double(n);
  CHECK((ca - cb).cwiseAbs().maxCoeff() < 0.1);
  // the represented covariance is exactly permutation invariant
  CHECK(logdet(qa) == doctest::Approx(logdet(qb)).epsilon(1e-12));
}

TEST_CASE("empirical covariance within five standard errors") {
  Rng seed_rng(21);
  const auto q = oracles::random_gaussian(seed_rng, 6, 2);
  const MatrixXd sigma = oracles::dense_cov(q);
  Rng rng(22);
  const Index n = 1000000;
  const MatrixXd z = sample(q, n, rng);
  const MatrixXd centered = z.rowwise() - z.colwise().mean();
  const MatrixXd cov = centered.transpose() * centered / double(n);
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 6; ++j) {
      const double se = std::sqrt(
          (sigma(i, i) * sigma(j, j) + sigma(i, j) * sigma(i, j)) / double(n));
      CHECK(std::abs(cov(i, j) - sigma(i, j)) < 5.0 * se);
    }
}

TEST_CASE("woodbury_solve") {
  SUBCASE("diagonal case divides by psi") {
    Rng rng(4);
    VectorXd psi = uniform_vector(rng, 5).array() + 0.5;
    const LowRankGaussian q(VectorXd::Zero(5), MatrixXd(5, 0), psi);
    const MatrixXd y = normal_matrix(rng, 5, 3);
    const MatrixXd x = woodbury_solve(q, y);
    CHECK((x - MatrixXd(psi.cwiseInverse().asDiagonal()) * y).norm() < 1e-14);
  }
  SUBCASE("matches the dense inverse") {
    Rng rng(5);
    const auto q = oracles::random_gaussian(rng, 4, 2);
    const MatrixXd y = normal_matrix(rng, 4, 3);
    const MatrixXd expected = oracles::dense_cov(q).inverse() * y;
    CHECK((woodbury_solve(q, y) - expected).norm() / expected.norm() < 1e-10);
  }
  SUBCASE("round-trips a forward multiply") {
    Rng rng(6);
    const auto q = oracles::random_gaussian(rng, 7, 3);
    const MatrixXd x = normal_matrix(rng, 7, 2);
    MatrixXd y = MatrixXd(q.psi().asDiagonal()) * x;
    y += q.lambda() * (q.lambda().transpose() * x);
    CHECK((woodbury_solve(q, y) - x).norm() / x.norm() < 1e-8);
  }
  SUBCASE("rejects wrong row count") {
    const auto q = standard_normal(3);
    CHECK_THROWS_AS((void)woodbury_solve(q, MatrixXd::Zero(4, 1)),
                    std::invalid_argument);
  }
}

TEST_CASE("forward multiply of solve output reproduces the input") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Index d = 2 + static_cast<Index>(rng.uniform() * 10);
    const Index k = static_cast<Index>(rng.uniform() * std::min<Index>(d, 4));
    const auto q = oracles::random_gaussian(rng, d, k);
    const MatrixXd y = normal_matrix(rng, d, 3);
    const MatrixXd x = woodbury_solve(q, y);
    MatrixXd back = MatrixXd(q.psi().asDiagonal()) * x;
    if (k > 0) back += q.lambda() * (q.lambda().transpose() * x);
    CHECK((back - y).norm() / y.norm() < 1e-8);
  }
}

TEST_CASE("logdet") {
  CHECK(logdet(standard_normal(5)) == doctest::Approx(0.0).epsilon(1e-14));

  Rng rng(8);
  const auto q = oracles::random_gaussian(rng, 5, 2);
  CHECK(logdet(q) ==
        doctest::Approx(oracles::dense_logdet(oracles::dense_cov(q)))
            .epsilon(1e-10));

  // scaling psi -> c psi and lambda -> sqrt(c) lambda adds D log c
  const double c = 3.7;
  const LowRankGaussian qs(q.mu(), std::sqrt(c) * q.lambda(),
                           (c * q.psi().array()).matrix());
  CHECK(logdet(qs) ==
        doctest::Approx(logdet(q) + 5.0 * std::log(c)).epsilon(1e-10));
}

TEST_CASE("logpdf") {
  const auto q2 = standard_normal(2);
  CHECK(logpdf(q2, VectorXd::Zero(2)) ==
        doctest::Approx(-std::log(2.0 * M_PI)).epsilon(1e-14));

  Rng rng(9);
  const auto q = oracles::random_gaussian(rng, 4, 1);
  const VectorXd z = normal_vector(rng, 4);
  CHECK(logpdf(q, z) ==
        doctest::Approx(oracles::dense_logpdf(q.mu(), oracles::dense_cov(q), z))
            .epsilon(1e-9));

  // mode value
  CHECK(logpdf(q, q.mu()) ==
        doctest::Approx(-0.5 * (4.0 * std::log(2.0 * M_PI) + logdet(q)))
            .epsilon(1e-12));
}

TEST_CASE("logdet and logpdf match dense computations over random instances") {
  Rng rng(10);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index d = 1 + static_cast<Index>(rng.uniform() * 16);
    const Index k = static_cast<Index>(rng.uniform() * (d + 1));
    const auto q = oracles::random_gaussian(rng, d, k);
    const MatrixXd sigma = oracles::dense_cov(q);
    const VectorXd z = normal_vector(rng, d);
    CHECK(std::abs(logdet(q) - oracles::dense_logdet(sigma)) <
          1e-8 * (1.0 + std::abs(logdet(q))));
    CHECK(std::abs(logpdf(q, z) - oracles::dense_logpdf(q.mu(), sigma, z)) <
          1e-8 * (1.0 + std::abs(logpdf(q, z))));
  }
}

TEST_CASE("gauss_kl") {
  Rng rng(12);
  const auto qa = oracles::random_gaussian(rng, 3, 2);
  SUBCASE("zero on itself") { CHECK(std::abs(gauss_kl(qa, qa)) < 1e-10); }
  SUBCASE("matches the dense formula") {
    const auto qb = oracles::random_gaussian(rng, 3, 1);
    const double expected =
        oracles::dense_kl(qa.mu(), oracles::dense_cov(qa), qb.mu(),
                          oracles::dense_cov(qb));
    CHECK(gauss_kl(qa, qb) == doctest::Approx(expected).epsilon(1e-9));
  }
  SUBCASE("unit mean shift costs one half") {
    VectorXd e1 = VectorXd::Zero(3);
    e1(0) = 1.0;
    const LowRankGaussian shifted(e1, MatrixXd(3, 0), VectorXd::Ones(3));
    CHECK(gauss_kl(shifted, standard_normal(3)) ==
          doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS((void)gauss_kl(qa, standard_normal(4)),
                    std::invalid_argument);
  }
}

TEST_CASE("gauss_kl is nonnegative and zero only on equal Gaussians") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const Index d = 2 + static_cast<Index>(rng.uniform() * 6);
    const Index ka = static_cast<Index>(rng.uniform() * 3);
    const Index kb = static_cast<Index>(rng.uniform() * 3);
    const auto qa = oracles::random_gaussian(rng, d, ka);
    const auto qb = oracles::random_gaussian(rng, d, kb);
    const double kl = gauss_kl(qa, qb);
    CHECK(kl >= -1e-8);
    CHECK(kl > 1e-6);  // random pairs differ
  }
  // a rotated factor represents the same Gaussian
  Rng rng2(14);
  const auto q = oracles::random_gaussian(rng2, 5, 2);
  Eigen::JacobiSVD<MatrixXd> svd(normal_matrix(rng2, 2, 2),
                                 Eigen::ComputeFullU | Eigen::ComputeFullV);
  const MatrixXd rot = svd.matrixU() * svd.matrixV().transpose();
  const LowRankGaussian q_rot(q.mu(), q.lambda() * rot, q.psi());
  CHECK(std::abs(gauss_kl(q, q_rot)) < 1e-10);
}

TEST_CASE("entropy") {
  CHECK(entropy(standard_normal(1)) ==
        doctest::Approx(0.5 * std::log(2.0 * M_PI * std::exp(1.0)))
            .epsilon(1e-14));
  Rng rng(15);
  const auto q = oracles::random_gaussian(rng, 4, 2);
  CHECK(entropy(q) ==
        doctest::Approx(oracles::dense_entropy(oracles::dense_cov(q)))
            .epsilon(1e-10));
  const auto qd = oracles::random_gaussian(rng, 3, 0);
  const double expected =
      0.5 * (2.0 * M_PI * std::exp(1.0) * qd.psi().array()).log().sum();
  CHECK(entropy(qd) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("serialization round-trips bit-exactly") {
  Rng rng(16);
  const auto q = oracles::random_gaussian(rng, 6, 3);
  const std::string path =
      (std::filesystem::temp_directory_path() / "pbam_lrg_roundtrip.bin").string();
  save(q, path);
  const LowRankGaussian r = load(path);
  CHECK(r.dim() == q.dim());
  CHECK(r.rank() == q.rank());
  CHECK(r.mu() == q.mu());
  CHECK(r.lambda() == q.lambda());
  CHECK(r.psi() == q.psi());
  std::filesystem::remove(path);

  CHECK_THROWS_AS((void)load("/nonexistent/params.bin"), config_error);
}
