#include "pbam/bam.hpp"

#include <cmath>
#include <exception>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "pbam/errors.hpp"
#include "pbam/kernels.hpp"

namespace pbam {

double ScoreTarget::log_density(const Eigen::Ref<const VectorXd>&) const {
  throw std::logic_error("target does not expose a log-density");
}

BatchStats BatchStats::from_samples(const Eigen::Ref<const MatrixXd>& z_cols,
                                    const Eigen::Ref<const MatrixXd>& g_cols) {
  if (z_cols.rows() != g_cols.rows() || z_cols.cols() != g_cols.cols())
    throw std::invalid_argument("BatchStats: sample/score shape mismatch");
  if (z_cols.cols() < 1)
    throw std::invalid_argument("BatchStats: batch size must be >= 1");
  BatchStats s;
  s.batch_size = z_cols.cols();
  s.z_bar = z_cols.rowwise().mean();
  s.g_bar = g_cols.rowwise().mean();
  s.z_centered = z_cols.colwise() - s.z_bar;
  s.g_centered = g_cols.colwise() - s.g_bar;
  return s;
}

LearningSchedule LearningSchedule::parse(double lambda0,
                                         const std::string& rule_id) {
  if (!(lambda0 > 0)) throw config_error("schedule: lambda0 must be positive");
  LearningSchedule s;
  s.lambda0 = lambda0;
  if (rule_id == "one_over_t") {
    s.rule = Rule::one_over_t;
  } else if (rule_id == "constant") {
    s.rule = Rule::constant;
  } else {
    throw config_error("schedule: unknown rule '" + rule_id + "'");
  }
  return s;
}

double schedule_value(const LearningSchedule& s, long t) {
  if (t < 0) throw std::invalid_argument("schedule_value: t must be >= 0");
  switch (s.rule) {
    case LearningSchedule::Rule::one_over_t:
      return s.lambda0 / (1.0 + static_cast<double>(t));
    case LearningSchedule::Rule::constant:
      return s.lambda0;
  }
  throw std::logic_error("schedule_value: unreachable");
}

BatchStats collect_batch(const LowRankGaussian& q, const ScoreTarget& target,
                         Index batch, Rng& rng) {
  if (batch < 1) throw std::invalid_argument("collect_batch: batch must be >= 1");
  if (target.dim() != q.dim())
    throw std::invalid_argument("collect_batch: target/approximation dimension mismatch");
  const Index d = q.dim();
  const MatrixXd z_cols = sample(q, batch, rng).transpose();
  MatrixXd g_cols(d, batch);

  std::exception_ptr fail;
  if (target.concurrency_safe() && batch > 1) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (Index b = 0; b < batch; ++b) {
      try {
        g_cols.col(b) = target.score(z_cols.col(b));
      } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
        if (!fail) fail = std::current_exception();
      }
    }
  } else {
    for (Index b = 0; b < batch && !fail; ++b) {
      try {
        g_cols.col(b) = target.score(z_cols.col(b));
      } catch (...) {
        fail = std::current_exception();
      }
    }
  }
  if (fail) std::rethrow_exception(fail);

  for (Index b = 0; b < batch; ++b) {
    const Index bad = (!g_cols.col(b).array().isFinite()).count();
    if (bad > 0) {
      std::ostringstream msg;
      msg << "collect_batch: non-finite score at sample " << b << " (" << bad
          << " of " << d << " coordinates)";
      throw numeric_error(msg.str());
    }
  }
  return BatchStats::from_samples(z_cols, g_cols);
}

MatrixXd build_q_factor(const BatchStats& stats, double lambda_t) {
  if (!(lambda_t > 0))
    throw std::invalid_argument("build_q_factor: lambda_t must be positive");
  const Index b = stats.batch_size;
  MatrixXd q(stats.g_bar.size(), b + 1);
  q.leftCols(b) = std::sqrt(lambda_t / static_cast<double>(b)) * stats.g_centered;
  q.col(b) = std::sqrt(lambda_t / (1.0 + lambda_t)) * stats.g_bar;
  return q;
}

MatrixXd build_r_factor(const BatchStats& stats, const LowRankGaussian& q,
                        double lambda_t) {
  if (!(lambda_t > 0))
    throw std::invalid_argument("build_r_factor: lambda_t must be positive");
  const Index b = stats.batch_size;
  const Index k = q.rank();
  MatrixXd r(q.dim(), b + 1 + k);
  r.leftCols(b) = std::sqrt(lambda_t / static_cast<double>(b)) * stats.z_centered;
  r.col(b) = std::sqrt(lambda_t / (1.0 + lambda_t)) * (q.mu() - stats.z_bar);
  if (k > 0) r.rightCols(k) = q.lambda();
  return r;
}

namespace {

// M = [I/2 + (sym(core) + I/4)^{1/2}]^{-2} via symmetric eigendecomposition.
// core is Q^T V Q (or H^T Q), PSD up to roundoff: mildly negative eigenvalues
// are clamped to zero, anything below -1e-6 * norm is a breakdown.
MatrixXd shrink_core_inverse(const MatrixXd& core, double lambda_t) {
  MatrixXd a = 0.5 * (core + core.transpose());
  a.diagonal().array() += 0.25;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(a);
  if (es.info() != Eigen::Success || !es.eigenvalues().allFinite()) {
    std::ostringstream msg;
    msg << "match_step: eigendecomposition of the core matrix failed at "
           "lambda_t = "
        << lambda_t;
    throw numeric_error(msg.str());
  }
  const VectorXd& ev = es.eigenvalues();
  const double norm = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  const double most_negative = ev.minCoeff();
  if (most_negative < -1e-6 * norm) {
    std::ostringstream msg;
    msg << "match_step: core matrix not PSD (min eigenvalue " << most_negative
        << ", norm " << norm << ") at lambda_t = " << lambda_t;
    throw numeric_error(msg.str());
  }
  const VectorXd scaled =
      ev.cwiseMax(0.0).cwiseSqrt().unaryExpr([](double s) {
        const double t = 0.5 + s;
        return 1.0 / (t * t);
      });
  return es.eigenvectors() * scaled.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

MatrixXd ImplicitCov::times(const Eigen::Ref<const MatrixXd>& x) const {
  if (x.rows() != dim())
    throw std::invalid_argument("ImplicitCov::times: row count must equal D");
  MatrixXd out = kernels::scale_rows(psi_t, x);
  if (r.cols() > 0) out += kernels::tall_times_small(r, kernels::gram(r, x));
  if (h.cols() > 0)
    out -= kernels::tall_times_small(h, m * kernels::gram(h, x));
  return out;
}

VectorXd ImplicitCov::diagonal() const {
  VectorXd d = psi_t;
  if (r.cols() > 0) d += kernels::rowwise_sqnorm(r);
  if (h.cols() > 0)
    d -= kernels::hadamard_rowsum(kernels::tall_times_small(h, m), h);
  return d;
}

double logdet(const ImplicitCov& cov) {
  if (!(cov.psi_t.array() > 0.0).all())
    throw std::invalid_argument("logdet(ImplicitCov): psi_t must be positive");
  double value = cov.psi_t.array().log().sum();
  const VectorXd psi_inv = cov.psi_t.cwiseInverse();

  Eigen::LLT<MatrixXd> v_inner_llt;  // of I + R^T Psi^{-1} R
  if (cov.r.cols() > 0) {
    MatrixXd inner = kernels::gram(cov.r, kernels::scale_rows(psi_inv, cov.r));
    inner = 0.5 * (inner + inner.transpose()).eval();
    inner.diagonal().array() += 1.0;
    v_inner_llt.compute(inner);
    if (v_inner_llt.info() != Eigen::Success)
      throw numeric_error("logdet(ImplicitCov): V factorization failed");
    value += 2.0 * v_inner_llt.matrixLLT().diagonal().array().log().sum();
  }
  if (cov.h.cols() == 0) return value;

  // V^{-1} H via the Woodbury identity on V = Psi + R R^T
  MatrixXd vih = kernels::scale_rows(psi_inv, cov.h);
  if (cov.r.cols() > 0) {
    const MatrixXd t = kernels::gram(cov.r, vih);
    vih -= kernels::scale_rows(psi_inv,
                               kernels::tall_times_small(cov.r, v_inner_llt.solve(t)));
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> m_eig(cov.m);
  if (m_eig.info() != Eigen::Success)
    throw numeric_error("logdet(ImplicitCov): eigendecomposition of M failed");
  const MatrixXd m_sqrt = m_eig.eigenvectors() *
                          m_eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                          m_eig.eigenvectors().transpose();
  MatrixXd core = m_sqrt * kernels::gram(cov.h, vih) * m_sqrt;
  core = (-0.5 * (core + core.transpose())).eval();
  core.diagonal().array() += 1.0;
  Eigen::LLT<MatrixXd> core_llt(core);
  if (core_llt.info() != Eigen::Success)
    throw numeric_error(
        "logdet(ImplicitCov): represented covariance is not positive definite");
  return value + 2.0 * core_llt.matrixLLT().diagonal().array().log().sum();
}

ImplicitCov match_step(const LowRankGaussian& q, const BatchStats& stats,
                       double lambda_t) {
  if (stats.z_bar.size() != q.dim())
    throw std::invalid_argument("match_step: stats/approximation dimension mismatch");
  const MatrixXd qf = build_q_factor(stats, lambda_t);
  const MatrixXd rf = build_r_factor(stats, q, lambda_t);

  // H = (Psi_t + R R^T) Q = psi .* Q + R (R^T Q)
  MatrixXd h = kernels::scale_rows(q.psi(), qf);
  h += kernels::tall_times_small(rf, kernels::gram(rf, qf));

  const MatrixXd core = kernels::gram(h, qf);  // H^T Q = Q^T V Q
  MatrixXd m = shrink_core_inverse(core, lambda_t);
  return ImplicitCov{q.psi(), rf, std::move(h), std::move(m)};
}

VectorXd mean_update(const LowRankGaussian& q, const BatchStats& stats,
                     double lambda_t, const MatrixXd& lambda_next,
                     const VectorXd& psi_next) {
  if (!(lambda_t > 0))
    throw std::invalid_argument("mean_update: lambda_t must be positive");
  VectorXd sg = psi_next.cwiseProduct(stats.g_bar);
  if (lambda_next.cols() > 0)
    sg.noalias() += lambda_next * (lambda_next.transpose() * stats.g_bar);
  const double w = lambda_t / (1.0 + lambda_t);
  return q.mu() / (1.0 + lambda_t) + w * (sg + stats.z_bar);
}

DenseGaussian dense_bam_step(const DenseGaussian& g, const BatchStats& stats,
                             double lambda_t) {
  if (!(lambda_t >= 0))
    throw std::invalid_argument("dense_bam_step: lambda_t must be >= 0");
  const Index d = g.mu.size();
  const Index b = stats.batch_size;
  const double bd = static_cast<double>(b);
  const double w = lambda_t / (1.0 + lambda_t);

  const VectorXd dm = g.mu - stats.z_bar;
  MatrixXd v = g.sigma;
  v.noalias() += (lambda_t / bd) * (stats.z_centered * stats.z_centered.transpose());
  v.noalias() += w * (dm * dm.transpose());

  MatrixXd qf(d, b + 1);
  qf.leftCols(b) = std::sqrt(lambda_t / bd) * stats.g_centered;
  qf.col(b) = std::sqrt(w) * stats.g_bar;

  const MatrixXd vq = v * qf;
  const MatrixXd m = shrink_core_inverse(qf.transpose() * vq, lambda_t);
  MatrixXd sigma = v - vq * m * vq.transpose();
  sigma = 0.5 * (sigma + sigma.transpose()).eval();

  DenseGaussian out;
  out.sigma = std::move(sigma);
  out.mu = g.mu / (1.0 + lambda_t) + w * (out.sigma * stats.g_bar + stats.z_bar);
  return out;
}

}  // namespace pbam
