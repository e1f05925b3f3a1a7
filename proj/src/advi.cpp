#include "pbam/advi.hpp"

#include <chrono>
#include <cmath>
#include <exception>
#include <sstream>

#include "pbam/errors.hpp"
#include "pbam/kernels.hpp"

namespace pbam {

void AdviConfig::validate() const {
  if (batch_size < 1) throw config_error("advi: batch_size must be >= 1");
  if (!(learning_rate0 > lr_min && lr_min > 0))
    throw config_error("advi: need learning_rate0 > lr_min > 0");
  if (iterations < 0) throw config_error("advi: iterations must be >= 0");
  if (family == Family::diagonal && rank != 0)
    throw config_error("advi: diagonal family has rank 0");
  if (family == Family::lowrank && rank < 1)
    throw config_error("advi: lowrank family needs rank >= 1");
}

double advi_learning_rate(const AdviConfig& cfg, long t) {
  const long last = cfg.iterations - 1;
  if (cfg.lr_schedule == AdviConfig::LrSchedule::constant || last <= 0)
    return cfg.learning_rate0;
  const double frac = static_cast<double>(t) / static_cast<double>(last);
  switch (cfg.lr_schedule) {
    case AdviConfig::LrSchedule::linear:
      return cfg.learning_rate0 + (cfg.lr_min - cfg.learning_rate0) * frac;
    case AdviConfig::LrSchedule::cosine:
      return cfg.lr_min + (cfg.learning_rate0 - cfg.lr_min) * 0.5 *
                              (1.0 + std::cos(3.14159265358979323846 * frac));
    default:
      return cfg.learning_rate0;
  }
}

ElboGradient elbo_gradient(const LowRankGaussian& q, const ScoreTarget& target,
                           Index batch, Rng& rng) {
  if (batch < 1) throw std::invalid_argument("elbo_gradient: batch must be >= 1");
  if (target.dim() != q.dim())
    throw std::invalid_argument("elbo_gradient: dimension mismatch");
  if (!target.has_log_density())
    throw std::invalid_argument(
        "elbo_gradient: target must expose a log-density for the ELBO");

  const Index d = q.dim();
  const Index k = q.rank();
  // Same reparameterization and draw order as sample().
  MatrixXd zeta(k, batch);
  MatrixXd eps(d, batch);
  for (Index b = 0; b < batch; ++b) {
    for (Index j = 0; j < k; ++j) zeta(j, b) = rng.normal();
    for (Index i = 0; i < d; ++i) eps(i, b) = rng.normal();
  }
  const VectorXd root_psi = q.psi().cwiseSqrt();
  MatrixXd z = kernels::scale_rows(root_psi, eps);
  if (k > 0) z += kernels::tall_times_small(q.lambda(), zeta);
  z.colwise() += q.mu();

  MatrixXd scores(d, batch);
  VectorXd logp(batch);
  std::exception_ptr fail;
  if (target.concurrency_safe() && batch > 1) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (Index b = 0; b < batch; ++b) {
      try {
        scores.col(b) = target.score(z.col(b));
        logp(b) = target.log_density(z.col(b));
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
        scores.col(b) = target.score(z.col(b));
        logp(b) = target.log_density(z.col(b));
      } catch (...) {
        fail = std::current_exception();
      }
    }
  }
  if (fail) std::rethrow_exception(fail);
  for (Index b = 0; b < batch; ++b) {
    const Index bad = (!scores.col(b).array().isFinite()).count();
    if (bad > 0 || !std::isfinite(logp(b))) {
      std::ostringstream msg;
      msg << "elbo_gradient: non-finite score/log-density at sample " << b
          << " (" << bad << " bad coordinates)";
      throw numeric_error(msg.str());
    }
  }

  const double inv_b = 1.0 / static_cast<double>(batch);
  ElboGradient out;
  out.grad_mu = -scores.rowwise().mean();
  // entropy gradients: d(1/2 log|Sigma|)/dLambda = Sigma^{-1} Lambda,
  //                    d(1/2 log|Sigma|)/dpsi    = diag(Sigma^{-1}) / 2
  const VectorXd prec_diag = precision_diagonal(q);
  if (k > 0) {
    out.grad_lambda = -(scores * zeta.transpose()) * inv_b;
    out.grad_lambda -= woodbury_solve(q, q.lambda());
  } else {
    out.grad_lambda.resize(d, 0);
  }
  const VectorXd grad_sqrt_psi =
      -kernels::hadamard_rowsum(scores, eps) * inv_b -
      root_psi.cwiseProduct(prec_diag);
  out.grad_psi = grad_sqrt_psi.array() / (2.0 * root_psi.array());
  out.neg_elbo = -logp.mean() - entropy(q);
  return out;
}

AdviResult adam_fit(const ScoreTarget& target, const AdviConfig& cfg,
                    LowRankGaussian init, Rng& rng,
                    const AdviCallback& on_iteration) {
  cfg.validate();
  if ((cfg.family == AdviConfig::Family::diagonal && init.rank() != 0) ||
      (cfg.family == AdviConfig::Family::lowrank && init.rank() != cfg.rank))
    throw config_error("adam_fit: init family does not match configuration");

  const Index d = init.dim();
  const Index k = init.rank();
  const Index n_params = d + d * k + d;

  // theta = [mu; vec(Lambda); log sqrt(psi)]
  VectorXd theta(n_params);
  theta.head(d) = init.mu();
  if (k > 0)
    theta.segment(d, d * k) =
        Eigen::Map<const VectorXd>(init.lambda().data(), d * k);
  theta.tail(d) = 0.5 * init.psi().array().log();

  VectorXd m = VectorXd::Zero(n_params);
  VectorXd v = VectorXd::Zero(n_params);

  AdviResult res{std::move(init), {}};
  const auto t0 = std::chrono::steady_clock::now();

  for (long t = 0; t < cfg.iterations; ++t) {
    const ElboGradient g =
        elbo_gradient(res.q, target, cfg.batch_size, rng);

    VectorXd grad(n_params);
    grad.head(d) = g.grad_mu;
    if (k > 0)
      grad.segment(d, d * k) =
          Eigen::Map<const VectorXd>(g.grad_lambda.data(), d * k);
    // d/d(log s) = 2 psi * d/d(psi)
    grad.tail(d) = 2.0 * res.q.psi().cwiseProduct(g.grad_psi);

    m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * grad;
    v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * grad.cwiseAbs2();
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t + 1));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t + 1));
    const double lr = advi_learning_rate(cfg, t);
    theta.array() -= lr * (m.array() / bc1) /
                     ((v.array() / bc2).sqrt() + cfg.adam_eps);

    const auto elapsed = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - t0)
                             .count();
    res.trace.records.push_back({t + 1, (t + 1) * cfg.batch_size,
                                 "neg_elbo_batch", g.neg_elbo, 0, elapsed});

    if (!theta.array().isFinite().all()) {
      res.trace.diverged = true;
      break;
    }
    VectorXd mu = theta.head(d);
    MatrixXd lambda(d, k);
    if (k > 0)
      lambda = Eigen::Map<const MatrixXd>(theta.segment(d, d * k).data(), d, k);
    VectorXd psi = (2.0 * theta.tail(d).array()).exp();
    if (!(psi.array() >= LowRankGaussian::psi_floor).all()) {
      res.trace.diverged = true;  // scale collapsed below the representable floor
      break;
    }
    res.q = LowRankGaussian(std::move(mu), std::move(lambda), std::move(psi));
    if (on_iteration) on_iteration(t + 1, res.q);
  }
  return res;
}

}  // namespace pbam
