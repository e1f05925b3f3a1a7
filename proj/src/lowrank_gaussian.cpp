#include "pbam/lowrank_gaussian.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "pbam/errors.hpp"
#include "pbam/kernels.hpp"

namespace pbam {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
constexpr char kMagic[8] = {'P', 'B', 'A', 'M', 'G', 'L', 'R', 'D'};
}  // namespace

LowRankGaussian::LowRankGaussian(VectorXd mu, MatrixXd lambda, VectorXd psi)
    : mu_(std::move(mu)), lambda_(std::move(lambda)), psi_(std::move(psi)) {
  const Index d = mu_.size();
  if (lambda_.rows() != d || psi_.size() != d)
    throw std::invalid_argument("LowRankGaussian: inconsistent dimensions");
  if (lambda_.cols() > d)
    throw std::invalid_argument("LowRankGaussian: rank K exceeds dimension D");
  if (!(psi_.array() >= psi_floor).all())
    throw std::invalid_argument(
        "LowRankGaussian: psi entries must be >= 1e-10 (clamping is the "
        "caller's responsibility)");

  psi_inv_ = psi_.cwiseInverse();
  logdet_ = psi_.array().log().sum();
  const Index k = lambda_.cols();
  if (k > 0) {
    w_ = kernels::scale_rows(psi_inv_, lambda_);
    MatrixXd s = kernels::gram(lambda_, w_);
    s.diagonal().array() += 1.0;
    llt_.compute(s);
    llt_ok_ = (llt_.info() == Eigen::Success);
    if (llt_ok_)
      logdet_ += 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  } else {
    w_.resize(d, 0);
  }
}

const Eigen::LLT<MatrixXd>& LowRankGaussian::capacitance_llt() const {
  if (!llt_ok_)
    throw numeric_error(
        "LowRankGaussian: Cholesky of I + Lambda^T Psi^{-1} Lambda failed "
        "(min psi = " +
        std::to_string(psi_.minCoeff()) +
        ", max |Lambda| = " + std::to_string(lambda_.cwiseAbs().maxCoeff()) +
        ")");
  return llt_;
}

VectorXd LowRankGaussian::marginal_variances() const {
  if (rank() == 0) return psi_;
  return psi_ + kernels::rowwise_sqnorm(lambda_);
}

MatrixXd sample(const LowRankGaussian& q, Index n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
  const Index d = q.dim();
  const Index k = q.rank();
  MatrixXd zeta(k, n);
  MatrixXd eps(d, n);
  for (Index b = 0; b < n; ++b) {
    for (Index j = 0; j < k; ++j) zeta(j, b) = rng.normal();
    for (Index i = 0; i < d; ++i) eps(i, b) = rng.normal();
  }
  MatrixXd zt = kernels::scale_rows(q.psi().cwiseSqrt(), eps);
  if (k > 0) zt += kernels::tall_times_small(q.lambda(), zeta);
  zt.colwise() += q.mu();
  return zt.transpose();
}

MatrixXd woodbury_solve(const LowRankGaussian& q,
                        const Eigen::Ref<const MatrixXd>& y) {
  if (y.rows() != q.dim())
    throw std::invalid_argument("woodbury_solve: row count must equal D");
  MatrixXd y0 = kernels::scale_rows(q.psi_inv(), y);
  if (q.rank() == 0) return y0;
  const MatrixXd t = kernels::gram(q.lambda(), y0);
  const MatrixXd u = q.capacitance_llt().solve(t);
  y0 -= kernels::tall_times_small(q.psi_inv_lambda(), u);
  return y0;
}

VectorXd precision_diagonal(const LowRankGaussian& q) {
  if (q.rank() == 0) return q.psi_inv();
  const Index k = q.rank();
  const MatrixXd s_inv = q.capacitance_llt().solve(MatrixXd::Identity(k, k));
  const MatrixXd ws = kernels::tall_times_small(q.psi_inv_lambda(), s_inv);
  return q.psi_inv() - kernels::hadamard_rowsum(ws, q.psi_inv_lambda());
}

double logdet(const LowRankGaussian& q) {
  if (q.rank() > 0) q.capacitance_llt();  // surfaces factorization failure
  return q.logdet_;
}

double logpdf(const LowRankGaussian& q, const Eigen::Ref<const VectorXd>& z) {
  if (z.size() != q.dim())
    throw std::invalid_argument("logpdf: dimension mismatch");
  const VectorXd delta = z - q.mu();
  const VectorXd solved = woodbury_solve(q, delta);
  const double quad = delta.dot(solved);
  return -0.5 * (q.dim() * kLog2Pi + logdet(q) + quad);
}

double gauss_kl(const LowRankGaussian& qa, const LowRankGaussian& qb) {
  if (qa.dim() != qb.dim())
    throw std::invalid_argument("gauss_kl: dimension mismatch");
  const Index d = qa.dim();
  // tr(Sigma_b^{-1} Sigma_a) = tr(Sigma_b^{-1} Psi_a)
  //                          + tr(Lambda_a^T Sigma_b^{-1} Lambda_a)
  double trace = precision_diagonal(qb).dot(qa.psi());
  if (qa.rank() > 0) {
    const MatrixXd solved = woodbury_solve(qb, qa.lambda());
    trace += kernels::hadamard_rowsum(qa.lambda(), solved).sum();
  }
  const VectorXd dmu = qa.mu() - qb.mu();
  const VectorXd solved = woodbury_solve(qb, dmu);
  const double quad = dmu.dot(solved);
  return 0.5 * (logdet(qb) - logdet(qa) - static_cast<double>(d) + trace + quad);
}

double entropy(const LowRankGaussian& q) {
  return 0.5 * (q.dim() * (kLog2Pi + 1.0) + logdet(q));
}

namespace {

void write_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf, 8);
}

void write_f64(std::ostream& os, double x) {
  write_u64(os, std::bit_cast<std::uint64_t>(x));
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& is) {
  return std::bit_cast<double>(read_u64(is));
}

}  // namespace

void save(const LowRankGaussian& q, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw config_error("cannot open for writing: " + path);
  os.write(kMagic, 8);
  write_u64(os, static_cast<std::uint64_t>(q.dim()));
  write_u64(os, static_cast<std::uint64_t>(q.rank()));
  for (Index i = 0; i < q.dim(); ++i) write_f64(os, q.mu()(i));
  for (Index j = 0; j < q.rank(); ++j)
    for (Index i = 0; i < q.dim(); ++i) write_f64(os, q.lambda()(i, j));
  for (Index i = 0; i < q.dim(); ++i) write_f64(os, q.psi()(i));
  if (!os) throw config_error("write failed: " + path);
}

LowRankGaussian load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw config_error("cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || !std::equal(magic, magic + 8, kMagic))
    throw config_error("not a PBAMGLRD parameter file: " + path);
  const auto d = static_cast<Index>(read_u64(is));
  const auto k = static_cast<Index>(read_u64(is));
  if (!is || d < 0 || k < 0 || k > d)
    throw config_error("corrupt header in: " + path);
  VectorXd mu(d), psi(d);
  MatrixXd lambda(d, k);
  for (Index i = 0; i < d; ++i) mu(i) = read_f64(is);
  for (Index j = 0; j < k; ++j)
    for (Index i = 0; i < d; ++i) lambda(i, j) = read_f64(is);
  for (Index i = 0; i < d; ++i) psi(i) = read_f64(is);
  if (!is) throw config_error("truncated parameter file: " + path);
  return LowRankGaussian(std::move(mu), std::move(lambda), std::move(psi));
}

}  // namespace pbam
