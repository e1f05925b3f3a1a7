#include "pbam/targets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pbam/errors.hpp"

namespace pbam {

VectorXd GaussianTarget::score(const Eigen::Ref<const VectorXd>& z) const {
  return -woodbury_solve(q_, z - q_.mu());
}

double GaussianTarget::log_density(const Eigen::Ref<const VectorXd>& z) const {
  return logpdf(q_, z);
}

GaussianTarget synthetic_gaussian(Index dim, Index rank, Rng& rng) {
  if (rank > dim)
    throw std::invalid_argument("synthetic_gaussian: rank exceeds dimension");
  VectorXd mu = normal_vector(rng, dim);
  VectorXd psi = uniform_vector(rng, dim).cwiseMax(1e-6);
  MatrixXd lambda = normal_matrix(rng, dim, rank);
  return GaussianTarget(
      LowRankGaussian(std::move(mu), std::move(lambda), std::move(psi)));
}

namespace {

MatrixXd rbf_kernel(const VectorXd& grid, double length_scale) {
  if (!(length_scale > 0))
    throw config_error("gp target: length_scale must be positive");
  const Index n = grid.size();
  MatrixXd k(n, n);
  const double inv2l2 = 1.0 / (2.0 * length_scale * length_scale);
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i <= j; ++i) {
      const double d = grid(i) - grid(j);
      k(i, j) = std::exp(-d * d * inv2l2);
      k(j, i) = k(i, j);
    }
  }
  return k;
}

Eigen::LLT<MatrixXd> factor_kernel(MatrixXd k) {
  double jitter = 1e-6 * k.diagonal().mean();
  for (int attempt = 0; attempt <= 3; ++attempt) {
    MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    Eigen::LLT<MatrixXd> llt(kj);
    if (llt.info() == Eigen::Success) return llt;
    jitter *= 10.0;
  }
  throw config_error(
      "gp target: kernel matrix is not factorizable even after jitter "
      "escalation");
}

}  // namespace

GpPoissonTarget::GpPoissonTarget(VectorXd grid, double length_scale,
                                 VectorXd counts, double prior_mean,
                                 double lik_offset)
    : GpPoissonTarget(rbf_kernel(grid, length_scale), std::move(counts),
                      prior_mean, lik_offset) {}

GpPoissonTarget::GpPoissonTarget(MatrixXd kernel, VectorXd counts,
                                 double prior_mean, double lik_offset)
    : counts_(std::move(counts)),
      prior_mean_(prior_mean),
      lik_offset_(lik_offset) {
  if (kernel.rows() != counts_.size() || kernel.cols() != counts_.size())
    throw config_error("gp target: kernel and counts must have equal length");
  if (counts_.size() < 1) throw config_error("gp target: empty grid");
  if ((counts_.array() < 0).any())
    throw config_error("gp target: counts must be nonnegative");
  chol_ = factor_kernel(std::move(kernel));
}

VectorXd GpPoissonTarget::score(const Eigen::Ref<const VectorXd>& f) const {
  const VectorXd rate = (f.array() + lik_offset_).exp();
  const VectorXd centered = f.array() - prior_mean_;
  return counts_ - rate - chol_.solve(centered);
}

double GpPoissonTarget::log_density(const Eigen::Ref<const VectorXd>& f) const {
  const Eigen::ArrayXd shifted = f.array() + lik_offset_;
  const double lik = (counts_.array() * shifted - shifted.exp()).sum();
  const VectorXd centered = f.array() - prior_mean_;
  return lik - 0.5 * centered.dot(chol_.solve(centered));
}

GpPoissonTarget gp_poisson(const VectorXd& grid, double length_scale,
                           const VectorXd& counts) {
  return GpPoissonTarget(grid, length_scale, counts, 0.0, 0.0);
}

WhitenedGpPoissonTarget::WhitenedGpPoissonTarget(MatrixXd kernel,
                                                 VectorXd counts,
                                                 double lik_offset)
    : counts_(std::move(counts)), lik_offset_(lik_offset) {
  if (kernel.rows() != counts_.size() || kernel.cols() != counts_.size())
    throw config_error("gp target: kernel and counts must have equal length");
  if ((counts_.array() < 0).any())
    throw config_error("gp target: counts must be nonnegative");
  chol_l_ = factor_kernel(std::move(kernel)).matrixL();
}

VectorXd WhitenedGpPoissonTarget::latent_field(
    const Eigen::Ref<const VectorXd>& w) const {
  return chol_l_ * w;
}

VectorXd WhitenedGpPoissonTarget::score(
    const Eigen::Ref<const VectorXd>& w) const {
  const Eigen::ArrayXd shifted = (chol_l_ * w).array() + lik_offset_;
  const VectorXd residual = counts_ - shifted.exp().matrix();
  return chol_l_.transpose() * residual - w;
}

double WhitenedGpPoissonTarget::log_density(
    const Eigen::Ref<const VectorXd>& w) const {
  const Eigen::ArrayXd shifted = (chol_l_ * w).array() + lik_offset_;
  return (counts_.array() * shifted - shifted.exp()).sum() - 0.5 * w.squaredNorm();
}

VectorXd bin_events(const std::vector<double>& event_times, Index n_bins,
                    double window_lo, double window_hi) {
  if (n_bins < 1) throw config_error("lgcp: n_bins must be >= 1");
  if (!(window_hi > window_lo))
    throw config_error("lgcp: observation window is empty");
  VectorXd counts = VectorXd::Zero(n_bins);
  const double width = (window_hi - window_lo) / static_cast<double>(n_bins);
  std::vector<std::size_t> rejected;
  for (std::size_t i = 0; i < event_times.size(); ++i) {
    const double t = event_times[i];
    if (!(t >= window_lo && t <= window_hi)) {
      rejected.push_back(i);
      continue;
    }
    Index bin = static_cast<Index>((t - window_lo) / width);
    if (bin >= n_bins) bin = n_bins - 1;  // right-closed final bin
    counts(bin) += 1.0;
  }
  if (!rejected.empty()) {
    std::ostringstream msg;
    msg << "lgcp: " << rejected.size() << " event(s) outside the window at indices";
    for (std::size_t i : rejected) msg << ' ' << i;
    throw config_error(msg.str());
  }
  return counts;
}

WhitenedGpPoissonTarget lgcp_from_events(const std::vector<double>& event_times,
                                         Index n_bins, double length_scale,
                                         std::optional<double> mean_offset,
                                         double window_lo, double window_hi) {
  VectorXd counts = bin_events(event_times, n_bins, window_lo, window_hi);
  double m = 0.0;
  if (mean_offset) {
    m = *mean_offset;
  } else if (!event_times.empty()) {
    m = std::log(static_cast<double>(event_times.size()) /
                 static_cast<double>(n_bins));
  }
  // grid in bin units, centered
  VectorXd grid(n_bins);
  for (Index i = 0; i < n_bins; ++i) grid(i) = static_cast<double>(i) + 0.5;
  return WhitenedGpPoissonTarget(rbf_kernel(grid, length_scale),
                                 std::move(counts), m);
}

std::vector<double> ingest_events(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw config_error("cannot open event file: " + path);
  std::vector<double> events;
  std::string line;
  long lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r\n");
    const std::string token = line.substr(first, last - first + 1);
    char* end = nullptr;
    const double value = std::strtod(token.c_str(), &end);
    if (end != token.c_str() + token.size() || !std::isfinite(value)) {
      std::ostringstream msg;
      msg << path << ": line " << lineno << ": cannot parse '" << token
          << "' as a timestamp";
      throw config_error(msg.str());
    }
    events.push_back(value);
  }
  std::sort(events.begin(), events.end());
  return events;
}

long poisson_draw(double rate, Rng& rng) {
  if (!(rate >= 0)) throw std::invalid_argument("poisson_draw: rate must be >= 0");
  long total = 0;
  while (rate > 500.0) {  // exp(-rate) underflows; split additively
    total += poisson_draw(500.0, rng);
    rate -= 500.0;
  }
  const double limit = std::exp(-rate);
  double p = 1.0;
  long k = 0;
  do {
    ++k;
    p *= rng.uniform();
  } while (p > limit);
  return total + k - 1;
}

VectorXd simulate_gp_poisson_counts(const VectorXd& grid, double length_scale,
                                    Rng& rng) {
  const Eigen::LLT<MatrixXd> llt = factor_kernel(rbf_kernel(grid, length_scale));
  const VectorXd f = llt.matrixL() * normal_vector(rng, grid.size());
  VectorXd counts(grid.size());
  for (Index i = 0; i < grid.size(); ++i)
    counts(i) = static_cast<double>(poisson_draw(std::exp(f(i)), rng));
  return counts;
}

}  // namespace pbam
