#include "pbam/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "pbam/errors.hpp"
#include "pbam/kernels.hpp"

namespace pbam {

namespace {

constexpr std::uint64_t kMetricStream = 0x4D455452;  // sub-stream tag

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

KvConfig KvConfig::parse_string(const std::string& text,
                                const std::string& origin) {
  KvConfig cfg;
  cfg.origin_ = origin;
  std::istringstream is(text);
  std::string line;
  std::string section;
  long lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw config_error(origin + ":" + std::to_string(lineno) +
                           ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw config_error(origin + ":" + std::to_string(lineno) +
                           ": empty section name");
      cfg.sections_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error(origin + ":" + std::to_string(lineno) +
                         ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw config_error(origin + ":" + std::to_string(lineno) + ": empty key");
    cfg.sections_[section][key] = value;
  }
  return cfg;
}

KvConfig KvConfig::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw config_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_string(buf.str(), path);
}

bool KvConfig::has(const std::string& section, const std::string& key) const {
  const auto it = sections_.find(section);
  return it != sections_.end() && it->second.count(key) > 0;
}

std::string KvConfig::get_string(const std::string& section,
                                 const std::string& key) const {
  const auto it = sections_.find(section);
  if (it != sections_.end()) {
    const auto kit = it->second.find(key);
    if (kit != it->second.end()) return kit->second;
  }
  throw config_error(origin_ + ": missing key [" + section + "] " + key);
}

std::string KvConfig::get_string_or(const std::string& section,
                                    const std::string& key,
                                    const std::string& fallback) const {
  return has(section, key) ? get_string(section, key) : fallback;
}

double KvConfig::get_double(const std::string& section,
                            const std::string& key) const {
  const std::string raw = get_string(section, key);
  char* end = nullptr;
  const double v = std::strtod(raw.c_str(), &end);
  if (end != raw.c_str() + raw.size() || raw.empty())
    throw config_error(origin_ + ": [" + section + "] " + key +
                       " is not a number: '" + raw + "'");
  return v;
}

double KvConfig::get_double_or(const std::string& section,
                               const std::string& key, double fallback) const {
  return has(section, key) ? get_double(section, key) : fallback;
}

long KvConfig::get_long(const std::string& section,
                        const std::string& key) const {
  const std::string raw = get_string(section, key);
  char* end = nullptr;
  const long v = std::strtol(raw.c_str(), &end, 10);
  if (end != raw.c_str() + raw.size() || raw.empty())
    throw config_error(origin_ + ": [" + section + "] " + key +
                       " is not an integer: '" + raw + "'");
  return v;
}

long KvConfig::get_long_or(const std::string& section, const std::string& key,
                           long fallback) const {
  return has(section, key) ? get_long(section, key) : fallback;
}

std::uint64_t KvConfig::get_u64(const std::string& section,
                                const std::string& key) const {
  const std::string raw = get_string(section, key);
  char* end = nullptr;
  const auto v = std::strtoull(raw.c_str(), &end, 10);
  if (end != raw.c_str() + raw.size() || raw.empty())
    throw config_error(origin_ + ": [" + section + "] " + key +
                       " is not an unsigned integer: '" + raw + "'");
  return v;
}

std::vector<std::string> KvConfig::get_string_list(const std::string& section,
                                                   const std::string& key) const {
  const std::string raw = get_string(section, key);
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(raw);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<long> KvConfig::get_long_list(const std::string& section,
                                          const std::string& key) const {
  std::vector<long> out;
  for (const std::string& item : get_string_list(section, key)) {
    char* end = nullptr;
    const long v = std::strtol(item.c_str(), &end, 10);
    if (end != item.c_str() + item.size())
      throw config_error(origin_ + ": [" + section + "] " + key +
                         " contains a non-integer: '" + item + "'");
    out.push_back(v);
  }
  return out;
}

// --- targets ----------------------------------------------------------------

namespace {

VectorXd read_counts_file(const std::string& path) {
  const std::vector<double> raw = ingest_events(path);  // same line format
  VectorXd counts(static_cast<Index>(raw.size()));
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] < 0 || raw[i] != std::floor(raw[i]))
      throw config_error(path + ": counts must be nonnegative integers");
    counts(static_cast<Index>(i)) = raw[i];
  }
  return counts;
}

}  // namespace

TargetBundle make_target(const TargetSpec& spec) {
  TargetBundle bundle;
  if (spec.kind == "synthetic-gaussian") {
    if (spec.dim < 1) throw config_error("target: dim must be >= 1");
    if (spec.rank < 0 || spec.rank > spec.dim)
      throw config_error("target: need 0 <= rank <= dim");
    Rng rng(spec.seed);
    auto t = std::make_shared<GaussianTarget>(
        synthetic_gaussian(spec.dim, spec.rank, rng));
    bundle.truth = t->ground_truth();
    bundle.target = std::move(t);
  } else if (spec.kind == "gp-poisson") {
    if (spec.dim < 1) throw config_error("target: dim must be >= 1");
    const VectorXd grid = VectorXd::LinSpaced(spec.dim, 0.0,
                                              static_cast<double>(spec.dim - 1));
    VectorXd counts;
    if (spec.counts_source == "synthetic-seed") {
      Rng rng(spec.counts_seed);
      counts = simulate_gp_poisson_counts(grid, spec.length_scale, rng);
    } else if (spec.counts_source == "file") {
      counts = read_counts_file(spec.counts_file);
      if (counts.size() != spec.dim)
        throw config_error("target: counts file length does not match dim");
    } else {
      throw config_error("target: counts must be 'synthetic-seed' or 'file'");
    }
    bundle.target = std::make_shared<GpPoissonTarget>(
        gp_poisson(grid, spec.length_scale, counts));
  } else if (spec.kind == "lgcp") {
    const std::vector<double> events = ingest_events(spec.events_file);
    double lo, hi;
    if (spec.window_lo && spec.window_hi) {
      lo = *spec.window_lo;
      hi = *spec.window_hi;
    } else if (!events.empty()) {
      lo = events.front();
      hi = events.back();
    } else {
      throw config_error("target: lgcp with no events needs an explicit window");
    }
    bundle.target = std::make_shared<WhitenedGpPoissonTarget>(lgcp_from_events(
        events, spec.n_bins, spec.length_scale, spec.mean_offset, lo, hi));
  } else if (spec.kind == "dummy-zero") {
    if (spec.dim < 1) throw config_error("target: dim must be >= 1");
    bundle.target = std::make_shared<ZeroScoreTarget>(spec.dim);
  } else {
    throw config_error("target: unknown kind '" + spec.kind + "'");
  }
  return bundle;
}

// --- metrics ----------------------------------------------------------------

std::string MetricSpec::name() const {
  switch (kind) {
    case Kind::kl_exact:
      return "kl_exact";
    case Kind::neg_elbo:
      return "neg_elbo_mc" + std::to_string(mc_samples);
  }
  return "?";
}

MetricSpec MetricSpec::parse(const std::string& id, int mc_samples) {
  MetricSpec m;
  if (id == "kl-exact") {
    m.kind = Kind::kl_exact;
  } else if (id == "neg-elbo") {
    m.kind = Kind::neg_elbo;
    if (mc_samples < 1)
      throw config_error("metric: neg-elbo needs mc_samples >= 1");
    m.mc_samples = mc_samples;
  } else {
    throw config_error("metric: unknown kind '" + id + "'");
  }
  return m;
}

namespace {

VectorXd batch_log_density(const ScoreTarget& target, const MatrixXd& rows) {
  const Index n = rows.rows();
  VectorXd out(n);
  if (target.concurrency_safe() && n > 1) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (Index i = 0; i < n; ++i) out(i) = target.log_density(rows.row(i));
  } else {
    for (Index i = 0; i < n; ++i) out(i) = target.log_density(rows.row(i));
  }
  return out;
}

}  // namespace

double compute_metric(const MetricSpec& metric, const LowRankGaussian& q,
                      const TargetBundle& bundle, Rng& rng) {
  switch (metric.kind) {
    case MetricSpec::Kind::kl_exact:
      if (!bundle.truth)
        throw config_error(
            "metric: kl-exact requires a target with a Gaussian ground truth");
      return gauss_kl(q, *bundle.truth);
    case MetricSpec::Kind::neg_elbo: {
      if (!bundle.target->has_log_density())
        throw config_error("metric: neg-elbo requires a target log-density");
      const MatrixXd z = sample(q, metric.mc_samples, rng);
      return -batch_log_density(*bundle.target, z).mean() - entropy(q);
    }
  }
  throw std::logic_error("compute_metric: unreachable");
}

// --- run config -------------------------------------------------------------

RunConfig RunConfig::from_config(const KvConfig& cfg) {
  RunConfig rc;
  const std::string algo = cfg.get_string("run", "algorithm");
  if (algo == "pbam") {
    rc.algorithm = Algo::pbam;
  } else if (algo == "bam-dense") {
    rc.algorithm = Algo::bam_dense;
  } else if (algo == "advi") {
    rc.algorithm = Algo::advi;
  } else {
    throw config_error("run: unknown algorithm '" + algo + "'");
  }
  rc.seed = cfg.get_u64("run", "seed");
  rc.iterations = cfg.get_long("run", "iterations");
  if (rc.iterations < 0) throw config_error("run: iterations must be >= 0");
  rc.batch_size = cfg.get_long_or("run", "batch_size", 32);
  if (rc.batch_size < 1) throw config_error("run: batch_size must be >= 1");
  rc.rank = cfg.get_long_or("run", "rank", 0);
  if (rc.rank < 0) throw config_error("run: rank must be >= 0");
  rc.init_psi = cfg.get_double_or("run", "init_psi", 1.0);
  if (!(rc.init_psi > 0)) throw config_error("run: init_psi must be positive");
  rc.metric = MetricSpec::parse(
      cfg.get_string_or("run", "metric", "kl-exact"),
      static_cast<int>(cfg.get_long_or("run", "metric_mc_samples", 64)));
  rc.metric_cadence = cfg.get_long_or("run", "metric_cadence", 10);
  if (rc.metric_cadence < 1)
    throw config_error("run: metric_cadence must be >= 1");
  rc.output_dir = cfg.get_string_or("run", "output_dir", "");

  rc.schedule = LearningSchedule::parse(
      cfg.get_double_or("schedule", "lambda0", 1.0),
      cfg.get_string_or("schedule", "rule", "one_over_t"));

  rc.patch.eta = cfg.get_double_or("patch", "eta", 1.2);
  rc.patch.tol = cfg.get_double_or("patch", "tol", 1e-4);
  rc.patch.max_steps =
      static_cast<int>(cfg.get_long_or("patch", "max_steps", 500));
  rc.patch.rank = rc.rank;
  rc.patch.validate();

  TargetSpec& t = rc.target;
  t.kind = cfg.get_string("target", "kind");
  t.seed = cfg.has("target", "seed") ? cfg.get_u64("target", "seed") : 0;
  t.dim = cfg.get_long_or("target", "dim", 0);
  t.rank = cfg.get_long_or("target", "rank", 0);
  t.length_scale = cfg.get_double_or("target", "length_scale", 1.0);
  t.counts_source = cfg.get_string_or("target", "counts", "synthetic-seed");
  t.counts_seed =
      cfg.has("target", "counts_seed") ? cfg.get_u64("target", "counts_seed") : t.seed;
  t.counts_file = cfg.get_string_or("target", "counts_file", "");
  t.events_file = cfg.get_string_or("target", "events_file", "");
  t.n_bins = cfg.get_long_or("target", "n_bins", 0);
  if (cfg.has("target", "mean_offset")) {
    const std::string m = cfg.get_string("target", "mean_offset");
    if (m != "auto") t.mean_offset = cfg.get_double("target", "mean_offset");
  }
  if (cfg.has("target", "window_lo"))
    t.window_lo = cfg.get_double("target", "window_lo");
  if (cfg.has("target", "window_hi"))
    t.window_hi = cfg.get_double("target", "window_hi");

  AdviConfig& a = rc.advi;
  const std::string family = cfg.get_string_or("advi", "family", "lowrank");
  if (family == "diagonal") {
    a.family = AdviConfig::Family::diagonal;
  } else if (family == "lowrank") {
    a.family = AdviConfig::Family::lowrank;
  } else {
    throw config_error("advi: unknown family '" + family + "'");
  }
  a.learning_rate0 = cfg.get_double_or("advi", "learning_rate0", 0.05);
  const std::string sched = cfg.get_string_or("advi", "lr_schedule", "linear");
  if (sched == "constant") {
    a.lr_schedule = AdviConfig::LrSchedule::constant;
  } else if (sched == "linear") {
    a.lr_schedule = AdviConfig::LrSchedule::linear;
  } else if (sched == "cosine") {
    a.lr_schedule = AdviConfig::LrSchedule::cosine;
  } else {
    throw config_error("advi: unknown lr_schedule '" + sched + "'");
  }
  a.lr_min = cfg.get_double_or("advi", "lr_min", 1e-5);
  a.adam_beta1 = cfg.get_double_or("advi", "adam_beta1", 0.9);
  a.adam_beta2 = cfg.get_double_or("advi", "adam_beta2", 0.999);
  a.adam_eps = cfg.get_double_or("advi", "adam_eps", 1e-8);
  return rc;
}

// --- trace CSV --------------------------------------------------------------

std::string trace_csv_header() {
  return "iteration,grad_evals,metric_name,metric_value,em_steps,wall_seconds";
}

std::string trace_csv_row(const TraceRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%ld,%ld,%s,%.17g,%ld,%.6f", r.iteration,
                r.grad_evals, r.metric_name.c_str(), r.metric_value, r.em_steps,
                r.wall_seconds);
  return buf;
}

struct CsvTraceSink::Impl {
  std::ofstream os;
};

CsvTraceSink::CsvTraceSink(const std::string& path) : impl_(new Impl) {
  impl_->os.open(path);
  if (!impl_->os) throw config_error("cannot open trace file: " + path);
  impl_->os << trace_csv_header() << '\n';
  impl_->os.flush();
}

void CsvTraceSink::row(const TraceRecord& r) {
  impl_->os << trace_csv_row(r) << '\n';
  impl_->os.flush();  // an aborted run leaves a valid CSV prefix
}

// --- runners ----------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(const Clock::time_point& t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool should_record(long iter, long total, long cadence) {
  return iter == total || iter % cadence == 0;
}

Rng metric_rng(std::uint64_t run_seed, long iteration) {
  return Rng(derive_seed(derive_seed(run_seed, kMetricStream),
                         static_cast<std::uint64_t>(iteration)));
}

MatrixXd init_factor(Rng& rng, Index d, Index k, double scale) {
  if (k == 0) return MatrixXd(d, 0);
  return std::sqrt(scale) * normal_matrix(rng, d, k) /
         std::sqrt(static_cast<double>(d));
}

FitOutcome run_pbam(const RunConfig& cfg, const TargetBundle& bundle,
                    TraceSink* sink) {
  const Index d = bundle.target->dim();
  Rng rng(cfg.seed);
  LowRankGaussian q(VectorXd::Zero(d),
                    init_factor(rng, d, cfg.rank, cfg.init_psi),
                    VectorXd::Constant(d, cfg.init_psi));
  FitOutcome out;
  const auto t0 = Clock::now();

  const auto record = [&](long iter, long em) {
    Rng mrng = metric_rng(cfg.seed, iter);
    TraceRecord r{iter, iter * cfg.batch_size, cfg.metric.name(),
                  compute_metric(cfg.metric, q, bundle, mrng), em,
                  seconds_since(t0)};
    out.trace.records.push_back(r);
    if (sink) sink->row(r);
  };

  if (cfg.iterations > 0) record(0, 0);
  for (long t = 0; t < cfg.iterations; ++t) {
    // The divergence being matched sums over the batch, so the proximal
    // weight handed to the update scales with B.
    double lambda_t =
        static_cast<double>(cfg.batch_size) * schedule_value(cfg.schedule, t);
    const BatchStats stats = collect_batch(q, *bundle.target, cfg.batch_size, rng);
    long em_steps = 0;
    for (int attempt = 0;; ++attempt) {
      try {
        const ImplicitCov ic = match_step(q, stats, lambda_t);
        PatchResult pr = patch(ic, q.lambda(), q.psi(), cfg.patch);
        em_steps = pr.report.steps_taken;
        VectorXd mu = mean_update(q, stats, lambda_t, pr.lambda, pr.psi);
        q = LowRankGaussian(std::move(mu), std::move(pr.lambda),
                            std::move(pr.psi));
        break;
      } catch (const numeric_error&) {
        if (attempt >= 3) throw;
        lambda_t *= 0.5;  // retry the iteration with a gentler update
      }
    }
    if (should_record(t + 1, cfg.iterations, cfg.metric_cadence))
      record(t + 1, em_steps);
  }
  out.q = std::move(q);
  return out;
}

double dense_logdet(const MatrixXd& sigma) {
  Eigen::LLT<MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw numeric_error("dense covariance is not positive definite");
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

double dense_metric(const MetricSpec& metric, const DenseGaussian& g,
                    const TargetBundle& bundle, Rng& rng) {
  const Index d = g.mu.size();
  switch (metric.kind) {
    case MetricSpec::Kind::kl_exact: {
      if (!bundle.truth)
        throw config_error(
            "metric: kl-exact requires a target with a Gaussian ground truth");
      const LowRankGaussian& p = *bundle.truth;
      const double trace = woodbury_solve(p, g.sigma).trace();
      const VectorXd dmu = g.mu - p.mu();
      const VectorXd solved = woodbury_solve(p, dmu);
      const double quad = dmu.dot(solved);
      return 0.5 * (logdet(p) - dense_logdet(g.sigma) - static_cast<double>(d) +
                    trace + quad);
    }
    case MetricSpec::Kind::neg_elbo: {
      Eigen::LLT<MatrixXd> llt(g.sigma);
      if (llt.info() != Eigen::Success)
        throw numeric_error("dense covariance is not positive definite");
      MatrixXd z(metric.mc_samples, d);
      for (int s = 0; s < metric.mc_samples; ++s)
        z.row(s) = (g.mu + llt.matrixL() * normal_vector(rng, d)).transpose();
      const double ent =
          0.5 * (static_cast<double>(d) * (std::log(2.0 * 3.14159265358979323846) + 1.0) +
                 dense_logdet(g.sigma));
      return -batch_log_density(*bundle.target, z).mean() - ent;
    }
  }
  throw std::logic_error("dense_metric: unreachable");
}

FitOutcome run_bam_dense(const RunConfig& cfg, const TargetBundle& bundle,
                         TraceSink* sink) {
  const Index d = bundle.target->dim();
  Rng rng(cfg.seed);
  const MatrixXd lam0 = init_factor(rng, d, cfg.rank, cfg.init_psi);
  DenseGaussian g;
  g.mu = VectorXd::Zero(d);
  g.sigma = cfg.init_psi * MatrixXd::Identity(d, d);
  if (lam0.cols() > 0) g.sigma.noalias() += lam0 * lam0.transpose();

  FitOutcome out;
  const auto t0 = Clock::now();
  const auto record = [&](long iter) {
    Rng mrng = metric_rng(cfg.seed, iter);
    TraceRecord r{iter, iter * cfg.batch_size, cfg.metric.name(),
                  dense_metric(cfg.metric, g, bundle, mrng), 0,
                  seconds_since(t0)};
    out.trace.records.push_back(r);
    if (sink) sink->row(r);
  };

  if (cfg.iterations > 0) record(0);
  for (long t = 0; t < cfg.iterations; ++t) {
    double lambda_t =
        static_cast<double>(cfg.batch_size) * schedule_value(cfg.schedule, t);
    Eigen::LLT<MatrixXd> llt(g.sigma);
    if (llt.info() != Eigen::Success)
      throw numeric_error("dense covariance is not positive definite");
    MatrixXd z_cols(d, cfg.batch_size);
    for (Index b = 0; b < cfg.batch_size; ++b)
      z_cols.col(b) = g.mu + llt.matrixL() * normal_vector(rng, d);
    MatrixXd g_cols(d, cfg.batch_size);
    for (Index b = 0; b < cfg.batch_size; ++b)
      g_cols.col(b) = bundle.target->score(z_cols.col(b));
    if (!g_cols.array().isFinite().all())
      throw numeric_error("dense run: non-finite score in batch");
    const BatchStats stats = BatchStats::from_samples(z_cols, g_cols);
    for (int attempt = 0;; ++attempt) {
      try {
        g = dense_bam_step(g, stats, lambda_t);
        break;
      } catch (const numeric_error&) {
        if (attempt >= 3) throw;
        lambda_t *= 0.5;
      }
    }
    if (should_record(t + 1, cfg.iterations, cfg.metric_cadence)) record(t + 1);
  }
  out.q_dense = std::move(g);
  return out;
}

FitOutcome run_advi(const RunConfig& cfg, const TargetBundle& bundle,
                    TraceSink* sink) {
  const Index d = bundle.target->dim();
  AdviConfig ac = cfg.advi;
  ac.batch_size = cfg.batch_size;
  ac.iterations = cfg.iterations;
  ac.rank = (ac.family == AdviConfig::Family::diagonal) ? 0 : cfg.rank;
  ac.validate();

  Rng rng(cfg.seed);
  LowRankGaussian q0(VectorXd::Zero(d),
                     init_factor(rng, d, ac.rank, cfg.init_psi),
                     VectorXd::Constant(d, cfg.init_psi));

  FitOutcome out;
  const auto t0 = Clock::now();
  const auto record = [&](long iter, const LowRankGaussian& q) {
    Rng mrng = metric_rng(cfg.seed, iter);
    TraceRecord r{iter, iter * cfg.batch_size, cfg.metric.name(),
                  compute_metric(cfg.metric, q, bundle, mrng), 0,
                  seconds_since(t0)};
    out.trace.records.push_back(r);
    if (sink) sink->row(r);
  };

  if (cfg.iterations > 0) record(0, q0);
  AdviResult ar = adam_fit(
      *bundle.target, ac, std::move(q0), rng,
      [&](long iter, const LowRankGaussian& q) {
        if (should_record(iter, cfg.iterations, cfg.metric_cadence))
          record(iter, q);
      });
  out.trace.diverged = ar.trace.diverged;
  out.q = std::move(ar.q);
  return out;
}

}  // namespace

FitOutcome run_fit(const RunConfig& cfg, const TargetBundle& bundle,
                   TraceSink* sink) {
  switch (cfg.algorithm) {
    case RunConfig::Algo::pbam:
      return run_pbam(cfg, bundle, sink);
    case RunConfig::Algo::bam_dense:
      return run_bam_dense(cfg, bundle, sink);
    case RunConfig::Algo::advi:
      return run_advi(cfg, bundle, sink);
  }
  throw std::logic_error("run_fit: unreachable");
}

// --- scaling benchmark ------------------------------------------------------

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(std::max(y[i], 1e-12));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double nn = static_cast<double>(n);
  return (nn * sxy - sx * sy) / (nn * sxx - sx * sx);
}

}  // namespace

ScaleTable scaling_benchmark(const std::vector<Index>& dims,
                             const std::vector<Index>& ranks,
                             const std::vector<Index>& batches, int reps,
                             std::uint64_t seed) {
  if (dims.empty() || ranks.empty() || batches.empty())
    throw config_error("scale: dims, ranks, and batches must be nonempty");
  if (reps < 1) throw config_error("scale: reps must be >= 1");

  std::vector<std::array<Index, 3>> cells;
  std::set<std::array<Index, 3>> seen;
  const auto add = [&](Index d, Index k, Index b) {
    const std::array<Index, 3> cell{d, k, b};
    if (seen.insert(cell).second) cells.push_back(cell);
  };
  for (Index d : dims) add(d, ranks.front(), batches.front());
  for (Index k : ranks) add(dims.front(), k, batches.front());
  for (Index b : batches) add(dims.front(), ranks.front(), b);

  ScaleTable table;
  std::uint64_t cell_index = 0;
  for (const auto& [d, k, b] : cells) {
    if (k > d) throw config_error("scale: rank exceeds dim in sweep");
    Rng rng(derive_seed(seed, cell_index++));
    const ZeroScoreTarget target(d);
    const LowRankGaussian q(VectorXd::Zero(d), init_factor(rng, d, k, 1.0),
                            VectorXd::Ones(d));
    std::vector<double> bam_times, em_times;
    for (int rep = -1; rep < reps; ++rep) {  // rep -1 is an untimed warm-up
      const auto t0 = Clock::now();
      const BatchStats stats = collect_batch(q, target, b, rng);
      const ImplicitCov ic = match_step(q, stats, 1.0);
      const double bam_s = seconds_since(t0);
      const auto t1 = Clock::now();
      const EmStepResult em = em_step(ic, q.lambda(), q.psi(), 1.0);
      const double em_s = std::chrono::duration<double>(Clock::now() - t1).count();
      (void)em;
      if (rep >= 0) {
        bam_times.push_back(bam_s);
        em_times.push_back(em_s);
      }
    }
    table.cells.push_back({"bam", d, k, b, median(bam_times)});
    table.cells.push_back({"em", d, k, b, median(em_times)});
  }

  const auto fit_axis = [&](const std::string& axis,
                            const std::vector<Index>& sweep, int which) {
    if (sweep.size() < 2) return;
    for (const std::string& step : {std::string("bam"), std::string("em")}) {
      std::vector<double> xs, ys;
      for (Index v : sweep) {
        const Index d = which == 0 ? v : dims.front();
        const Index k = which == 1 ? v : ranks.front();
        const Index b = which == 2 ? v : batches.front();
        for (const ScaleCell& c : table.cells) {
          if (c.step == step && c.dim == d && c.rank == k && c.batch == b) {
            xs.push_back(static_cast<double>(v));
            ys.push_back(c.median_seconds);
            break;
          }
        }
      }
      if (xs.size() >= 2) table.slopes.push_back({step, axis, loglog_slope(xs, ys)});
    }
  };
  fit_axis("dim", dims, 0);
  fit_axis("rank", ranks, 1);
  fit_axis("batch", batches, 2);
  return table;
}

void write_scale_csv(const ScaleTable& table, const std::string& cells_path,
                     const std::string& slopes_path) {
  std::ofstream cells(cells_path);
  if (!cells) throw config_error("cannot open: " + cells_path);
  cells << "step,dim,rank,batch,median_seconds\n";
  for (const ScaleCell& c : table.cells) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s,%ld,%ld,%ld,%.9f", c.step.c_str(),
                  static_cast<long>(c.dim), static_cast<long>(c.rank),
                  static_cast<long>(c.batch), c.median_seconds);
    cells << buf << '\n';
  }
  std::ofstream slopes(slopes_path);
  if (!slopes) throw config_error("cannot open: " + slopes_path);
  slopes << "step,axis,slope\n";
  for (const SlopeFit& s : table.slopes) {
    char buf[120];
    std::snprintf(buf, sizeof(buf), "%s,%s,%.4f", s.step.c_str(), s.axis.c_str(),
                  s.slope);
    slopes << buf << '\n';
  }
}

}  // namespace pbam
