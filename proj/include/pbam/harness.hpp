#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pbam/advi.hpp"
#include "pbam/bam.hpp"
#include "pbam/patch.hpp"
#include "pbam/targets.hpp"
#include "pbam/trace.hpp"

// Experiment runner: flat key-value configs with [section] headers, seeded
// deterministic runs, CSV traces, and the step-timing benchmark.

namespace pbam {

/// Flat key-value config with sections. Grammar: '#' starts a comment,
/// blank lines are ignored, "[section]" opens a section (names may contain
/// spaces), "key = value" assigns within the current section.
class KvConfig {
 public:
  static KvConfig parse_file(const std::string& path);
  static KvConfig parse_string(const std::string& text,
                               const std::string& origin = "<config>");

  bool has(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key) const;
  std::string get_string_or(const std::string& section, const std::string& key,
                            const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key) const;
  double get_double_or(const std::string& section, const std::string& key,
                       double fallback) const;
  long get_long(const std::string& section, const std::string& key) const;
  long get_long_or(const std::string& section, const std::string& key,
                   long fallback) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key) const;
  std::vector<long> get_long_list(const std::string& section,
                                  const std::string& key) const;
  std::vector<std::string> get_string_list(const std::string& section,
                                           const std::string& key) const;
  const std::string& origin() const { return origin_; }

 private:
  std::string origin_;
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

struct TargetSpec {
  std::string kind;  // synthetic-gaussian | gp-poisson | lgcp | dummy-zero
  std::uint64_t seed = 0;
  Index dim = 0;
  Index rank = 0;
  double length_scale = 1.0;
  std::string counts_source = "synthetic-seed";  // or "file"
  std::uint64_t counts_seed = 0;
  std::string counts_file;
  std::string events_file;
  Index n_bins = 0;
  std::optional<double> mean_offset;  // absent = auto (log(events / bins))
  std::optional<double> window_lo, window_hi;
};

struct TargetBundle {
  std::shared_ptr<const ScoreTarget> target;
  std::optional<LowRankGaussian> truth;  // present for Gaussian targets
};

TargetBundle make_target(const TargetSpec& spec);

struct MetricSpec {
  enum class Kind { kl_exact, neg_elbo };
  Kind kind = Kind::kl_exact;
  int mc_samples = 64;

  std::string name() const;
  static MetricSpec parse(const std::string& id, int mc_samples);
};

/// kl_exact: closed-form KL(q || truth), only for targets with ground truth.
/// neg_elbo: -mean log p over fresh seeded samples minus the entropy of q
/// (reverse KL up to the log-normalizer).
double compute_metric(const MetricSpec& metric, const LowRankGaussian& q,
                      const TargetBundle& bundle, Rng& rng);

struct RunConfig {
  enum class Algo { pbam, bam_dense, advi };

  Algo algorithm = Algo::pbam;
  std::uint64_t seed = 0;
  long iterations = 0;
  Index batch_size = 32;
  Index rank = 0;
  double init_psi = 1.0;  // scale of the initial covariance; exp-likelihood
                          // targets want a cooler start (e.g. 0.1)
  LearningSchedule schedule;
  PatchConfig patch;  // rank mirrors `rank`
  MetricSpec metric;
  long metric_cadence = 10;
  std::string output_dir;
  TargetSpec target;
  AdviConfig advi;  // used when algorithm == advi

  static RunConfig from_config(const KvConfig& cfg);
};

/// Row consumer for streaming traces; CSV sinks flush after every row so an
/// aborted run leaves a valid prefix on disk.
class TraceSink {
 public:
  virtual ~TraceSink() = default;
  virtual void row(const TraceRecord& r) = 0;
};

class CsvTraceSink final : public TraceSink {
 public:
  explicit CsvTraceSink(const std::string& path);
  void row(const TraceRecord& r) override;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

std::string trace_csv_header();
std::string trace_csv_row(const TraceRecord& r);

struct FitOutcome {
  std::optional<LowRankGaussian> q;      // pbam / advi
  std::optional<DenseGaussian> q_dense;  // bam-dense
  RunTrace trace;
};

/// Runs one configured experiment against an already-built target. Metrics
/// are recorded at iteration 0, every `metric_cadence` iterations, and at the
/// final iteration. pbam/bam-dense retry a numerically broken iteration up
/// to three times with halved lambda_t before aborting.
FitOutcome run_fit(const RunConfig& cfg, const TargetBundle& bundle,
                   TraceSink* sink = nullptr);

// --- step-timing benchmark -------------------------------------------------

struct ScaleCell {
  std::string step;  // "bam" | "em"
  Index dim = 0, rank = 0, batch = 0;
  double median_seconds = 0.0;
};

struct SlopeFit {
  std::string step;
  std::string axis;  // "dim" | "rank" | "batch"
  double slope = 0.0;
};

struct ScaleTable {
  std::vector<ScaleCell> cells;
  std::vector<SlopeFit> slopes;
};

/// Times the match update ("bam": sample + scores of the zero-cost dummy
/// target + statistics + match_step) and a single EM step ("em") on a
/// zero-score target. Each list is swept in turn while the other two factors
/// stay at the first value of their list; medians over `reps` repetitions;
/// log-log slopes fitted per swept axis.
ScaleTable scaling_benchmark(const std::vector<Index>& dims,
                             const std::vector<Index>& ranks,
                             const std::vector<Index>& batches, int reps,
                             std::uint64_t seed);

void write_scale_csv(const ScaleTable& table, const std::string& cells_path,
                     const std::string& slopes_path);

/// Subcommands: fit <config>, scale <config>, compare <config>,
/// inspect <params-file>. Exit codes: 0 success, 1 config error, 2 numeric
/// abort.
int cli_main(int argc, const char* const* argv);

}  // namespace pbam
