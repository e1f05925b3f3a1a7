#pragma once

#include <string>
#include <vector>

namespace pbam {

/// One metric record of a run. wall_seconds is the only non-deterministic
/// column; everything else is a pure function of (config, seed).
struct TraceRecord {
  long iteration = 0;
  long grad_evals = 0;
  std::string metric_name;
  double metric_value = 0.0;
  long em_steps = 0;
  double wall_seconds = 0.0;
};

struct RunTrace {
  std::vector<TraceRecord> records;
  bool diverged = false;
};

}  // namespace pbam
