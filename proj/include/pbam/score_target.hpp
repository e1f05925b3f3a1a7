#pragma once

#include "pbam/types.hpp"

namespace pbam {

/// A target density known through its score, grad_z log p(z), and optionally
/// an (unnormalized) log-density. Implementations must be immutable after
/// construction; concurrency_safe() == true promises that score() and
/// log_density() may be called from multiple threads at once.
class ScoreTarget {
 public:
  virtual ~ScoreTarget() = default;

  virtual Index dim() const = 0;
  virtual VectorXd score(const Eigen::Ref<const VectorXd>& z) const = 0;

  virtual bool has_log_density() const { return false; }
  virtual double log_density(const Eigen::Ref<const VectorXd>& z) const;

  virtual bool concurrency_safe() const { return true; }
};

}  // namespace pbam
