#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace pbam {

/// Bad configuration, file, or CLI usage. Maps to exit code 1.
class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical breakdown (failed factorization, non-finite values, non-PSD
/// matrices beyond tolerance). Maps to exit code 2.
class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical breakdown inside the patch loop; carries the surrogate trace
/// accumulated up to the failure.
class patch_numeric_error : public numeric_error {
 public:
  patch_numeric_error(const std::string& what, std::vector<double> trace)
      : numeric_error(what), kl_trace(std::move(trace)) {}
  std::vector<double> kl_trace;
};

}  // namespace pbam
