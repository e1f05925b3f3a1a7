// Compares the chunked OpenMP kernels against the serial Eigen reference
// implementations over a sweep of row counts. Prints one CSV row per
// (kernel, rows) cell with median times for both paths and the speedup.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "pbam/kernels.hpp"
#include "pbam/rng.hpp"

namespace {

using pbam::Index;
using pbam::MatrixXd;
using pbam::VectorXd;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v.size() % 2 ? v[v.size() / 2]
                      : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

template <typename F>
double time_median(int reps, F&& f) {
  std::vector<double> times;
  f();  // warm-up
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    times.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count());
  }
  return median(times);
}

}  // namespace

int main(int argc, char** argv) {
  Index cols = 48;
  int reps = 7;
  std::vector<Index> row_counts{1 << 12, 1 << 14, 1 << 16, 1 << 18, 1 << 20};
  if (argc > 1) cols = std::atol(argv[1]);
  if (argc > 2) reps = std::atoi(argv[2]);

  pbam::Rng rng(7);
  std::printf("threads,%d\n", pbam::kernels::thread_count());
  std::printf("kernel,rows,cols,parallel_s,reference_s,speedup\n");

  for (Index n : row_counts) {
    const MatrixXd a = pbam::normal_matrix(rng, n, cols);
    const MatrixXd b = pbam::normal_matrix(rng, n, cols);
    const MatrixXd s = pbam::normal_matrix(rng, cols, cols);
    const VectorXd d = pbam::uniform_vector(rng, n).array() + 0.5;

    struct Case {
      const char* name;
      std::function<void()> par;
      std::function<void()> ref;
    };
    volatile double sink = 0;
    const std::vector<Case> cases{
        {"gram", [&] { sink += pbam::kernels::gram(a, b).sum(); },
         [&] { sink += pbam::kernels::reference::gram(a, b).sum(); }},
        {"tall_times_small",
         [&] { sink += pbam::kernels::tall_times_small(a, s).sum(); },
         [&] { sink += pbam::kernels::reference::tall_times_small(a, s).sum(); }},
        {"scale_rows", [&] { sink += pbam::kernels::scale_rows(d, a).sum(); },
         [&] { sink += pbam::kernels::reference::scale_rows(d, a).sum(); }},
        {"hadamard_rowsum",
         [&] { sink += pbam::kernels::hadamard_rowsum(a, b).sum(); },
         [&] { sink += pbam::kernels::reference::hadamard_rowsum(a, b).sum(); }},
    };
    for (const Case& c : cases) {
      const double tp = time_median(reps, c.par);
      const double tr = time_median(reps, c.ref);
      std::printf("%s,%ld,%ld,%.6f,%.6f,%.2f\n", c.name, static_cast<long>(n),
                  static_cast<long>(cols), tp, tr, tr / tp);
    }
  }
  return 0;
}
