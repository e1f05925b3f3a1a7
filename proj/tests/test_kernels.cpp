#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pbam/kernels.hpp"
#include "pbam/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace pbam;
namespace k = pbam::kernels;

namespace {
constexpr double tol = 1e-12;
}

TEST_CASE("kernels agree with the serial reference across shapes") {
  Rng rng(11);
  for (Index rows : {Index(1), Index(7), Index(4096), Index(4097), Index(9001)}) {
    for (Index cols : {Index(0), Index(1), Index(5)}) {
      const MatrixXd a = normal_matrix(rng, rows, cols);
      const MatrixXd b = normal_matrix(rng, rows, cols);
      const MatrixXd s = normal_matrix(rng, cols, 3);
      const VectorXd d = uniform_vector(rng, rows).array() + 0.25;

      CHECK((k::gram(a, b) - k::reference::gram(a, b)).norm() <=
            tol * (1.0 + k::reference::gram(a, b).norm()));
      CHECK((k::tall_times_small(a, s) - k::reference::tall_times_small(a, s))
                .norm() <= tol * (1.0 + a.norm()));
      CHECK((k::scale_rows(d, a) - k::reference::scale_rows(d, a)).norm() ==
            0.0);
      CHECK((k::hadamard_rowsum(a, b) - k::reference::hadamard_rowsum(a, b))
                .norm() <= tol * (1.0 + a.norm()));
      CHECK((k::rowwise_sqnorm(a) - k::reference::rowwise_sqnorm(a)).norm() <=
            tol * (1.0 + a.norm()));
    }
  }
}

TEST_CASE("kernel results do not depend on threading") {
  Rng rng(12);
  const Index rows = 3 * k::row_chunk + 123;
  const MatrixXd a = normal_matrix(rng, rows, 6);
  const MatrixXd b = normal_matrix(rng, rows, 4);
  const MatrixXd s = normal_matrix(rng, 6, 5);

  k::set_parallel(true);
  const MatrixXd g_par = k::gram(a, b);
  const MatrixXd t_par = k::tall_times_small(a, s);
  k::set_parallel(false);
  const MatrixXd g_ser = k::gram(a, b);
  const MatrixXd t_ser = k::tall_times_small(a, s);
  k::set_parallel(true);

  // bitwise: the chunk partition is fixed, only the workers change
  CHECK(g_par == g_ser);
  CHECK(t_par == t_ser);

#ifdef _OPENMP
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const MatrixXd g_one = k::gram(a, b);
  omp_set_num_threads(saved);
  CHECK(g_par == g_one);
#endif
}

TEST_CASE("gram rejects mismatched rows") {
  const MatrixXd a = MatrixXd::Zero(4, 2);
  const MatrixXd b = MatrixXd::Zero(5, 2);
  CHECK_THROWS_AS((void)k::gram(a, b), std::invalid_argument);
}
