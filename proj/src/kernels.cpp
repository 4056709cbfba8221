// SPDX-License-Identifier: Apache-2.0

#include "gret/kernels.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gret::kernels {
namespace {

// One output row. Shared by both entry points so the summation order matches.
inline void gemm_row(const GemmArgs& g, std::size_t i) {
  double* c = g.c + i * g.n;
  if (!g.accumulate) std::fill(c, c + g.n, 0.0);
  if (g.trans_b == Trans::kNo) {
    for (std::size_t p = 0; p < g.k; ++p) {
      const double aip = g.trans_a == Trans::kNo ? g.a[i * g.k + p] : g.a[p * g.m + i];
      const double* b = g.b + p * g.n;
      for (std::size_t j = 0; j < g.n; ++j) c[j] += aip * b[j];
    }
  } else {
    for (std::size_t j = 0; j < g.n; ++j) {
      const double* b = g.b + j * g.k;
      double acc = 0.0;
      if (g.trans_a == Trans::kNo) {
        const double* a = g.a + i * g.k;
        for (std::size_t p = 0; p < g.k; ++p) acc += a[p] * b[p];
      } else {
        for (std::size_t p = 0; p < g.k; ++p) acc += g.a[p * g.m + i] * b[p];
      }
      c[j] += acc;
    }
  }
}

}  // namespace

namespace serial {
void gemm(const GemmArgs& args) {
  for (std::size_t i = 0; i < args.m; ++i) gemm_row(args, i);
}
}  // namespace serial

namespace parallel {
void gemm(const GemmArgs& args) {
  const auto rows = static_cast<long>(args.m);
  const bool big = args.m * args.n * args.k >= kMinParallelWork && args.m > 1;
#pragma omp parallel for schedule(static) if (big)
  for (long i = 0; i < rows; ++i) gemm_row(args, static_cast<std::size_t>(i));
}
}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace gret::kernels
