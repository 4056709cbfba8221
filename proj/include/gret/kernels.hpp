// SPDX-License-Identifier: Apache-2.0
//
// Dense GEMM kernels. `serial` is the reference; `parallel` splits output rows
// across OpenMP threads. Both accumulate each output element over the inner
// dimension in the same order, so their results are bitwise identical.

#pragma once

#include <cstddef>

namespace gret::kernels {

enum class Trans { kNo, kYes };

/// C[m,n] (+)= op(A)[m,k] * op(B)[k,n], row-major. op(A) is A[m,k] or A[k,m]ᵀ.
struct GemmArgs {
  Trans trans_a = Trans::kNo;
  Trans trans_b = Trans::kNo;
  std::size_t m = 0, n = 0, k = 0;
  const double* a = nullptr;
  const double* b = nullptr;
  double* c = nullptr;
  bool accumulate = false;
};

namespace serial {
void gemm(const GemmArgs& args);
}

namespace parallel {
/// Work (m*n*k) below this runs on the calling thread.
inline constexpr std::size_t kMinParallelWork = 1 << 15;
void gemm(const GemmArgs& args);
}  // namespace parallel

inline void gemm(const GemmArgs& args) { parallel::gemm(args); }

int max_threads();

}  // namespace gret::kernels
