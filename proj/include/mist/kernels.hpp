#pragma once

namespace mist::kernels {

// Matrix kernels behind every tensor op. Each has an OpenMP-parallel path
// over output rows and a serial reference path; both call the same per-row
// routines, so results are bitwise identical and the serial variant stays a
// valid oracle for the parallel one (see tests/test_kernels.cpp and
// tools/bench_kernels.cpp).
//
// Row-major layouts. Output c is always [m x n], reduction dim is k:
//   nn: a[m x k] * b[k x n]
//   nt: a[m x k] * b[n x k]^T
//   tn: a[k x m]^T * b[k x n]
// With accumulate=true the product is added onto c instead of overwriting.

bool& parallel_enabled();

template <class S>
void matmul_nn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate = false);
template <class S>
void matmul_nt(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate = false);
template <class S>
void matmul_tn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate = false);

// Serial reference implementations.
template <class S>
void matmul_nn_serial(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate = false);
template <class S>
void matmul_nt_serial(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate = false);
template <class S>
void matmul_tn_serial(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate = false);

}  // namespace mist::kernels
