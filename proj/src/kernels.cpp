#include "mist/kernels.hpp"

#include <algorithm>

#include <omp.h>

namespace mist::kernels {

namespace {

// Work threshold below which threading costs more than it saves. With few
// cores the fork/join barrier eats the gain on mid-sized mats, so the bar
// sits higher there.
double parallel_min_work() {
  static const double threshold = omp_get_max_threads() >= 4 ? 96.0 * 1024.0 : 512.0 * 1024.0;
  return threshold;
}

// Output rows are processed in tiles so the b panel is streamed once per
// tile instead of once per row. Tiling only regroups work across output
// elements; each element's reduction order over k is unchanged, so tiled,
// serial and parallel paths agree bitwise.
constexpr int kRowTile = 8;

template <class S>
void nn_tile(const S* a, const S* b, S* c, int i0, int i1, int k, int n, bool accumulate) {
  if (!accumulate)
    for (int i = i0; i < i1; ++i)
      for (int j = 0; j < n; ++j) c[static_cast<long>(i) * n + j] = S(0);
  for (int kk = 0; kk < k; ++kk) {
    const S* brow = b + static_cast<long>(kk) * n;
    for (int i = i0; i < i1; ++i) {
      const S av = a[static_cast<long>(i) * k + kk];
      S* crow = c + static_cast<long>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class S>
void nt_tile(const S* a, const S* b, S* c, int i0, int i1, int k, int n, bool accumulate) {
  for (int j = 0; j < n; ++j) {
    const S* brow = b + static_cast<long>(j) * k;
    for (int i = i0; i < i1; ++i) {
      const S* arow = a + static_cast<long>(i) * k;
      S acc = S(0);
      for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      S* cell = c + static_cast<long>(i) * n + j;
      *cell = accumulate ? *cell + acc : acc;
    }
  }
}

template <class S>
void tn_tile(const S* a, const S* b, S* c, int i0, int i1, int m, int k, int n, bool accumulate) {
  if (!accumulate)
    for (int i = i0; i < i1; ++i)
      for (int j = 0; j < n; ++j) c[static_cast<long>(i) * n + j] = S(0);
  for (int kk = 0; kk < k; ++kk) {
    const S* brow = b + static_cast<long>(kk) * n;
    const S* acol = a + static_cast<long>(kk) * m;
    for (int i = i0; i < i1; ++i) {
      const S av = acol[i];
      S* crow = c + static_cast<long>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline bool use_parallel(int m, int k, int n) {
  return parallel_enabled() && m > kRowTile &&
         static_cast<double>(m) * k * n >= parallel_min_work();
}

inline int n_tiles(int m) { return (m + kRowTile - 1) / kRowTile; }

}  // namespace

bool& parallel_enabled() {
  static bool enabled = true;
  return enabled;
}

template <class S>
void matmul_nn_serial(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
  for (int i0 = 0; i0 < m; i0 += kRowTile)
    nn_tile(a, b, c, i0, std::min(i0 + kRowTile, m), k, n, accumulate);
}

template <class S>
void matmul_nt_serial(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
  for (int i0 = 0; i0 < m; i0 += kRowTile)
    nt_tile(a, b, c, i0, std::min(i0 + kRowTile, m), k, n, accumulate);
}

template <class S>
void matmul_tn_serial(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
  for (int i0 = 0; i0 < m; i0 += kRowTile)
    tn_tile(a, b, c, i0, std::min(i0 + kRowTile, m), m, k, n, accumulate);
}

template <class S>
void matmul_nn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
  if (!use_parallel(m, k, n)) {
    matmul_nn_serial(a, b, c, m, k, n, accumulate);
    return;
  }
#pragma omp parallel for schedule(static)
  for (int t = 0; t < n_tiles(m); ++t)
    nn_tile(a, b, c, t * kRowTile, std::min((t + 1) * kRowTile, m), k, n, accumulate);
}

template <class S>
void matmul_nt(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
  if (!use_parallel(m, k, n)) {
    matmul_nt_serial(a, b, c, m, k, n, accumulate);
    return;
  }
#pragma omp parallel for schedule(static)
  for (int t = 0; t < n_tiles(m); ++t)
    nt_tile(a, b, c, t * kRowTile, std::min((t + 1) * kRowTile, m), k, n, accumulate);
}

template <class S>
void matmul_tn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
  if (!use_parallel(m, k, n)) {
    matmul_tn_serial(a, b, c, m, k, n, accumulate);
    return;
  }
#pragma omp parallel for schedule(static)
  for (int t = 0; t < n_tiles(m); ++t)
    tn_tile(a, b, c, t * kRowTile, std::min((t + 1) * kRowTile, m), m, k, n, accumulate);
}

template void matmul_nn<float>(const float*, const float*, float*, int, int, int, bool);
template void matmul_nn<double>(const double*, const double*, double*, int, int, int, bool);
template void matmul_nt<float>(const float*, const float*, float*, int, int, int, bool);
template void matmul_nt<double>(const double*, const double*, double*, int, int, int, bool);
template void matmul_tn<float>(const float*, const float*, float*, int, int, int, bool);
template void matmul_tn<double>(const double*, const double*, double*, int, int, int, bool);
template void matmul_nn_serial<float>(const float*, const float*, float*, int, int, int, bool);
template void matmul_nn_serial<double>(const double*, const double*, double*, int, int, int, bool);
template void matmul_nt_serial<float>(const float*, const float*, float*, int, int, int, bool);
template void matmul_nt_serial<double>(const double*, const double*, double*, int, int, int, bool);
template void matmul_tn_serial<float>(const float*, const float*, float*, int, int, int, bool);
template void matmul_tn_serial<double>(const double*, const double*, double*, int, int, int, bool);

}  // namespace mist::kernels
