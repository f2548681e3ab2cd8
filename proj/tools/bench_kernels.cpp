// Benchmark comparing the serial reference kernels against the OpenMP
// paths, plus a full encoder forward in both modes.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <omp.h>

#include "mist/kernels.hpp"
#include "mist/model.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count() / reps;
}

void bench_matmul(int m, int k, int n, int reps) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> dist(-1.f, 1.f);
  std::vector<float> a(static_cast<std::size_t>(m) * k), b(static_cast<std::size_t>(k) * n),
      c(static_cast<std::size_t>(m) * n);
  for (auto& v : a) v = dist(rng);
  for (auto& v : b) v = dist(rng);

  const double serial_ms =
      time_ms([&] { mist::kernels::matmul_nn_serial(a.data(), b.data(), c.data(), m, k, n); }, reps);
  const double parallel_ms =
      time_ms([&] { mist::kernels::matmul_nn(a.data(), b.data(), c.data(), m, k, n); }, reps);
  const double gflop = 2.0 * m * k * n / 1e9;
  std::printf("matmul_nn %4dx%4dx%4d  serial %8.3f ms (%6.2f GF/s)  omp %8.3f ms (%6.2f GF/s)  speedup %.2fx\n",
              m, k, n, serial_ms, gflop / serial_ms * 1e3, parallel_ms, gflop / parallel_ms * 1e3,
              serial_ms / parallel_ms);
}

void bench_encode(int reps) {
  mist::ModelConfig cfg = mist::ModelConfig::desk();
  cfg.vocab_size = 64;
  auto model = mist::EncoderModel<float>::init(cfg, 123);
  mist::TokenSeq x, y;
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> tok(mist::kNumSpecialTokens, cfg.vocab_size - 1);
  for (int i = 0; i < 24; ++i) x.push_back(tok(rng));
  for (int i = 0; i < 12; ++i) y.push_back(tok(rng));
  mist::PackedInput in = mist::pack_training_input(x, y, std::vector<unsigned char>(y.size(), 0), nullptr,
                                                   cfg.max_positions);

  mist::kernels::parallel_enabled() = false;
  const double serial_ms = time_ms([&] { mist::encode(model, in); }, reps);
  mist::kernels::parallel_enabled() = true;
  const double parallel_ms = time_ms([&] { mist::encode(model, in); }, reps);
  std::printf("encode (desk profile, n=%d)   serial %8.3f ms               omp %8.3f ms               speedup %.2fx\n",
              in.n(), serial_ms, parallel_ms, serial_ms / parallel_ms);
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 20;
  if (argc > 1) reps = std::stoi(argv[1]);
  std::printf("threads: %d, reps: %d\n", omp_get_max_threads(), reps);
  bench_matmul(64, 64, 64, reps * 10);
  bench_matmul(33, 64, 8192, reps);
  bench_matmul(256, 256, 256, reps);
  bench_matmul(512, 512, 512, std::max(1, reps / 4));
  bench_encode(reps);
  return 0;
}
