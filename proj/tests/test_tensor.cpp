#include <doctest.h>

#include <cmath>
#include <random>

#include "mist/tensor.hpp"
#include "oracles.hpp"

using mist::Graph;
using mist::TapeScope;
using mist::Tensor;

namespace {

Tensor<double> random_param(std::vector<int> shape, std::uint64_t seed) {
  Tensor<double> t = Tensor<double>::param(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.5, 1.5);
  for (auto& v : *t.data) v = dist(rng);
  return t;
}

}  // namespace

TEST_CASE("matmul basics") {
  auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto m = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto out = mist::matmul(eye, m);
  CHECK(*out.data == std::vector<double>{1, 2, 3, 4});

  auto a = Tensor<double>::from({1, 2}, {1, 0});
  auto b = Tensor<double>::from({2, 1}, {0, 1});
  CHECK(mist::matmul(a, b).value() == 0.0);

  CHECK_THROWS_WITH_AS(mist::matmul(m, a), doctest::Contains("[2x2] x [1x2]"), mist::ShapeError);
}

TEST_CASE("matmul gradient matches finite differences") {
  auto a = random_param({3, 4}, 11);
  auto b = random_param({4, 2}, 12);
  Graph<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> scope(tape);
    loss = mist::sum_all(mist::gelu(mist::matmul(a, b)));
  }
  tape.backward(loss);
  auto fd = [&]() {
    mist::NoTapeScope<double> pause;
    auto out = mist::gelu(mist::matmul(a, b));
    double s = 0;
    for (double v : *out.data) s += v;
    return s;
  };
  CHECK(oracles::finite_diff_check(*a.data, *a.grad, fd).max_rel_err < 1e-4);
  CHECK(oracles::finite_diff_check(*b.data, *b.grad, fd).max_rel_err < 1e-4);
}

TEST_CASE("matmul_nt gradient matches finite differences") {
  auto a = random_param({3, 4}, 14);
  auto b = random_param({5, 4}, 15);
  Graph<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> scope(tape);
    loss = mist::sum_all(mist::gelu(mist::matmul_nt(a, b)));
  }
  tape.backward(loss);
  auto fd = [&]() {
    mist::NoTapeScope<double> pause;
    auto out = mist::gelu(mist::matmul_nt(a, b));
    double s = 0;
    for (double v : *out.data) s += v;
    return s;
  };
  CHECK(oracles::finite_diff_check(*a.data, *a.grad, fd).max_rel_err < 1e-4);
  CHECK(oracles::finite_diff_check(*b.data, *b.grad, fd).max_rel_err < 1e-4);
}

TEST_CASE("softmax values and properties") {
  auto x = Tensor<double>::from({1, 2}, {0, 0});
  auto s = mist::softmax_rows(x);
  CHECK((*s.data)[0] == doctest::Approx(0.5));
  CHECK((*s.data)[1] == doctest::Approx(0.5));

  auto sat = mist::softmax_rows(Tensor<double>::from({1, 2}, {1000, 0}));
  CHECK((*sat.data)[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((*sat.data)[1] == doctest::Approx(0.0).epsilon(1e-12));

  auto direct = mist::softmax_rows(Tensor<double>::from({1, 3}, {1, 2, 3}));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK((*direct.data)[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-12));
  CHECK((*direct.data)[2] == doctest::Approx(std::exp(3.0) / z).epsilon(1e-12));

  // rows sum to 1 and are shift invariant
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> dist(-5, 5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> vals(6);
    for (auto& v : vals) v = dist(rng);
    auto t = Tensor<double>::from({2, 3}, vals);
    auto p = mist::softmax_rows(t);
    for (int r = 0; r < 2; ++r) {
      double sum = 0;
      for (int j = 0; j < 3; ++j) sum += (*p.data)[static_cast<std::size_t>(r) * 3 + j];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
    const double shift = dist(rng);
    for (auto& v : vals) v += shift;
    auto p2 = mist::softmax_rows(Tensor<double>::from({2, 3}, vals));
    for (std::size_t i = 0; i < p.numel(); ++i)
      CHECK((*p2.data)[i] == doctest::Approx((*p.data)[i]).epsilon(1e-9));
  }
}

TEST_CASE("layer_norm values and gradient") {
  auto gamma = Tensor<double>::from({3}, {1, 1, 1});
  auto beta = Tensor<double>::from({3}, {0, 0, 0});
  auto out = mist::layer_norm(Tensor<double>::from({1, 3}, {5, 5, 5}), gamma, beta);
  for (double v : *out.data) CHECK(v == doctest::Approx(0.0));

  auto gamma0 = Tensor<double>::from({3}, {0, 0, 0});
  auto beta2 = Tensor<double>::from({3}, {0.3, -0.7, 2.0});
  auto out2 = mist::layer_norm(Tensor<double>::from({2, 3}, {1, 9, -4, 0, 2, 7}), gamma0, beta2);
  CHECK((*out2.data)[0] == doctest::Approx(0.3));
  CHECK((*out2.data)[4] == doctest::Approx(-0.7));

  auto x = random_param({2, 5}, 21);
  auto g = random_param({5}, 22);
  auto b = random_param({5}, 23);
  Graph<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> scope(tape);
    loss = mist::sum_all(mist::gelu(mist::layer_norm(x, g, b)));
  }
  tape.backward(loss);
  auto fd = [&]() {
    mist::NoTapeScope<double> pause;
    auto out3 = mist::gelu(mist::layer_norm(x, g, b));
    double s = 0;
    for (double v : *out3.data) s += v;
    return s;
  };
  CHECK(oracles::finite_diff_check(*x.data, *x.grad, fd).max_rel_err < 1e-4);
  CHECK(oracles::finite_diff_check(*g.data, *g.grad, fd).max_rel_err < 1e-4);
  CHECK(oracles::finite_diff_check(*b.data, *b.grad, fd).max_rel_err < 1e-4);
}

TEST_CASE("gelu values and gradient") {
  auto z = mist::gelu(Tensor<double>::scalar(0.0));
  CHECK(z.value() == doctest::Approx(0.0));
  auto big = mist::gelu(Tensor<double>::scalar(10.0));
  CHECK(big.value() >= 9.99);
  CHECK(big.value() <= 10.0);

  auto x = Tensor<double>::param({1});
  (*x.data)[0] = 0.5;
  Graph<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> scope(tape);
    loss = mist::sum_all(mist::gelu(x));
  }
  tape.backward(loss);
  auto fd = [&]() {
    mist::NoTapeScope<double> pause;
    return mist::gelu(x).value();
  };
  CHECK(oracles::finite_diff_check(*x.data, *x.grad, fd).max_rel_err < 1e-4);
}

TEST_CASE("embedding lookup gathers and scatter-adds") {
  auto table = Tensor<double>::param({4, 2});
  *table.data = {1, 2, 3, 4, 5, 6, 7, 8};
  auto out = mist::embedding_lookup(table, {0});
  CHECK(*out.data == std::vector<double>{1, 2});

  Graph<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> scope(tape);
    loss = mist::sum_all(mist::embedding_lookup(table, {3, 3}));
  }
  tape.backward(loss);
  CHECK((*table.grad)[6] == doctest::Approx(2.0));  // row 3 accumulated twice
  CHECK((*table.grad)[0] == doctest::Approx(0.0));

  table.zero_grad();
  Graph<double> tape2;
  {
    TapeScope<double> scope(tape2);
    loss = mist::sum_all(mist::gelu(mist::embedding_lookup(table, {1, 2, 1})));
  }
  tape2.backward(loss);
  auto fd = [&]() {
    mist::NoTapeScope<double> pause;
    auto o = mist::gelu(mist::embedding_lookup(table, {1, 2, 1}));
    double s = 0;
    for (double v : *o.data) s += v;
    return s;
  };
  CHECK(oracles::finite_diff_check(*table.data, *table.grad, fd).max_rel_err < 1e-4);

  CHECK_THROWS_WITH_AS(mist::embedding_lookup(table, {4}), doctest::Contains("id 4"), mist::ShapeError);
}

TEST_CASE("cross_entropy values, gradient and contract") {
  // huge-margin one-hot: loss ~ 0
  auto logits = Tensor<double>::from({1, 4}, {100, 0, 0, 0});
  CHECK(mist::cross_entropy(logits, {0}, {1}).value() == doctest::Approx(0.0).epsilon(1e-12));

  // uniform over V=8: ln 8
  auto uni = Tensor<double>::from({1, 8}, std::vector<double>(8, 0.25));
  CHECK(mist::cross_entropy(uni, {5}, {1}).value() == doctest::Approx(std::log(8.0)));

  // masked mean over two of three rows, against a direct computation
  auto l = random_param({3, 5}, 31);
  std::vector<int> targets{1, 0, 4};
  std::vector<unsigned char> mask{1, 0, 1};
  double direct = 0;
  for (int i : {0, 2}) {
    double mx = -1e300, denom = 0;
    for (int j = 0; j < 5; ++j) mx = std::max(mx, (*l.data)[static_cast<std::size_t>(i) * 5 + j]);
    for (int j = 0; j < 5; ++j) denom += std::exp((*l.data)[static_cast<std::size_t>(i) * 5 + j] - mx);
    direct += std::log(denom) + mx - (*l.data)[static_cast<std::size_t>(i) * 5 + targets[static_cast<std::size_t>(i)]];
  }
  direct /= 2;
  CHECK(mist::cross_entropy(l, targets, mask).value() == doctest::Approx(direct).epsilon(1e-12));
  CHECK(mist::cross_entropy(l, targets, mask).value() >= 0.0);

  Graph<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> scope(tape);
    loss = mist::cross_entropy(l, targets, mask);
  }
  tape.backward(loss);
  auto fd = [&]() {
    mist::NoTapeScope<double> pause;
    return mist::cross_entropy(l, targets, mask).value();
  };
  CHECK(oracles::finite_diff_check(*l.data, *l.grad, fd).max_rel_err < 1e-4);
  // gradient is zero on unmasked rows
  for (int j = 0; j < 5; ++j) CHECK((*l.grad)[5 + static_cast<std::size_t>(j)] == 0.0);

  CHECK_THROWS_AS(mist::cross_entropy(l, targets, {0, 0, 0}), mist::ContractError);
}

TEST_CASE("backward contracts: seeds, accumulation, zero") {
  auto x = Tensor<double>::param({2, 2});
  *x.data = {1, 2, 3, 4};
  Graph<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> scope(tape);
    loss = mist::sum_all(x);
  }
  tape.backward(loss);
  CHECK(*x.grad == std::vector<double>(4, 1.0));
  CHECK(x.grad_finite());
  // second backward without zeroing: exactly 2x
  tape.backward(loss);
  CHECK(*x.grad == std::vector<double>(4, 2.0));

  x.zero_grad();
  Graph<double> tape2;
  {
    TapeScope<double> scope(tape2);
    loss = mist::sum_all(mist::scale(x, 0.0));
  }
  tape2.backward(loss);
  CHECK(*x.grad == std::vector<double>(4, 0.0));

  Graph<double> tape3;
  Tensor<double> vec;
  {
    TapeScope<double> scope(tape3);
    vec = mist::scale(x, 2.0);
  }
  CHECK_THROWS_AS(tape3.backward(vec), mist::ContractError);
}

TEST_CASE("masked softmax zeroes disallowed entries exactly") {
  auto x = random_param({2, 4}, 41);
  std::vector<unsigned char> mask{1, 1, 0, 1, 0, 0, 0, 0};
  auto p = mist::masked_softmax_rows(x, mask);
  CHECK((*p.data)[2] == 0.0);
  double sum = 0;
  for (int j = 0; j < 4; ++j) sum += (*p.data)[j];
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  // fully-masked row is all zeros, not NaN
  for (int j = 4; j < 8; ++j) CHECK((*p.data)[j] == 0.0);

  Graph<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> scope(tape);
    loss = mist::sum_all(mist::gelu(mist::masked_softmax_rows(x, mask)));
  }
  tape.backward(loss);
  auto fd = [&]() {
    mist::NoTapeScope<double> pause;
    auto o = mist::gelu(mist::masked_softmax_rows(x, mask));
    double s = 0;
    for (double v : *o.data) s += v;
    return s;
  };
  CHECK(oracles::finite_diff_check(*x.data, *x.grad, fd).max_rel_err < 1e-4);
}

TEST_CASE("slice and concat round trips with gradients") {
  auto x = random_param({4, 6}, 51);
  Graph<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> scope(tape);
    auto top = mist::slice_rows(x, 0, 2);
    auto bottom = mist::slice_rows(x, 2, 4);
    auto glued = mist::concat_rows<double>({top, bottom});
    auto left = mist::slice_cols(glued, 0, 3);
    auto right = mist::slice_cols(glued, 3, 6);
    loss = mist::sum_all(mist::gelu(mist::concat_cols<double>({left, right})));
  }
  tape.backward(loss);
  auto fd = [&]() {
    mist::NoTapeScope<double> pause;
    auto o = mist::gelu(x);
    double s = 0;
    for (double v : *o.data) s += v;
    return s;
  };
  CHECK(oracles::finite_diff_check(*x.data, *x.grad, fd).max_rel_err < 1e-4);
}

TEST_CASE("add_rowvec broadcast gradient") {
  auto x = random_param({3, 4}, 61);
  auto b = random_param({4}, 62);
  Graph<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> scope(tape);
    loss = mist::sum_all(mist::gelu(mist::add_rowvec(x, b)));
  }
  tape.backward(loss);
  auto fd = [&]() {
    mist::NoTapeScope<double> pause;
    auto o = mist::gelu(mist::add_rowvec(x, b));
    double s = 0;
    for (double v : *o.data) s += v;
    return s;
  };
  CHECK(oracles::finite_diff_check(*x.data, *x.grad, fd).max_rel_err < 1e-4);
  CHECK(oracles::finite_diff_check(*b.data, *b.grad, fd).max_rel_err < 1e-4);
}
