#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include "s2s/gradcheck.hpp"
#include "s2s/nn.hpp"
#include "s2s/rng.hpp"
#include "s2s/tensor.hpp"

using namespace s2s;
using ad::IndexArray;
using ad::Tensor;

namespace {

Tensor random_tensor(ad::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("linear forward matches hand values") {
  Tensor x = Tensor::of({1, 2}, {1, 2});
  Tensor w = Tensor::of({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::of({2}, {0, 0});
  Tensor y = ad::linear(x, w, b);
  CHECK(y.data()[0] == 1.0);
  CHECK(y.data()[1] == 2.0);

  Tensor x0 = Tensor::of({1, 2}, {0, 0});
  Tensor w2 = Tensor::of({2, 2}, {5, -3, 2, 7});
  Tensor b2 = Tensor::of({2}, {3, 4});
  Tensor y2 = ad::linear(x0, w2, b2);
  CHECK(y2.data()[0] == 3.0);
  CHECK(y2.data()[1] == 4.0);
}

TEST_CASE("linear shape mismatch names both shapes") {
  Tensor x({3, 2});
  Tensor w({3, 4});
  Tensor b({4});
  try {
    ad::linear(x, w, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[3, 2]") != std::string::npos);
    CHECK(msg.find("[3, 4]") != std::string::npos);
  }
}

TEST_CASE("linear gradient matches finite differences") {
  Rng rng(11);
  Tensor x = random_tensor({3, 2}, rng);
  Tensor w = random_tensor({2, 2}, rng);
  Tensor b = random_tensor({2}, rng);
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  auto fwd = [&] { return ad::sum_all(ad::linear(x, w, b)); };
  auto res = ad::finite_difference_check({x, w, b}, [&] { return fwd().item(); }, fwd);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("relu basics") {
  Tensor x = Tensor::of({3}, {-1, 0, 2});
  Tensor y = ad::relu(x);
  CHECK(y.data()[0] == 0.0);
  CHECK(y.data()[1] == 0.0);
  CHECK(y.data()[2] == 2.0);

  // all-negative input: zero output, zero gradient
  Tensor xn = Tensor::of({2, 2}, {-1, -2, -3, -4}, true);
  ad::Tape tape;
  {
    ad::TapeScope scope(tape);
    Tensor loss = ad::sum_all(ad::relu(xn));
    tape.backward(loss);
  }
  REQUIRE(xn.has_grad());
  for (int64_t i = 0; i < 4; ++i) CHECK(xn.grad()[i] == 0.0);
}

TEST_CASE("relu gradient away from the kink") {
  Rng rng(12);
  Tensor x = random_tensor({4, 5}, rng);
  for (int64_t i = 0; i < x.numel(); ++i) {
    if (std::abs(x.data()[i]) < 1e-3) x.data()[i] += 0.01;
  }
  x.set_requires_grad(true);
  auto fwd = [&] { return ad::sum_all(ad::relu(x)); };
  auto res = ad::finite_difference_check({x}, [&] { return fwd().item(); }, fwd);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("channel_norm hand values") {
  Tensor g1 = Tensor::full({3}, 1.0);
  Tensor b1 = Tensor({3});
  Tensor x = Tensor::of({1, 3}, {5, 5, 5});
  Tensor y = ad::channel_norm(x, g1, b1, 1e-5);
  for (int64_t i = 0; i < 3; ++i) CHECK(y.data()[i] == 0.0);

  Tensor g2 = Tensor::full({2}, 1.0);
  Tensor b2 = Tensor({2});
  Tensor x2 = Tensor::of({1, 2}, {1, 3});
  Tensor y2 = ad::channel_norm(x2, g2, b2, 0.0);
  CHECK(y2.data()[0] == Catch::Approx(-1.0).margin(1e-12));
  CHECK(y2.data()[1] == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("channel_norm gradient matches finite differences") {
  Rng rng(13);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor gamma = random_tensor({3}, rng, 0.5, 1.5);
  Tensor beta = random_tensor({3}, rng);
  x.set_requires_grad(true);
  gamma.set_requires_grad(true);
  beta.set_requires_grad(true);
  // weighted sum so the gradient is not uniform across columns
  Rng wr(14);
  Tensor mix = random_tensor({3, 1}, wr);
  Tensor mb = Tensor({1});
  auto fwd = [&] {
    return ad::sum_all(ad::linear(ad::channel_norm(x, gamma, beta, 1e-5), mix, mb));
  };
  auto res = ad::finite_difference_check({x, gamma, beta}, [&] { return fwd().item(); }, fwd);
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("segment_max forward, tie-break and empty segment") {
  Tensor x = Tensor::of({3, 1}, {1, 3, 2});
  IndexArray seg = {0, 0, 1};
  Tensor y = ad::segment_max(x, seg, 2);
  CHECK(y.data()[0] == 3.0);
  CHECK(y.data()[1] == 2.0);

  // ties route gradient to the lowest row index
  Tensor xt = Tensor::of({3, 1}, {7, 7, 7}, true);
  IndexArray seg1 = {0, 0, 0};
  ad::Tape tape;
  {
    ad::TapeScope scope(tape);
    Tensor loss = ad::sum_all(ad::segment_max(xt, seg1, 1));
    tape.backward(loss);
  }
  CHECK(xt.grad()[0] == 1.0);
  CHECK(xt.grad()[1] == 0.0);
  CHECK(xt.grad()[2] == 0.0);

  Tensor xe = Tensor::of({2, 1}, {1, 2});
  IndexArray sege = {0, 0};
  CHECK_THROWS_AS(ad::segment_max(xe, sege, 2), Error);
}

TEST_CASE("segment_max gradient matches finite differences away from ties") {
  Rng rng(15);
  Tensor x = random_tensor({6, 2}, rng);
  // spread values so the central difference never crosses a tie
  for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] += 0.001 * static_cast<double>(i);
  x.set_requires_grad(true);
  IndexArray seg = {0, 1, 0, 1, 2, 2};
  auto fwd = [&] { return ad::sum_all(ad::segment_max(x, seg, 3)); };
  auto res = ad::finite_difference_check({x}, [&] { return fwd().item(); }, fwd);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("segment_mean matches brute force") {
  Tensor x = Tensor::of({2, 1}, {2, 4});
  IndexArray seg = {0, 0};
  Tensor y = ad::segment_mean(x, seg, 1);
  CHECK(y.data()[0] == 3.0);

  // each point its own segment: identity
  Rng rng(16);
  Tensor xi = random_tensor({5, 3}, rng);
  IndexArray segi = {0, 1, 2, 3, 4};
  Tensor yi = ad::segment_mean(xi, segi, 5);
  for (int64_t i = 0; i < xi.numel(); ++i) CHECK(yi.data()[i] == xi.data()[i]);

  // random 50x4 vs explicit sum/count
  Tensor xr = random_tensor({50, 4}, rng);
  IndexArray segr(50);
  int64_t S = 7;
  for (int64_t i = 0; i < 50; ++i) segr[static_cast<size_t>(i)] = static_cast<int64_t>(rng.uniform_index(7));
  // make sure no segment is empty
  for (int64_t s = 0; s < S; ++s) segr[static_cast<size_t>(s)] = s;
  Tensor yr = ad::segment_mean(xr, segr, S);
  std::vector<double> sum(static_cast<size_t>(S * 4), 0.0);
  std::vector<int64_t> cnt(static_cast<size_t>(S), 0);
  for (int64_t i = 0; i < 50; ++i) {
    int64_t s = segr[static_cast<size_t>(i)];
    cnt[static_cast<size_t>(s)]++;
    for (int64_t j = 0; j < 4; ++j) sum[static_cast<size_t>(s * 4 + j)] += xr.data()[i * 4 + j];
  }
  for (int64_t s = 0; s < S; ++s)
    for (int64_t j = 0; j < 4; ++j)
      CHECK(yr.data()[s * 4 + j] == sum[static_cast<size_t>(s * 4 + j)] / static_cast<double>(cnt[static_cast<size_t>(s)]));
}

TEST_CASE("segment_mean gradient matches finite differences") {
  Rng rng(17);
  Tensor x = random_tensor({6, 2}, rng);
  x.set_requires_grad(true);
  IndexArray seg = {0, 0, 1, 1, 1, 0};
  auto fwd = [&] { return ad::sum_all(ad::segment_mean(x, seg, 2)); };
  auto res = ad::finite_difference_check({x}, [&] { return fwd().item(); }, fwd);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("gather_rows duplication and scatter-add backward") {
  Tensor x = Tensor::of({2, 2}, {1, 2, 3, 4}, true);
  IndexArray idx = {0, 0, 1};
  ad::Tape tape;
  Tensor y;
  {
    ad::TapeScope scope(tape);
    y = ad::gather_rows(x, idx);
    // loss weights each output row differently
    Tensor w = Tensor::of({2, 1}, {1, 1});
    Tensor b = Tensor({1});
    Tensor rowsum = ad::linear(y, w, b);  // 3x1
    Tensor weights = Tensor::of({1, 3}, {1, 10, 100});
    Tensor loss = ad::linear(weights, rowsum, Tensor({1}));  // weighted row sum
    tape.backward(ad::sum_all(loss));
  }
  CHECK(y.rows() == 3);
  CHECK(y.data()[0] == 1.0);
  CHECK(y.data()[2] == 1.0);
  CHECK(y.data()[4] == 3.0);
  // grad on source row 0 accumulates both duplicated output rows: 1 + 10
  CHECK(x.grad()[0] == 11.0);
  CHECK(x.grad()[1] == 11.0);
  CHECK(x.grad()[2] == 100.0);

  // identity permutation
  IndexArray ident = {0, 1};
  Tensor yi = ad::gather_rows(x, ident);
  for (int64_t i = 0; i < 4; ++i) CHECK(yi.data()[i] == x.data()[i]);

  IndexArray bad = {2};
  CHECK_THROWS_AS(ad::gather_rows(x, bad), Error);
}

TEST_CASE("gather_rows gradient matches finite differences") {
  Rng rng(18);
  Tensor x = random_tensor({4, 3}, rng);
  x.set_requires_grad(true);
  IndexArray idx = {0, 2, 2, 3, 1, 0};
  Rng wr(19);
  Tensor mix = random_tensor({3, 1}, wr);
  Tensor mb = Tensor({1});
  auto fwd = [&] { return ad::sum_all(ad::linear(ad::gather_rows(x, idx), mix, mb)); };
  auto res = ad::finite_difference_check({x}, [&] { return fwd().item(); }, fwd);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("concat_cols forward and gradient split") {
  Tensor a = Tensor::of({1, 1}, {1});
  Tensor b = Tensor::of({1, 1}, {2});
  Tensor y = ad::concat_cols({a, b});
  CHECK(y.cols() == 2);
  CHECK(y.data()[0] == 1.0);
  CHECK(y.data()[1] == 2.0);

  Tensor single = ad::concat_cols({a});
  CHECK(single.data()[0] == 1.0);

  Rng rng(20);
  Tensor x1 = random_tensor({3, 2}, rng);
  Tensor x2 = random_tensor({3, 4}, rng);
  x1.set_requires_grad(true);
  x2.set_requires_grad(true);
  Tensor mix = random_tensor({6, 1}, rng);
  Tensor mb = Tensor({1});
  auto fwd = [&] { return ad::sum_all(ad::linear(ad::concat_cols({x1, x2}), mix, mb)); };
  auto res = ad::finite_difference_check({x1, x2}, [&] { return fwd().item(); }, fwd);
  CHECK(res.max_rel_err < 1e-6);

  Tensor rows4({4, 2});
  CHECK_THROWS_AS(ad::concat_cols({x1, rows4}), ShapeError);
}

TEST_CASE("l2_normalize_rows hand values and gradient") {
  Tensor x = Tensor::of({1, 2}, {3, 4});
  Tensor y = ad::l2_normalize_rows(x);
  CHECK(y.data()[0] == Catch::Approx(0.6).margin(1e-15));
  CHECK(y.data()[1] == Catch::Approx(0.8).margin(1e-15));

  Tensor z = Tensor::of({1, 3}, {0, 0, 0});
  Tensor yz = ad::l2_normalize_rows(z, 1e-12);
  for (int64_t i = 0; i < 3; ++i) CHECK(yz.data()[i] == 0.0);

  Rng rng(21);
  Tensor xr = random_tensor({4, 3}, rng, 0.2, 1.0);  // norms comfortably above 0.1
  xr.set_requires_grad(true);
  Tensor mix = random_tensor({3, 1}, rng);
  Tensor mb = Tensor({1});
  auto fwd = [&] { return ad::sum_all(ad::linear(ad::l2_normalize_rows(xr), mix, mb)); };
  auto res = ad::finite_difference_check({xr}, [&] { return fwd().item(); }, fwd);
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("softmax_cross_entropy values and analytic gradient") {
  // uniform logits: loss = log(K)
  Tensor u = Tensor::full({3, 5}, 0.7);
  IndexArray t = {0, 3, 4};
  Tensor lu = ad::softmax_cross_entropy(u, t);
  CHECK(lu.item() == Catch::Approx(std::log(5.0)).margin(1e-14));

  // closed form log(1 + e^{-20})
  Tensor l2 = Tensor::of({1, 2}, {10, -10});
  IndexArray t0 = {0};
  Tensor v = ad::softmax_cross_entropy(l2, t0);
  CHECK(v.item() == Catch::Approx(std::log1p(std::exp(-20.0))).margin(1e-15));

  // gradient equals (softmax - onehot) / N
  Rng rng(22);
  Tensor logits = random_tensor({4, 3}, rng, -2, 2);
  logits.set_requires_grad(true);
  IndexArray tg = {2, 0, 1, 1};
  ad::Tape tape;
  {
    ad::TapeScope scope(tape);
    Tensor loss = ad::softmax_cross_entropy(logits, tg);
    tape.backward(loss);
  }
  for (int64_t i = 0; i < 4; ++i) {
    double mx = logits.data()[i * 3];
    for (int64_t j = 1; j < 3; ++j) mx = std::max(mx, logits.data()[i * 3 + j]);
    double sum = 0.0;
    for (int64_t j = 0; j < 3; ++j) sum += std::exp(logits.data()[i * 3 + j] - mx);
    for (int64_t j = 0; j < 3; ++j) {
      double p = std::exp(logits.data()[i * 3 + j] - mx) / sum;
      double expect = (p - (tg[static_cast<size_t>(i)] == j ? 1.0 : 0.0)) / 4.0;
      CHECK(std::abs(logits.grad()[i * 3 + j] - expect) < 1e-10);
    }
  }

  IndexArray bad = {5};
  Tensor one({1, 3});
  CHECK_THROWS_AS(ad::softmax_cross_entropy(one, bad), Error);
}

TEST_CASE("matmul_nt, add, scale, sum_all gradients") {
  Rng rng(23);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({5, 4}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  auto fwd = [&] { return ad::sum_all(ad::scale(ad::matmul_nt(a, b), 0.37)); };
  auto res = ad::finite_difference_check({a, b}, [&] { return fwd().item(); }, fwd);
  CHECK(res.max_rel_err < 1e-6);

  Tensor c = random_tensor({3, 3}, rng);
  Tensor d = random_tensor({3, 3}, rng);
  c.set_requires_grad(true);
  d.set_requires_grad(true);
  auto fwd2 = [&] { return ad::sum_all(ad::add(ad::scale(c, 2.0), d)); };
  auto res2 = ad::finite_difference_check({c, d}, [&] { return fwd2().item(); }, fwd2);
  CHECK(res2.max_rel_err < 1e-6);
}

TEST_CASE("composed MLP with cross entropy matches finite differences") {
  Rng rng(24);
  nn::ParamStore store;
  nn::Mlp mlp = nn::make_mlp(store, "mlp", 4, {8, 8}, rng, true);
  nn::Linear head = nn::make_linear(store, "head", 8, 3, rng);
  Tensor x = random_tensor({6, 4}, rng);
  IndexArray targets = {0, 1, 2, 0, 1, 2};
  auto fwd = [&] { return ad::softmax_cross_entropy(head(mlp(x)), targets); };
  std::vector<Tensor> inputs;
  for (auto& p : store.params()) inputs.push_back(p.tensor);
  auto res = ad::finite_difference_check(inputs, [&] { return fwd().item(); }, fwd);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("backward is deterministic across identical forward passes") {
  Rng rng(25);
  auto run = [&](uint64_t seed) {
    Rng r(seed);
    nn::ParamStore store;
    nn::Mlp mlp = nn::make_mlp(store, "mlp", 3, {16, 8}, r, true);
    nn::Linear head = nn::make_linear(store, "head", 8, 4, r);
    Rng xr(seed + 1);
    Tensor x = random_tensor({32, 3}, xr);
    IndexArray targets(32);
    for (size_t i = 0; i < 32; ++i) targets[i] = static_cast<int64_t>(i % 4);
    ad::Tape tape;
    {
      ad::TapeScope scope(tape);
      Tensor loss = ad::softmax_cross_entropy(head(mlp(x)), targets);
      tape.backward(loss);
    }
    std::vector<double> grads;
    for (auto& p : store.params())
      grads.insert(grads.end(), p.tensor.grad(), p.tensor.grad() + p.tensor.numel());
    return grads;
  };
  auto g1 = run(99);
  auto g2 = run(99);
  REQUIRE(g1.size() == g2.size());
  CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("every reachable requires_grad tensor gets a grad buffer") {
  Tensor x = Tensor::of({2, 2}, {-1, -2, -3, -4}, true);  // relu kills the path
  Tensor w = Tensor::of({2, 1}, {1, 1}, true);
  Tensor b = Tensor::of({1}, {0}, true);
  ad::Tape tape;
  {
    ad::TapeScope scope(tape);
    Tensor loss = ad::sum_all(ad::linear(ad::relu(x), w, b));
    tape.backward(loss);
  }
  CHECK(x.has_grad());
  CHECK(w.has_grad());
  CHECK(b.has_grad());
}
