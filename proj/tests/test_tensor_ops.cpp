#include <doctest.h>

#include "mgnet/losses.hpp"
#include "mgnet/ops.hpp"
#include "mgnet/sgd.hpp"
#include "oracles.hpp"

using namespace mgnet;

namespace {
Context<double> ctx() { return Context<double>{}; }
}  // namespace

TEST_CASE("conv2d: box sum of ones") {
  auto c = ctx();
  auto x = full_tensor<double>({1, 1, 3, 3}, 1.0);
  auto w = full_tensor<double>({1, 1, 3, 3}, 1.0);
  auto b = make_tensor<double>({1, 1, 1, 1});
  auto y = conv2d(c, x, w, b, 1, 1);
  CHECK(y->shape == Shape{1, 1, 3, 3});
  CHECK(y->at(0, 0, 1, 1) == doctest::Approx(9.0));
  CHECK(y->at(0, 0, 0, 0) == doctest::Approx(4.0));
  CHECK(y->at(0, 0, 0, 2) == doctest::Approx(4.0));
  CHECK(y->at(0, 0, 2, 2) == doctest::Approx(4.0));
}

TEST_CASE("conv2d: same-padding shape rule") {
  auto c = ctx();
  Rng rng(3);
  auto x = random_uniform<double>({2, 3, 32, 32}, rng, -1, 1);
  auto w = random_uniform<double>({64, 3, 3, 3}, rng, -1, 1);
  auto b = make_tensor<double>({1, 64, 1, 1});
  auto y = conv2d(c, x, w, b, 1, 1);
  CHECK(y->shape == Shape{2, 64, 32, 32});
}

TEST_CASE("conv2d: agrees with naive loop oracle") {
  auto c = ctx();
  Rng rng(17);
  auto x = random_uniform<double>({1, 2, 5, 5}, rng, -1, 1);
  auto w = random_uniform<double>({3, 2, 3, 3}, rng, -1, 1);
  auto b = random_uniform<double>({1, 3, 1, 1}, rng, -1, 1);
  auto y = conv2d(c, x, w, b, 1, 1);
  auto ref = oracle::conv2d_naive(*x, *w, *b, 1, 1);
  CHECK(oracle::max_abs_diff(*y, *ref) < 1e-12);
}

TEST_CASE("conv2d/maxpool2x/upsample2x: 20 random shapes vs oracles") {
  auto c = ctx();
  Rng rng(99);
  for (int t = 0; t < 20; ++t) {
    const i64 n = rng.uniform_int(1, 2), ci = rng.uniform_int(1, 4), co = rng.uniform_int(1, 4);
    const i64 h = rng.uniform_int(1, 9), w = rng.uniform_int(1, 9);
    const i64 k = 2 * rng.uniform_int(0, 1) + 1;  // 1 or 3
    const i64 pad = k / 2;
    const i64 stride = (h > k && w > k) ? rng.uniform_int(1, 2) : 1;
    auto x = random_uniform<double>({n, ci, h, w}, rng, -2, 2);
    auto wt = random_uniform<double>({co, ci, k, k}, rng, -2, 2);
    auto b = random_uniform<double>({1, co, 1, 1}, rng, -1, 1);
    if ((h + 2 * pad - k) / stride + 1 >= 1 && (w + 2 * pad - k) / stride + 1 >= 1) {
      auto y = conv2d(c, x, wt, b, stride, pad);
      auto ref = oracle::conv2d_naive(*x, *wt, *b, stride, pad);
      CHECK(oracle::max_abs_diff(*y, *ref) < 1e-12);
    }
    auto xe = random_uniform<double>({n, ci, 2 * h, 2 * w}, rng, -2, 2);
    CHECK(oracle::max_abs_diff(*maxpool2x(c, xe), *oracle::maxpool2x_naive(*xe)) == 0.0);
    CHECK(oracle::max_abs_diff(*upsample_nearest2x(c, xe), *oracle::upsample2x_naive(*xe)) == 0.0);
  }
}

TEST_CASE("conv2d: shape mismatch errors name the dimension") {
  auto c = ctx();
  auto x = make_tensor<double>({1, 2, 4, 4});
  auto w = make_tensor<double>({3, 5, 3, 3});
  auto b = make_tensor<double>({1, 3, 1, 1});
  CHECK_THROWS_WITH_AS(conv2d(c, x, w, b, 1, 1), doctest::Contains("channels"), ShapeError);
  auto bad_b = make_tensor<double>({1, 7, 1, 1});
  auto okw = make_tensor<double>({3, 2, 3, 3});
  CHECK_THROWS_WITH_AS(conv2d(c, x, okw, bad_b, 1, 1), doctest::Contains("bias"), ShapeError);
}

TEST_CASE("maxpool2x: window max, tie-break, odd input error") {
  auto c = ctx();
  auto x = tensor_from<double>({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = maxpool2x(c, x);
  CHECK(y->data[0] == 4.0);

  // Constant input: gradient goes to window position (0,0).
  Tape<double> tape;
  auto tc = train_context(tape);
  auto xc = full_tensor<double>({1, 1, 2, 2}, 5.0, true);
  auto yc = maxpool2x(tc, xc);
  backward_scalar(tape, yc);
  CHECK(xc->grad[0] == 1.0);
  CHECK(xc->grad[1] == 0.0);
  CHECK(xc->grad[2] == 0.0);
  CHECK(xc->grad[3] == 0.0);

  auto odd = make_tensor<double>({1, 1, 3, 4});
  CHECK_THROWS_AS(maxpool2x(c, odd), ShapeError);
}

TEST_CASE("upsample_nearest2x: block replication and inverse identities") {
  auto c = ctx();
  auto x = tensor_from<double>({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = upsample_nearest2x(c, x);
  const std::vector<double> want = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  CHECK(y->data == want);

  // Downstream grad of ones -> input grad of fours.
  Tape<double> tape;
  auto tc = train_context(tape);
  auto xg = tensor_from<double>({1, 1, 2, 2}, {1, 2, 3, 4}, true);
  auto yg = upsample_nearest2x(tc, xg);
  auto s = sum_all(tc, yg);
  backward_scalar(tape, s);
  for (double g : xg->grad) CHECK(g == 4.0);

  // maxpool2x(upsample2x(x)) == x for any x.
  Rng rng(5);
  auto xr = random_uniform<double>({2, 3, 4, 4}, rng, -3, 3);
  auto back = maxpool2x(c, upsample_nearest2x(c, xr));
  CHECK(oracle::bit_identical(*back, *xr));
}

TEST_CASE("concat_channels: layout, identity, round-trip split") {
  auto c = ctx();
  Rng rng(7);
  auto a = random_uniform<double>({1, 2, 4, 4}, rng, -1, 1);
  auto b = random_uniform<double>({1, 3, 4, 4}, rng, -1, 1);
  auto y = concat_channels(c, {a, b});
  CHECK(y->shape == Shape{1, 5, 4, 4});
  // Split by offsets recovers the parts elementwise.
  for (i64 ch = 0; ch < 2; ++ch)
    for (i64 i = 0; i < 16; ++i) CHECK(y->data[ch * 16 + i] == a->data[ch * 16 + i]);
  for (i64 ch = 0; ch < 3; ++ch)
    for (i64 i = 0; i < 16; ++i) CHECK(y->data[(2 + ch) * 16 + i] == b->data[ch * 16 + i]);

  CHECK(concat_channels(c, {a}) == a);  // single part passes through

  auto bad = make_tensor<double>({1, 1, 8, 4});
  CHECK_THROWS_WITH_AS(concat_channels(c, {a, bad}), doctest::Contains("part 1"), ShapeError);
}

TEST_CASE("batchnorm: train-mode statistics and eval path") {
  Tape<double> tape;
  auto c = train_context(tape);
  Rng rng(11);
  auto x = random_uniform<double>({2, 3, 4, 4}, rng, -4, 4);
  BatchNorm<double> bn(3);
  auto y = batchnorm(c, x, bn);
  const i64 hw = 16, n = 2;
  for (i64 ch = 0; ch < 3; ++ch) {
    double mean = 0, var = 0;
    for (i64 ni = 0; ni < n; ++ni)
      for (i64 i = 0; i < hw; ++i) mean += y->data[(ni * 3 + ch) * hw + i];
    mean /= static_cast<double>(n * hw);
    for (i64 ni = 0; ni < n; ++ni)
      for (i64 i = 0; i < hw; ++i) {
        double d = y->data[(ni * 3 + ch) * hw + i] - mean;
        var += d * d;
      }
    var /= static_cast<double>(n * hw);
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }

  // Already standardized input with gamma=1, beta=0 passes through (up to eps).
  Context<double> tc2;
  tc2.mode = Mode::kTrain;
  auto xs = make_tensor<double>({1, 1, 2, 2});
  xs->data = {-1.3416407864998738, -0.4472135954999579, 0.4472135954999579, 1.3416407864998738};
  BatchNorm<double> bn2(1);
  auto y2 = batchnorm(tc2, xs, bn2);
  for (i64 i = 0; i < 4; ++i) CHECK(y2->data[i] == doctest::Approx(xs->data[i]).epsilon(1e-4));

  BatchNorm<double> bn3(4);
  auto wrong = make_tensor<double>({1, 3, 2, 2});
  Context<double> ec;
  CHECK_THROWS_WITH_AS(batchnorm(ec, wrong, bn3), doctest::Contains("channels"), ShapeError);
}

TEST_CASE("batchnorm: running stats update and eval normalization") {
  Tape<double> tape;
  auto c = train_context(tape);
  auto x = tensor_from<double>({1, 1, 2, 2}, {1, 2, 3, 4});
  BatchNorm<double> bn(1);
  batchnorm(c, x, bn);
  // mean 2.5, biased var 1.25; running = 0.9*init + 0.1*batch
  CHECK(bn.running_mean->data[0] == doctest::Approx(0.25));
  CHECK(bn.running_var->data[0] == doctest::Approx(0.9 + 0.125));

  Context<double> ev;  // eval mode
  auto ye = batchnorm(ev, x, bn);
  const double is = 1.0 / std::sqrt(1.025 + 1e-5);
  CHECK(ye->data[0] == doctest::Approx((1 - 0.25) * is));
}

TEST_CASE("losses: closed-form values") {
  auto c = ctx();
  // Uniform logits over K classes -> ln K.
  for (i64 K : {2, 5, 11}) {
    auto z = full_tensor<double>({3, K, 1, 1}, 0.7);
    auto loss = softmax_cross_entropy(c, z, {0, static_cast<int>(K - 1), 1});
    CHECK(loss->data[0] == doctest::Approx(std::log(static_cast<double>(K))).epsilon(1e-12));
  }
  // Zero logits vs target 0.5 -> ln 2 per pixel.
  auto z = make_tensor<double>({1, 1, 4, 4});
  auto t = full_tensor<double>({1, 1, 4, 4}, 0.5);
  CHECK(sigmoid_bce(c, z, t)->data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // Per-pixel CE with uniform logits -> ln K.
  auto zp = make_tensor<double>({2, 11, 4, 4});
  auto lp = full_tensor<double>({2, 1, 4, 4}, 10.0);
  CHECK(pixel_softmax_cross_entropy(c, zp, lp)->data[0] ==
        doctest::Approx(std::log(11.0)).epsilon(1e-12));

  CHECK_THROWS_AS(softmax_cross_entropy(c, z, {9}), ShapeError);
  auto bad_label = full_tensor<double>({2, 1, 4, 4}, 11.0);
  CHECK_THROWS_AS(pixel_softmax_cross_entropy(c, zp, bad_label), ShapeError);
  auto bad_target = full_tensor<double>({1, 1, 4, 4}, 1.5);
  CHECK_THROWS_AS(sigmoid_bce(c, z, bad_target), ShapeError);
}

TEST_CASE("sgd_step: update rule") {
  // Zero grad, zero weight decay: params unchanged.
  Tensor<double> p({1, 1, 1, 1});
  p.data[0] = 1.0;
  std::vector<double> g = {0.0}, v;
  sgd_step(p, g, v, 0.1, 0.0, 0.9);
  CHECK(p.data[0] == 1.0);

  // p=1, grad=1, no decay, no momentum, lr=0.1 -> 0.9.
  p.data[0] = 1.0;
  g[0] = 1.0;
  v.clear();
  sgd_step(p, g, v, 0.1, 0.0, 0.0);
  CHECK(p.data[0] == doctest::Approx(0.9));

  // Pure decay shrinks by (1 - lr*wd) per step.
  p.data[0] = 1.0;
  g[0] = 0.0;
  v.clear();
  sgd_step(p, g, v, 0.1, 0.0005, 0.0);
  CHECK(p.data[0] == doctest::Approx(1.0 * (1 - 0.1 * 0.0005)));

  CHECK_THROWS_AS(sgd_step(p, g, v, -0.1, 0.0, 0.0), ConfigError);
}

TEST_CASE("determinism: identical seeds give bit-identical forward results") {
  auto run = [] {
    Rng rng(42);
    auto x = random_uniform<double>({2, 3, 8, 8}, rng, -1, 1);
    auto w = random_normal<double>({4, 3, 3, 3}, rng, 0.0, 0.1);
    auto b = random_uniform<double>({1, 4, 1, 1}, rng, -0.1, 0.1);
    Context<double> c;
    auto y = conv2d(c, x, w, b, 1, 1);
    auto p = maxpool2x(c, y);
    auto u = upsample_nearest2x(c, p);
    return u->data;
  };
  CHECK(run() == run());
}

TEST_CASE("mac counter: conv and linear instrumentation") {
  Context<double> c;
  u64 macs = 0;
  c.mac_counter = &macs;
  Rng rng(1);
  auto x = random_uniform<double>({2, 3, 8, 8}, rng, -1, 1);
  auto w = random_uniform<double>({5, 3, 3, 3}, rng, -1, 1);
  auto b = make_tensor<double>({1, 5, 1, 1});
  conv2d(c, x, w, b, 1, 1);
  CHECK(macs == 2ull * 5 * 3 * 9 * 8 * 8);
  macs = 0;
  auto xf = random_uniform<double>({2, 7, 1, 1}, rng, -1, 1);
  auto wf = random_uniform<double>({4, 7, 1, 1}, rng, -1, 1);
  auto bf = make_tensor<double>({1, 4, 1, 1});
  linear(c, xf, wf, bf);
  CHECK(macs == 2ull * 7 * 4);
}
