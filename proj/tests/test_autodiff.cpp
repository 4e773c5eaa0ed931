#include <doctest.h>

#include "mgnet/gradcheck.hpp"
#include "mgnet/losses.hpp"
#include "mgnet/ops.hpp"

using namespace mgnet;

namespace {

constexpr double kEps = 1e-5;

TensorPtr<double> rand_t(Shape s, u64 seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  return random_uniform<double>(s, rng, lo, hi);
}

}  // namespace

TEST_CASE("tape: reverse replay visits every node exactly once") {
  Tape<double> tape;
  std::vector<int> order;
  auto dummy = make_tensor<double>({1, 1, 1, 1});
  for (int i = 0; i < 5; ++i) tape.record(dummy, [&order, i] { order.push_back(i); });
  tape.backward();
  CHECK(order == std::vector<int>{4, 3, 2, 1, 0});
}

TEST_CASE("tape: gradients are idempotent after zeroing") {
  auto x = rand_t({1, 2, 4, 4}, 21);
  x->requires_grad = true;
  Tape<double> tape;
  auto ctx = train_context(tape);
  auto loss = sum_all(ctx, sigmoid(ctx, relu(ctx, x)));
  backward_scalar(tape, loss);
  auto first = x->grad;
  x->zero_grad();
  tape.zero_grads();  // resets intermediates and the loss seed
  backward_scalar(tape, loss);
  CHECK(x->grad == first);
}

TEST_CASE("grad: sum of x is ones") {
  auto x = rand_t({1, 2, 3, 3}, 1);
  double err = grad_check<double>(
      [](Context<double>& c, const TensorPtr<double>& t) { return sum_all(c, t); }, x, kEps);
  CHECK(err < 1e-10);
}

TEST_CASE("grad: elementwise ops") {
  auto x = rand_t({2, 3, 4, 4}, 2);
  double err = grad_check<double>(
      [](Context<double>& c, const TensorPtr<double>& t) { return sum_all(c, relu(c, t)); }, x,
      kEps);
  CHECK(err < 1e-7);

  err = grad_check<double>(
      [](Context<double>& c, const TensorPtr<double>& t) { return sum_all(c, sigmoid(c, t)); }, x,
      kEps);
  CHECK(err < 1e-7);

  auto other = rand_t({2, 3, 4, 4}, 3);
  err = grad_check<double>(
      [&](Context<double>& c, const TensorPtr<double>& t) {
        return sum_all(c, add(c, t, other));
      },
      x, kEps);
  CHECK(err < 1e-7);
}

TEST_CASE("grad: conv2d wrt input, weights, bias") {
  auto x = rand_t({2, 2, 5, 5}, 4);
  auto w = rand_t({3, 2, 3, 3}, 5);
  auto b = rand_t({1, 3, 1, 1}, 6);
  // Square the output so gradients are input-dependent.
  auto f = [&](Context<double>& c) {
    auto y = conv2d(c, x, w, b, 1, 1);
    auto y2 = relu(c, y);
    return sum_all(c, y2);
  };
  CHECK(grad_check_params<double>(f, {x, w, b}, kEps) < 1e-6);
}

TEST_CASE("grad: strided conv") {
  auto x = rand_t({1, 2, 6, 6}, 7);
  auto w = rand_t({2, 2, 3, 3}, 8);
  auto b = rand_t({1, 2, 1, 1}, 9);
  auto f = [&](Context<double>& c) { return sum_all(c, relu(c, conv2d(c, x, w, b, 2, 1))); };
  CHECK(grad_check_params<double>(f, {x, w, b}, kEps) < 1e-6);
}

TEST_CASE("grad: pooling and resampling ops") {
  auto x = rand_t({1, 2, 6, 6}, 10);
  auto fmax = [&](Context<double>& c, const TensorPtr<double>& t) {
    return sum_all(c, relu(c, maxpool2x(c, t)));
  };
  CHECK(grad_check<double>(fmax, x, kEps) < 1e-6);

  auto fup = [&](Context<double>& c, const TensorPtr<double>& t) {
    return sum_all(c, relu(c, upsample_nearest2x(c, t)));
  };
  CHECK(grad_check<double>(fup, x, kEps) < 1e-6);

  auto favg = [&](Context<double>& c, const TensorPtr<double>& t) {
    return sum_all(c, relu(c, avgpool2x(c, t)));
  };
  CHECK(grad_check<double>(favg, x, kEps) < 1e-6);

  auto fpad = [&](Context<double>& c, const TensorPtr<double>& t) {
    return sum_all(c, relu(c, replicate_pad_br(c, t)));
  };
  CHECK(grad_check<double>(fpad, x, kEps) < 1e-6);

  auto fgap = [&](Context<double>& c, const TensorPtr<double>& t) {
    return sum_all(c, relu(c, global_avg_pool(c, t)));
  };
  CHECK(grad_check<double>(fgap, x, kEps) < 1e-6);
}

TEST_CASE("grad: concat routes gradients to both parts") {
  auto a = rand_t({1, 2, 4, 4}, 11);
  auto b = rand_t({1, 3, 4, 4}, 12);
  auto f = [&](Context<double>& c) {
    return sum_all(c, relu(c, concat_channels(c, {a, b})));
  };
  CHECK(grad_check_params<double>(f, {a, b}, kEps) < 1e-6);
}

TEST_CASE("grad: linear") {
  auto x = rand_t({3, 5, 1, 1}, 13);
  auto w = rand_t({4, 5, 1, 1}, 14);
  auto b = rand_t({1, 4, 1, 1}, 15);
  auto f = [&](Context<double>& c) { return sum_all(c, relu(c, linear(c, x, w, b))); };
  CHECK(grad_check_params<double>(f, {x, w, b}, kEps) < 1e-6);
}

TEST_CASE("grad: batchnorm vs finite differences on (2,3,4,4)") {
  auto x = rand_t({2, 3, 4, 4}, 16, -2, 2);
  BatchNorm<double> bn(3);
  Rng grng(17);
  for (auto& v : bn.gamma->data) v = grng.uniform(0.5, 1.5);
  for (auto& v : bn.beta->data) v = grng.uniform(-0.5, 0.5);
  auto f = [&](Context<double>& c) {
    c.mode = Mode::kTrain;
    // Restore running stats so repeated evaluations see identical state.
    auto rm = bn.running_mean->data;
    auto rv = bn.running_var->data;
    auto y = batchnorm(c, x, bn);
    bn.running_mean->data = rm;
    bn.running_var->data = rv;
    return sum_all(c, relu(c, y));
  };
  CHECK(grad_check_params<double>(f, {x, bn.gamma, bn.beta}, kEps) < 1e-5);
}

TEST_CASE("grad: losses match finite differences") {
  auto z = rand_t({3, 7, 1, 1}, 18, -2, 2);
  std::vector<int> labels = {0, 3, 6};
  auto f1 = [&](Context<double>& c, const TensorPtr<double>& t) {
    return softmax_cross_entropy(c, t, labels);
  };
  CHECK(grad_check<double>(f1, z, kEps) < 1e-5);

  auto zp = rand_t({2, 4, 3, 3}, 19, -2, 2);
  Rng lr(20);
  auto lm = make_tensor<double>({2, 1, 3, 3});
  for (auto& v : lm->data) v = static_cast<double>(lr.uniform_int(0, 3));
  auto f2 = [&](Context<double>& c, const TensorPtr<double>& t) {
    return pixel_softmax_cross_entropy(c, t, lm);
  };
  CHECK(grad_check<double>(f2, zp, kEps) < 1e-5);

  auto zb = rand_t({2, 1, 4, 4}, 21, -3, 3);
  auto tb = rand_t({2, 1, 4, 4}, 22, 0, 1);
  auto f3 = [&](Context<double>& c, const TensorPtr<double>& t) {
    return sigmoid_bce(c, t, tb);
  };
  CHECK(grad_check<double>(f3, zb, kEps) < 1e-5);
}

TEST_CASE("grad: composite chain conv->pool->upsample->concat") {
  auto x = rand_t({1, 2, 6, 6}, 23);
  auto w = rand_t({2, 2, 3, 3}, 24);
  auto b = rand_t({1, 2, 1, 1}, 25);
  auto f = [&](Context<double>& c) {
    auto y = conv2d(c, x, w, b, 1, 1);
    auto p = maxpool2x(c, y);
    auto u = upsample_nearest2x(c, p);
    auto cc = concat_channels(c, {y, u});
    return sum_all(c, relu(c, cc));
  };
  CHECK(grad_check_params<double>(f, {x, w, b}, kEps) < 1e-6);
}
