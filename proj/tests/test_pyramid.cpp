#include <doctest.h>

#include "mgnet/gradcheck.hpp"
#include "mgnet/model.hpp"
#include "mgnet/pyramid.hpp"
#include "oracles.hpp"

using namespace mgnet;

namespace {

Pyramid<double> random_pyramid(const std::vector<i64>& plan, i64 n, i64 finest_hw, u64 seed) {
  Rng rng(seed);
  Pyramid<double> p;
  for (std::size_t l = 0; l < plan.size(); ++l)
    p.push_back(random_uniform<double>({n, plan[l], finest_hw >> l, finest_hw >> l}, rng, -1, 1));
  return p;
}

}  // namespace

TEST_CASE("neighbor-sum rule: gather channels per level") {
  const std::vector<i64> plan = {8, 4, 2};
  CHECK(mg_gather_channels(plan, 0) == 12);  // 8 + 4
  CHECK(mg_gather_channels(plan, 1) == 14);  // 8 + 4 + 2
  CHECK(mg_gather_channels(plan, 2) == 6);   // 4 + 2
}

TEST_CASE("neighbor-sum rule: property across random plans, levels 1..5") {
  Rng rng(31);
  for (int t = 0; t < 50; ++t) {
    const int levels = static_cast<int>(rng.uniform_int(1, 5));
    std::vector<i64> plan;
    for (int l = 0; l < levels; ++l) plan.push_back(rng.uniform_int(1, 32));
    for (int l = 0; l < levels; ++l) {
      i64 want = plan[static_cast<std::size_t>(l)];
      if (l > 0) want += plan[static_cast<std::size_t>(l - 1)];
      if (l + 1 < levels) want += plan[static_cast<std::size_t>(l + 1)];
      CHECK(mg_gather_channels(plan, static_cast<std::size_t>(l)) == want);
    }
    // Weight construction matches the rule.
    Rng wr(7);
    auto mw = make_mg_weights<double>(wr, plan, plan);
    for (int l = 0; l < levels; ++l)
      CHECK(mw.w[static_cast<std::size_t>(l)]->shape.c ==
            mg_gather_channels(plan, static_cast<std::size_t>(l)));
  }
}

TEST_CASE("pyramid validation: dyadic scaling enforced") {
  Pyramid<double> good = random_pyramid({2, 2}, 1, 8, 1);
  CHECK_NOTHROW(validate_pyramid(good));
  Pyramid<double> bad;
  bad.push_back(make_tensor<double>({1, 2, 8, 8}));
  bad.push_back(make_tensor<double>({1, 2, 5, 4}));
  CHECK_THROWS_AS(validate_pyramid(bad), ShapeError);
  Pyramid<double> empty;
  CHECK_THROWS_AS(validate_pyramid(empty), ShapeError);
}

TEST_CASE("mg_conv on 1-level pyramid is bit-identical to conv2d") {
  Rng rng(41);
  auto x = random_uniform<double>({2, 3, 8, 8}, rng, -1, 1);
  auto mw = make_mg_weights<double>(rng, {3}, {5});
  Context<double> c;
  auto out = mg_conv(c, Pyramid<double>{x}, mw);
  auto ref = conv2d(c, x, mw.w[0], mw.b[0], 1, 1);
  CHECK(oracle::bit_identical(*out[0], *ref));
}

TEST_CASE("mg_conv matches hand-composed pool/upsample/concat/conv chain") {
  Rng rng(43);
  Pyramid<double> p = random_pyramid({3, 2}, 2, 8, 44);
  auto mw = make_mg_weights<double>(rng, {3, 2}, {4, 2});
  Context<double> c;
  auto out = mg_conv(c, p, mw);

  // Independent composition from tensor ops.
  auto g0 = concat_channels(c, {p[0], upsample_nearest2x(c, p[1])});
  auto r0 = conv2d(c, g0, mw.w[0], mw.b[0], 1, 1);
  auto g1 = concat_channels(c, {maxpool2x(c, p[0]), p[1]});
  auto r1 = conv2d(c, g1, mw.w[1], mw.b[1], 1, 1);
  CHECK(oracle::bit_identical(*out[0], *r0));
  CHECK(oracle::bit_identical(*out[1], *r1));
}

TEST_CASE("mg_conv: 3-level compositional check with pooled-finer first order") {
  Rng rng(45);
  Pyramid<double> p = random_pyramid({4, 3, 2}, 1, 16, 46);
  auto mw = make_mg_weights<double>(rng, {4, 3, 2}, {4, 3, 2});
  Context<double> c;
  auto out = mg_conv(c, p, mw);
  auto g1 = concat_channels(c, {maxpool2x(c, p[0]), p[1], upsample_nearest2x(c, p[2])});
  auto r1 = conv2d(c, g1, mw.w[1], mw.b[1], 1, 1);
  CHECK(oracle::bit_identical(*out[1], *r1));
}

TEST_CASE("mg_conv: weight/pyramid mismatch errors") {
  Rng rng(47);
  Pyramid<double> p = random_pyramid({3, 2}, 1, 8, 48);
  auto mw = make_mg_weights<double>(rng, {3}, {4});
  Context<double> c;
  CHECK_THROWS_AS(mg_conv(c, p, mw), ShapeError);
  auto wrong = make_mg_weights<double>(rng, {3, 3}, {4, 2});
  CHECK_THROWS_WITH_AS(mg_conv(c, p, wrong), doctest::Contains("gathered"), ShapeError);
}

TEST_CASE("mg_conv is differentiable end-to-end") {
  Pyramid<double> p = random_pyramid({2, 1}, 1, 6, 49);
  Rng rng(50);
  auto mw = make_mg_weights<double>(rng, {2, 1}, {2, 1});
  std::vector<TensorPtr<double>> leaves = {p[0], p[1], mw.w[0], mw.b[0], mw.w[1], mw.b[1]};
  auto f = [&](Context<double>& c) {
    auto out = mg_conv(c, p, mw);
    auto s0 = sum_all(c, relu(c, out[0]));
    auto s1 = sum_all(c, relu(c, out[1]));
    return add(c, s0, s1);
  };
  CHECK(grad_check_params<double>(f, leaves, 1e-5) < 1e-6);
}

TEST_CASE("pyramid_pool: plain reduction and coarse-drop rule") {
  Context<double> c;
  auto mk = [&](std::vector<i64> sizes) {
    Pyramid<double> p;
    Rng rng(51);
    for (i64 s : sizes) p.push_back(random_uniform<double>({1, 2, s, s}, rng, -1, 1));
    return p;
  };
  auto sizes_of = [](const Pyramid<double>& p) {
    std::vector<i64> s;
    for (auto& g : p) s.push_back(g->shape.h);
    return s;
  };
  CHECK(sizes_of(pyramid_pool(c, mk({32, 16, 8}))) == std::vector<i64>{16, 8, 4});
  CHECK(sizes_of(pyramid_pool(c, mk({8, 4, 2}))) == std::vector<i64>{4, 2, 1});
  CHECK(sizes_of(pyramid_pool(c, mk({4, 2, 1}))) == std::vector<i64>{2, 1});

  Pyramid<double> tiny = mk({1});
  CHECK_THROWS_WITH_AS(pyramid_pool(c, tiny), doctest::Contains("finest"), ShapeError);
}

TEST_CASE("build_input_pyramid: sizes, constants, single level") {
  Context<double> c;
  Rng rng(52);
  auto image = random_uniform<double>({1, 1, 64, 64}, rng, 0, 1);
  auto p = build_input_pyramid(c, image, 3);
  REQUIRE(p.size() == 3);
  CHECK(p[0]->shape.h == 64);
  CHECK(p[1]->shape.h == 32);
  CHECK(p[2]->shape.h == 16);

  // Constant image stays constant at every level before stems.
  auto flat = full_tensor<double>({1, 1, 16, 16}, 0.37);
  auto pf = build_input_pyramid(c, flat, 3);
  for (auto& g : pf)
    for (double v : g->data) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));

  // One level: the image itself (stem applies to the original resolution).
  auto p1 = build_input_pyramid(c, image, 1);
  CHECK(p1.size() == 1);
  CHECK(oracle::bit_identical(*p1[0], *image));

  auto odd = make_tensor<double>({1, 1, 20, 20});
  CHECK_THROWS_AS(build_input_pyramid(c, odd, 4), ShapeError);  // 20 % 8 != 0
}

TEST_CASE("res unit: zero conv weights give exact identity and unit gradient") {
  std::vector<i64> plan = {3, 2};
  Rng rng(53);
  ResMgUnit<double> unit("unit0", plan, plan, {8, 4}, 0, rng, true);
  // Zero both conv banks via the visitor.
  unit.visit([](const std::string& name, const TensorPtr<double>& t, bool) {
    if (name.find(".conv") != std::string::npos && name.back() == 'w')
      std::fill(t->data.begin(), t->data.end(), 0.0);
  });
  Pyramid<double> p = random_pyramid(plan, 2, 8, 54);
  ModelState<double> st;
  st.pyr = p;

  Tape<double> tape;
  auto ctx = train_context(tape);
  for (auto& g : st.pyr) g->requires_grad = true;
  unit.forward(st, ctx);
  REQUIRE(st.pyr.size() == 2);
  CHECK(oracle::max_abs_diff(*st.pyr[0], *p[0]) == 0.0);
  CHECK(oracle::max_abs_diff(*st.pyr[1], *p[1]) == 0.0);

  // Gradient of the sum passes straight through the identity shortcut.
  auto s = add(ctx, sum_all(ctx, st.pyr[0]), sum_all(ctx, st.pyr[1]));
  backward_scalar(tape, s);
  for (double g : p[0]->grad) CHECK(g == 1.0);
  for (double g : p[1]->grad) CHECK(g == 1.0);
}

TEST_CASE("res unit: counts two conv stages; projection when plans differ") {
  Rng rng(55);
  ResMgUnit<double> same("u", {4}, {4}, {8}, 0, rng, true);
  CHECK(same.stages() == 2);
  ResMgUnit<double> proj("u2", {4}, {6}, {8}, 0, rng, true);
  ModelState<double> st;
  st.pyr = random_pyramid({4}, 1, 8, 56);
  Context<double> c;
  c.mode = Mode::kTrain;
  proj.forward(st, c);
  CHECK(st.pyr[0]->shape.c == 6);
}

TEST_CASE("end-to-end grad check: 3-level 2-layer mg stack") {
  std::vector<i64> plan = {2, 2, 1};
  Pyramid<double> p = random_pyramid(plan, 1, 8, 57);
  Rng rng(58);
  auto w1 = make_mg_weights<double>(rng, plan, plan);
  auto w2 = make_mg_weights<double>(rng, plan, plan);
  std::vector<TensorPtr<double>> leaves = {p[0], p[1], p[2]};
  for (auto& w : {w1, w2})
    for (std::size_t l = 0; l < w.levels(); ++l) {
      leaves.push_back(w.w[l]);
      leaves.push_back(w.b[l]);
    }
  auto f = [&](Context<double>& c) {
    auto h = mg_conv(c, p, w1);
    h = relu_per_grid(c, h);
    h = mg_conv(c, h, w2);
    TensorPtr<double> total = sum_all(c, relu(c, h[0]));
    for (std::size_t l = 1; l < h.size(); ++l)
      total = add(c, total, sum_all(c, relu(c, h[l])));
    return total;
  };
  CHECK(grad_check_params<double>(f, leaves, 1e-5) < 1e-4);
}
