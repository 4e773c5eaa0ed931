#include <doctest.h>

#include <filesystem>

#include "mgnet/probes.hpp"
#include "mgnet/synth.hpp"
#include "mgnet/train.hpp"
#include "mgnet/zoo.hpp"
#include "oracles.hpp"

using namespace mgnet;

namespace {

ArchSpec tiny_spec(Family f, int depth, HeadKind head, int levels, i64 input, i64 width) {
  ArchSpec s;
  s.family = f;
  s.depth = depth;
  s.head = head;
  s.levels = levels;
  s.input_hw = input;
  s.width = width;
  s.classes = head == HeadKind::kClassifier ? 4 : 11;
  s.in_channels = head == HeadKind::kClassifier ? 3 : 1;
  return s;
}

template <class T>
Dataset<T> tiny_seg_data(int count, u64 seed, i64 canvas = 16) {
  auto bank = builtin_digit_bank<T>();
  GenConfig cfg;
  cfg.canvas = canvas;
  cfg.digits_min = cfg.digits_max = 1;
  cfg.scale_min = 0.35;
  cfg.scale_max = 0.45;
  cfg.rot_deg = 20;
  return gen_seg_dataset(cfg, bank, count, seed);
}

}  // namespace

TEST_CASE("lr_at: schedule endpoints and steps") {
  Schedule exp{ScheduleKind::kExp, 0.1, 0.0001, 0.2, 60};
  CHECK(lr_at(exp, 0, 200) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(lr_at(exp, 199, 200) == doctest::Approx(0.0001).epsilon(1e-12));
  // Midpoint of 200 epochs: 0.1 * (0.001)^(100/199)
  CHECK(lr_at(exp, 100, 200) == doctest::Approx(0.1 * std::pow(0.001, 100.0 / 199.0)));
  CHECK(lr_at(exp, 100, 200) == doctest::Approx(3.13e-3).epsilon(0.01));

  Schedule step{ScheduleKind::kStep, 0.1, 0, 0.2, 60};
  CHECK(lr_at(step, 0, 200) == doctest::Approx(0.1));
  CHECK(lr_at(step, 59, 200) == doctest::Approx(0.1));
  CHECK(lr_at(step, 60, 200) == doctest::Approx(0.02));
  CHECK(lr_at(step, 120, 200) == doctest::Approx(0.004));

  CHECK_THROWS_AS(lr_at(exp, 200, 200), ConfigError);
}

TEST_CASE("lr_at: nonincreasing in epoch for both schedules") {
  Schedule exp{ScheduleKind::kExp, 0.1, 0.0001, 0.2, 60};
  Schedule step{ScheduleKind::kStep, 0.1, 0, 0.2, 60};
  for (const auto& s : {exp, step}) {
    double prev = 1e9;
    for (int e = 0; e < 200; ++e) {
      const double lr = lr_at(s, e, 200);
      CHECK(lr <= prev);
      prev = lr;
    }
  }
}

TEST_CASE("train: lr 0 with zero weight decay leaves weights unchanged") {
  auto ds = tiny_seg_data<double>(4, 5);
  auto model = build_model<double>(tiny_spec(Family::kSg, 4, HeadKind::kDenseSeg, 1, 16, 4), 1);
  auto before = model.named_state();
  std::vector<std::vector<double>> saved;
  for (auto& [n, t] : before) saved.push_back(t->data);

  TrainConfig cfg;
  cfg.batch = 2;
  cfg.iters_per_epoch = 3;
  cfg.epochs = 1;
  cfg.weight_decay = 0;
  cfg.momentum = 0;
  cfg.schedule = {ScheduleKind::kStep, 0.0, 0, 1.0, 1000};
  cfg.seed = 2;
  Dataset<double> no_eval;
  no_eval.task = ds.task;
  train(model, ds, no_eval, cfg);

  // Batchnorm running stats move; weights must not.
  std::size_t i = 0;
  for (auto& [name, t] : model.named_state()) {
    if (name.find(".mean") == std::string::npos && name.find(".var") == std::string::npos)
      CHECK(t->data == saved[i]);
    ++i;
  }
}

TEST_CASE("train: tiny sg model overfits a 2-sample dataset") {
  auto ds = tiny_seg_data<double>(2, 6);
  auto model = build_model<double>(tiny_spec(Family::kSg, 4, HeadKind::kDenseSeg, 1, 16, 6), 3);

  TrainConfig cfg;
  cfg.batch = 2;
  cfg.iters_per_epoch = 20;
  cfg.epochs = 10;
  cfg.weight_decay = 0;
  cfg.momentum = 0.9;
  cfg.schedule = {ScheduleKind::kStep, 0.05, 0, 1.0, 1000};
  cfg.seed = 4;
  Dataset<double> no_eval;
  no_eval.task = ds.task;
  auto res = train(model, ds, no_eval, cfg);
  REQUIRE(res.history.size() == 10);
  CHECK(res.history.back().train_loss < res.history.front().train_loss);
  CHECK(res.history.back().train_loss < 0.5 * res.history.front().train_loss);
}

TEST_CASE("train: identical seeds give identical checkpoints at 64-bit") {
  namespace fs = std::filesystem;
  auto run = [&](const std::string& dir) {
    auto ds = tiny_seg_data<double>(6, 7);
    auto model = build_model<double>(tiny_spec(Family::kPmg, 5, HeadKind::kDenseSeg, 2, 16, 4), 9);
    TrainConfig cfg;
    cfg.batch = 2;
    cfg.iters_per_epoch = 4;
    cfg.epochs = 2;
    cfg.seed = 10;
    cfg.schedule = {ScheduleKind::kStep, 0.01, 0, 1.0, 1000};
    cfg.out_dir = dir;
    Dataset<double> no_eval;
    no_eval.task = ds.task;
    return train(model, ds, no_eval, cfg).final_checkpoint;
  };
  auto a = run("t_det_a");
  auto b = run("t_det_b");
  CHECK(file_digest(a) == file_digest(b));
  fs::remove_all("t_det_a");
  fs::remove_all("t_det_b");
}

TEST_CASE("train: epochs=0 writes initial checkpoint and empty metrics body") {
  namespace fs = std::filesystem;
  auto ds = tiny_seg_data<double>(2, 8);
  auto model = build_model<double>(tiny_spec(Family::kSg, 4, HeadKind::kDenseSeg, 1, 16, 4), 1);
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.out_dir = "t_zero_epochs";
  Dataset<double> no_eval;
  no_eval.task = ds.task;
  auto res = train(model, ds, no_eval, cfg);
  CHECK(fs::exists(res.final_checkpoint));
  std::ifstream csv("t_zero_epochs/metrics.csv");
  std::string header, extra;
  std::getline(csv, header);
  CHECK(header == "epoch,lr,train_loss,classify_error,mean_iou,mean_error");
  CHECK_FALSE(std::getline(csv, extra));
  fs::remove_all("t_zero_epochs");
}

TEST_CASE("eval metrics: exact values on constructed predictions") {
  // Perfect prediction -> IoU 100, error 0. Build a 2-class seg problem by
  // planting logits directly through a 1x1 head-free comparison: simpler to
  // drive eval_* through a model is overkill, so check the arithmetic with a
  // stub model built from an identity-like head. Instead, construct datasets
  // where the model's output is known: a constant-zero logit model predicts
  // class 0 everywhere.
  auto bank = builtin_digit_bank<double>();
  GenConfig cfg;
  cfg.canvas = 16;
  cfg.digits_min = cfg.digits_max = 1;
  cfg.scale_min = cfg.scale_max = 0.4;
  cfg.rot_deg = 0;
  auto ds = gen_seg_dataset(cfg, bank, 4, 99);

  // All-background spt prediction: IoU 0, error 100.
  auto spt_model =
      build_model<double>(tiny_spec(Family::kSg, 4, HeadKind::kDenseSpt, 1, 16, 4), 11);
  // Force the head to a strongly negative constant: never predicts foreground.
  for (auto& [name, t] : spt_model.named_state())
    if (name == "head.b") t->data[0] = -50.0;
    else if (name == "head.w") std::fill(t->data.begin(), t->data.end(), 0.0);
  GenConfig scfg = cfg;
  auto sds = gen_spt_dataset(scfg, bank, 4, 100);
  auto ev = eval_spt(spt_model, sds);
  CHECK(ev.mean_iou_pct == 0.0);
  CHECK(ev.mean_error_pct == 100.0);
}

TEST_CASE("eval metrics: hand-counted spt case") {
  // A model that reproduces the input's foreground: logit = 100*x - 50, so
  // the prediction is exactly {x > 0.5}.
  Model<double> model;
  Rng rng(1);
  model.layers.push_back(std::make_unique<RawInputLayer<double>>("input"));
  model.layers.push_back(std::make_unique<DenseHead<double>>("head", 1, 1, 4, rng, false));
  for (auto& [name, t] : model.named_state()) {
    if (name == "head.w") t->data[0] = 100.0;
    if (name == "head.b") t->data[0] = -50.0;
  }

  Dataset<double> ds;
  ds.task = Task::kSpt;
  auto image = make_tensor<double>({1, 1, 4, 4});
  auto target = make_tensor<double>({1, 1, 4, 4});
  image->at(0, 0, 1, 1) = 1.0;   // predicted foreground, matches target
  target->at(0, 0, 1, 1) = 1.0;
  target->at(0, 0, 2, 2) = 1.0;  // second true-foreground pixel, predicted background
  ds.images.push_back(image);
  ds.targets.push_back(target);
  ds.labels.push_back(0);

  auto ev = eval_spt(model, ds);
  CHECK(ev.mean_iou_pct == doctest::Approx(50.0));
  CHECK(ev.mean_error_pct == doctest::Approx(50.0));

  // Perfect prediction: IoU 100, error 0.
  Dataset<double> perfect;
  perfect.task = Task::kSpt;
  perfect.images.push_back(target);
  perfect.targets.push_back(target);
  perfect.labels.push_back(0);
  auto pv = eval_spt(model, perfect);
  CHECK(pv.mean_iou_pct == doctest::Approx(100.0));
  CHECK(pv.mean_error_pct == doctest::Approx(0.0));
}

TEST_CASE("eval: pure and order-independent") {
  auto ds = tiny_seg_data<double>(6, 12);
  auto model = build_model<double>(tiny_spec(Family::kPmg, 5, HeadKind::kDenseSeg, 2, 16, 4), 13);
  auto before = model.named_state();
  std::vector<std::vector<double>> saved;
  for (auto& [n, t] : before) saved.push_back(t->data);

  auto e1 = eval_seg(model, ds);
  // No mutation, including running stats.
  std::size_t i = 0;
  for (auto& [n, t] : model.named_state()) CHECK(t->data == saved[i++]);

  // Shuffled evaluation order leaves metrics bit-identical.
  Dataset<double> shuffled;
  shuffled.task = ds.task;
  for (std::size_t k : {3u, 0u, 5u, 1u, 4u, 2u}) {
    shuffled.images.push_back(ds.images[k]);
    shuffled.targets.push_back(ds.targets[k]);
    shuffled.labels.push_back(ds.labels[k]);
  }
  auto e2 = eval_seg(model, shuffled);
  CHECK(e1.mean_iou_pct == e2.mean_iou_pct);
  CHECK(e1.mean_error_pct == e2.mean_error_pct);

  auto spt = gen_spt_dataset(GenConfig{.canvas = 16, .scale_min = 0.4, .scale_max = 0.4},
                             builtin_digit_bank<double>(), 5, 14);
  auto spt_model =
      build_model<double>(tiny_spec(Family::kSg, 4, HeadKind::kDenseSpt, 1, 16, 4), 15);
  auto s1 = eval_spt(spt_model, spt);
  Dataset<double> sptsh;
  sptsh.task = spt.task;
  for (std::size_t k : {4u, 2u, 0u, 3u, 1u}) {
    sptsh.images.push_back(spt.images[k]);
    sptsh.targets.push_back(spt.targets[k]);
    sptsh.labels.push_back(spt.labels[k]);
  }
  auto s2 = eval_spt(spt_model, sptsh);
  CHECK(s1.mean_iou_pct == s2.mean_iou_pct);
  CHECK(s1.mean_error_pct == s2.mean_error_pct);
}

TEST_CASE("every family is trainable: loss strictly decreases for small enough lr") {
  struct Probe {
    Family f;
    HeadKind h;
    int depth;
    int levels;
  };
  const std::vector<Probe> probes = {
      {Family::kVgg, HeadKind::kClassifier, 6, 1}, {Family::kMg, HeadKind::kClassifier, 6, 3},
      {Family::kPmg, HeadKind::kClassifier, 9, 3}, {Family::kRes, HeadKind::kClassifier, 12, 1},
      {Family::kRmg, HeadKind::kClassifier, 12, 3},
      {Family::kRpmg, HeadKind::kClassifier, 16, 3},
      {Family::kSg, HeadKind::kDenseSeg, 5, 1},    {Family::kRsg, HeadKind::kDenseSeg, 8, 1},
      {Family::kPmg, HeadKind::kDenseSpt, 5, 3},   {Family::kRpmg, HeadKind::kDenseSeg, 8, 3},
      {Family::kUnet, HeadKind::kDenseSeg, 11, 1}, {Family::kUmg, HeadKind::kDenseSeg, 11, 2},
  };
  for (const auto& pr : probes) {
    CAPTURE(family_name(pr.f));
    auto spec = tiny_spec(pr.f, pr.depth, pr.h, pr.levels, 16, 4);
    Dataset<double> ds;
    if (pr.h == HeadKind::kClassifier) {
      ds.task = Task::kClassify;
      Rng rng(20);
      for (int i = 0; i < 4; ++i) {
        ds.images.push_back(random_uniform<double>({1, 3, 16, 16}, rng, 0, 1));
        ds.labels.push_back(i % 4);
      }
    } else if (pr.h == HeadKind::kDenseSeg) {
      ds = tiny_seg_data<double>(4, 21);
    } else {
      ds = gen_spt_dataset(GenConfig{.canvas = 16, .scale_min = 0.4, .scale_max = 0.4},
                           builtin_digit_bank<double>(), 4, 22);
    }
    // Fixed batch of the whole tiny dataset.
    std::vector<i64> idx;
    for (std::size_t i = 0; i < ds.size(); ++i) idx.push_back(static_cast<i64>(i));
    auto images = detail::stack_images(ds.images, idx);
    TensorPtr<double> targets;
    if (ds.task != Task::kClassify) targets = detail::stack_images(ds.targets, idx);

    // Bisection on lr: halve until 10 strictly decreasing steps.
    bool trained = false;
    for (double lr = 0.1; lr > 1e-8 && !trained; lr *= 0.5) {
      auto model = build_model<double>(spec, 30);
      Sgd<double> opt(model.parameters(), 0.0, 0.9);
      double prev = 1e300;
      trained = true;
      for (int step = 0; step < 10; ++step) {
        Tape<double> tape;
        auto ctx = train_context(tape);
        auto logits = model.forward(ctx, images);
        auto loss = task_loss(ctx, ds.task, logits, targets, ds.labels);
        if (!(loss->data[0] < prev)) {
          trained = false;
          break;
        }
        prev = loss->data[0];
        opt.zero_grad();
        backward_scalar(tape, loss);
        opt.step(lr);
      }
    }
    CHECK_MESSAGE(trained, family_name(pr.f), "-", pr.depth, " loss never decreased for any lr");
  }
}

TEST_CASE("train: nan loss aborts with a diagnostic naming a layer") {
  auto ds = tiny_seg_data<double>(2, 23);
  auto model = build_model<double>(tiny_spec(Family::kSg, 4, HeadKind::kDenseSeg, 1, 16, 4), 24);
  // Poison a weight so the forward explodes.
  for (auto& [name, t] : model.named_state())
    if (name == "head.w") t->data[0] = std::numeric_limits<double>::infinity();
  TrainConfig cfg;
  cfg.batch = 2;
  cfg.iters_per_epoch = 1;
  cfg.epochs = 1;
  cfg.schedule = {ScheduleKind::kStep, 0.01, 0, 1.0, 1000};
  Dataset<double> no_eval;
  no_eval.task = ds.task;
  CHECK_THROWS_WITH_AS(train(model, ds, no_eval, cfg), doctest::Contains("head"), TrainError);
}
