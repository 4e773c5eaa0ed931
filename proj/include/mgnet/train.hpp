#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "mgnet/data.hpp"
#include "mgnet/model.hpp"
#include "mgnet/sgd.hpp"

namespace mgnet {

enum class ScheduleKind { kExp, kStep };

// Learning-rate schedules:
//   exp:  lr = start * (end/start)^(epoch / (total-1))
//   step: lr = start * factor^floor(epoch / period)
struct Schedule {
  ScheduleKind kind = ScheduleKind::kExp;
  double start = 0.1;
  double end = 0.0001;   // exp only
  double factor = 0.2;   // step only
  int period = 60;       // step only, in epochs
};

inline double lr_at(const Schedule& s, int epoch, int total_epochs) {
  if (epoch < 0 || epoch >= total_epochs)
    throw ConfigError(cat("lr_at: epoch ", epoch, " outside [0,", total_epochs, ")"));
  if (s.kind == ScheduleKind::kExp) {
    if (total_epochs == 1) return s.start;
    const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
    return s.start * std::pow(s.end / s.start, t);
  }
  return s.start * std::pow(s.factor, static_cast<double>(epoch / s.period));
}

struct TrainConfig {
  int batch = 64;
  int iters_per_epoch = 150;
  int epochs = 200;
  double weight_decay = 0.0005;
  double momentum = 0.9;
  Schedule schedule;
  u64 seed = 1;
  int ckpt_every = 10;
  std::string out_dir;  // empty: keep everything in memory
};

struct MetricReport {
  double classify_error_pct = -1;
  double mean_iou_pct = -1;
  double mean_error_pct = -1;
};

struct EpochRow {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  MetricReport eval;
};

namespace detail {

template <class T>
TensorPtr<T> stack_images(const std::vector<TensorPtr<T>>& pool, const std::vector<i64>& idx) {
  const Shape s = pool[0]->shape;
  auto out = make_tensor<T>({static_cast<i64>(idx.size()), s.c, s.h, s.w});
  const i64 stride = s.numel();
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(pool[static_cast<std::size_t>(idx[i])]->data.data(), stride,
                out->data.data() + static_cast<i64>(i) * stride);
  return out;
}

}  // namespace detail

// Task-appropriate loss on a stacked batch.
template <class T>
TensorPtr<T> task_loss(Context<T>& ctx, Task task, const TensorPtr<T>& logits,
                       const TensorPtr<T>& targets, const std::vector<int>& labels) {
  switch (task) {
    case Task::kClassify: return softmax_cross_entropy(ctx, logits, labels);
    case Task::kSeg: return pixel_softmax_cross_entropy(ctx, logits, targets);
    case Task::kSpt: return sigmoid_bce(ctx, logits, targets);
  }
  throw ConfigError("task_loss: bad task");
}

// --------------------------------------------------------------------------
// Evaluation. All metrics accumulate integer counts (or canonically ordered
// sums), so results do not depend on evaluation order. Models run in eval
// mode with no tape; nothing is mutated.
// --------------------------------------------------------------------------

template <class T>
double eval_classification(Model<T>& model, const Dataset<T>& ds, int batch = 64) {
  i64 wrong = 0;
  Context<T> ctx;
  for (std::size_t at = 0; at < ds.size(); at += static_cast<std::size_t>(batch)) {
    std::vector<i64> idx;
    for (std::size_t i = at; i < std::min(ds.size(), at + static_cast<std::size_t>(batch)); ++i)
      idx.push_back(static_cast<i64>(i));
    auto logits = model.forward(ctx, detail::stack_images(ds.images, idx));
    const i64 K = logits->shape.c;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const T* z = logits->data.data() + static_cast<i64>(i) * K;
      i64 best = 0;
      for (i64 k = 1; k < K; ++k)
        if (z[k] > z[best]) best = k;
      if (best != ds.labels[static_cast<std::size_t>(idx[i])]) ++wrong;
    }
  }
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(ds.size());
}

struct SegEval {
  double mean_iou_pct = 0;
  double mean_error_pct = 0;
  std::vector<int> empty_classes;  // classes absent from the eval set, excluded from the mean
};

// Segmentation metrics over the digit classes (background excluded from the
// IoU mean): dataset-level IoU_c = TP / (TP + FP + FN) on argmax decoding,
// averaged over classes present; error is the mislabeled fraction among
// pixels whose true label is a digit.
template <class T>
SegEval eval_seg(Model<T>& model, const Dataset<T>& ds, int classes = 11,
                 int background = kBackgroundLabel, int batch = 16) {
  std::vector<i64> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  i64 fg_total = 0, fg_wrong = 0;
  Context<T> ctx;
  for (std::size_t at = 0; at < ds.size(); at += static_cast<std::size_t>(batch)) {
    std::vector<i64> idx;
    for (std::size_t i = at; i < std::min(ds.size(), at + static_cast<std::size_t>(batch)); ++i)
      idx.push_back(static_cast<i64>(i));
    auto logits = model.forward(ctx, detail::stack_images(ds.images, idx));
    const i64 K = logits->shape.c, hw = logits->shape.h * logits->shape.w;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto& truth = ds.targets[static_cast<std::size_t>(idx[i])];
      for (i64 p = 0; p < hw; ++p) {
        const T* z = logits->data.data() + (static_cast<i64>(i) * K) * hw + p;
        i64 pred = 0;
        for (i64 k = 1; k < K; ++k)
          if (z[k * hw] > z[pred * hw]) pred = k;
        const int want = static_cast<int>(truth->data[p]);
        if (want != background) {
          ++fg_total;
          if (pred != want) ++fg_wrong;
        }
        if (pred == want) {
          if (want != background) ++tp[want];
        } else {
          if (want != background) ++fn[want];
          if (pred != background) ++fp[pred];
        }
      }
    }
  }
  SegEval out;
  double iou_sum = 0;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    if (c == background) continue;
    if (tp[c] + fn[c] == 0) {
      out.empty_classes.push_back(c);
      continue;
    }
    iou_sum += static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fp[c] + fn[c]);
    ++present;
  }
  out.mean_iou_pct = present ? 100.0 * iou_sum / present : 0.0;
  out.mean_error_pct =
      fg_total ? 100.0 * static_cast<double>(fg_wrong) / static_cast<double>(fg_total) : 0.0;
  return out;
}

struct SptEval {
  double mean_iou_pct = 0;
  double mean_error_pct = 0;
};

// Spatial-transformation metrics: prediction (sigmoid of the logit map) and
// target are both binarized at 0.5; per-sample foreground IoU is averaged
// over the set, error is the missed fraction of true-foreground pixels.
template <class T>
SptEval eval_spt(Model<T>& model, const Dataset<T>& ds, int batch = 16) {
  std::vector<double> ious(ds.size(), 0.0);
  i64 fg_total = 0, fg_wrong = 0;
  Context<T> ctx;
  for (std::size_t at = 0; at < ds.size(); at += static_cast<std::size_t>(batch)) {
    std::vector<i64> idx;
    for (std::size_t i = at; i < std::min(ds.size(), at + static_cast<std::size_t>(batch)); ++i)
      idx.push_back(static_cast<i64>(i));
    auto logits = model.forward(ctx, detail::stack_images(ds.images, idx));
    const i64 hw = logits->shape.h * logits->shape.w;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto& truth = ds.targets[static_cast<std::size_t>(idx[i])];
      i64 inter = 0, uni = 0;
      for (i64 p = 0; p < hw; ++p) {
        // sigmoid(z) >= 0.5 iff z >= 0
        const bool pred = logits->data[static_cast<i64>(i) * hw + p] >= T(0);
        const bool want = truth->data[p] >= static_cast<T>(kForegroundThreshold);
        if (pred && want) ++inter;
        if (pred || want) ++uni;
        if (want) {
          ++fg_total;
          if (!pred) ++fg_wrong;
        }
      }
      ious[static_cast<std::size_t>(idx[i])] =
          uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
    }
  }
  // Canonical summation order keeps the mean bit-identical under shuffling.
  std::vector<double> sorted = ious;
  std::sort(sorted.begin(), sorted.end());
  double sum = 0;
  for (double v : sorted) sum += v;
  SptEval out;
  out.mean_iou_pct = ds.size() ? 100.0 * sum / static_cast<double>(ds.size()) : 0.0;
  out.mean_error_pct =
      fg_total ? 100.0 * static_cast<double>(fg_wrong) / static_cast<double>(fg_total) : 0.0;
  return out;
}

template <class T>
MetricReport evaluate(Model<T>& model, const Dataset<T>& ds) {
  MetricReport r;
  if (ds.size() == 0) return r;
  switch (ds.task) {
    case Task::kClassify: r.classify_error_pct = eval_classification(model, ds); break;
    case Task::kSeg: {
      auto e = eval_seg(model, ds);
      r.mean_iou_pct = e.mean_iou_pct;
      r.mean_error_pct = e.mean_error_pct;
      break;
    }
    case Task::kSpt: {
      auto e = eval_spt(model, ds);
      r.mean_iou_pct = e.mean_iou_pct;
      r.mean_error_pct = e.mean_error_pct;
      break;
    }
  }
  return r;
}

inline const char* kMetricsHeader = "epoch,lr,train_loss,classify_error,mean_iou,mean_error\n";

inline std::string metrics_row(const EpochRow& row) {
  auto cell = [](double v) { return v < 0 ? std::string() : cat(v); };
  return cat(row.epoch, ",", row.lr, ",", row.train_loss, ",", cell(row.eval.classify_error_pct),
             ",", cell(row.eval.mean_iou_pct), ",", cell(row.eval.mean_error_pct), "\n");
}

struct TrainResult {
  std::vector<EpochRow> history;
  std::string final_checkpoint;
};

// Training loop: batches are drawn uniformly with replacement from a seeded
// stream, so "iterations per epoch" is decoupled from dataset passes. Writes
// metrics CSV and checkpoints under cfg.out_dir when set. Aborts with a
// diagnostic naming the first non-finite layer output if the loss diverges.
template <class T>
TrainResult train(Model<T>& model, const Dataset<T>& train_ds, const Dataset<T>& eval_ds,
                  const TrainConfig& cfg) {
  if (train_ds.size() == 0) throw ConfigError("train: empty training set");
  TrainResult result;
  Sgd<T> opt(model.parameters(), static_cast<T>(cfg.weight_decay),
             static_cast<T>(cfg.momentum));
  Rng batch_rng(sub_seed(cfg.seed, "batch"));

  std::ofstream csv;
  const bool emit = !cfg.out_dir.empty();
  if (emit) {
    std::filesystem::create_directories(cfg.out_dir);
    csv.open(cfg.out_dir + "/metrics.csv");
    csv << kMetricsHeader;
  }
  auto checkpoint = [&](const std::string& tag) {
    if (!emit) return std::string();
    std::string path = cat(cfg.out_dir, "/ckpt_", tag, ".mgn");
    model.save(path);
    return path;
  };
  if (cfg.epochs == 0) {
    result.final_checkpoint = checkpoint("final");
    return result;
  }

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg.schedule, epoch, cfg.epochs);
    double loss_sum = 0;
    for (int it = 0; it < cfg.iters_per_epoch; ++it) {
      std::vector<i64> idx(static_cast<std::size_t>(cfg.batch));
      for (auto& v : idx) v = batch_rng.uniform_int(0, static_cast<i64>(train_ds.size()) - 1);
      auto images = detail::stack_images(train_ds.images, idx);
      TensorPtr<T> targets;
      std::vector<int> labels;
      if (train_ds.task == Task::kClassify) {
        for (i64 v : idx) labels.push_back(train_ds.labels[static_cast<std::size_t>(v)]);
      } else {
        targets = detail::stack_images(train_ds.targets, idx);
      }

      Tape<T> tape;
      Context<T> ctx = train_context(tape);
      auto logits = model.forward(ctx, images);
      auto loss = task_loss(ctx, train_ds.task, logits, targets, labels);
      const double loss_v = static_cast<double>(loss->data[0]);
      if (!std::isfinite(loss_v)) {
        auto site = model.first_nonfinite(images);
        throw TrainError(cat("non-finite loss at epoch ", epoch, " iter ", it,
                             site ? cat(": first non-finite tensor at layer ", *site)
                                  : std::string(": loss itself is the first non-finite value")));
      }
      loss_sum += loss_v;
      opt.zero_grad();
      backward_scalar(tape, loss);
      opt.step(static_cast<T>(lr));
    }
    EpochRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = loss_sum / std::max(cfg.iters_per_epoch, 1);
    row.eval = evaluate(model, eval_ds);
    result.history.push_back(row);
    if (emit) csv << metrics_row(row) << std::flush;
    if (cfg.ckpt_every > 0 && (epoch + 1) % cfg.ckpt_every == 0 && epoch + 1 < cfg.epochs)
      checkpoint(cat("epoch", epoch + 1));
  }
  result.final_checkpoint = checkpoint("final");
  return result;
}

}  // namespace mgnet
