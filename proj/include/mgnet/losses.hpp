#pragma once

#include <cmath>
#include <vector>

#include "mgnet/ops.hpp"

namespace mgnet {

// Softmax cross-entropy on (n, K, 1, 1) logits against integer class labels.
// Returns the batch-mean loss as a scalar tensor.
template <class T>
TensorPtr<T> softmax_cross_entropy(Context<T>& ctx, const TensorPtr<T>& logits,
                                   const std::vector<int>& labels) {
  const Shape s = logits->shape;
  if (s.h != 1 || s.w != 1)
    throw ShapeError(cat("softmax_cross_entropy: expected (n,K,1,1) logits, got ", s.str()));
  if (static_cast<i64>(labels.size()) != s.n)
    throw ShapeError(cat("softmax_cross_entropy: ", labels.size(), " labels for batch ", s.n));
  const i64 K = s.c;
  for (i64 i = 0; i < s.n; ++i)
    if (labels[i] < 0 || labels[i] >= K)
      throw ShapeError(cat("softmax_cross_entropy: label ", labels[i], " at sample ", i,
                           " outside [0,", K, ")"));

  auto probs = std::make_shared<std::vector<T>>(logits->data.size());
  double total = 0;
  for (i64 i = 0; i < s.n; ++i) {
    const T* z = logits->data.data() + i * K;
    T* p = probs->data() + i * K;
    T zmax = z[0];
    for (i64 k = 1; k < K; ++k) zmax = std::max(zmax, z[k]);
    double denom = 0;
    for (i64 k = 0; k < K; ++k) denom += std::exp(static_cast<double>(z[k] - zmax));
    double lse = std::log(denom) + static_cast<double>(zmax);
    for (i64 k = 0; k < K; ++k)
      p[k] = static_cast<T>(std::exp(static_cast<double>(z[k]) - lse));
    total += lse - static_cast<double>(z[labels[i]]);
  }
  auto loss = make_tensor<T>({1, 1, 1, 1}, ctx.taping() && logits->requires_grad);
  loss->data[0] = static_cast<T>(total / static_cast<double>(s.n));
  detail::check_finite(*loss, "softmax_cross_entropy");

  if (loss->requires_grad) {
    ctx.tape->record(loss, [logits, loss, probs, labels, K] {
      if (loss->grad.empty()) return;
      logits->ensure_grad();
      const i64 n = logits->shape.n;
      const T scale = loss->grad[0] / static_cast<T>(n);
      for (i64 i = 0; i < n; ++i) {
        T* dz = logits->grad.data() + i * K;
        const T* p = probs->data() + i * K;
        for (i64 k = 0; k < K; ++k) dz[k] += scale * (p[k] - (k == labels[i] ? T(1) : T(0)));
      }
    });
  }
  return loss;
}

// Per-pixel softmax cross-entropy on (n, K, h, w) logits. Labels are an
// integer-valued (n, 1, h, w) tensor; every pixel contributes to the mean.
template <class T>
TensorPtr<T> pixel_softmax_cross_entropy(Context<T>& ctx, const TensorPtr<T>& logits,
                                         const TensorPtr<T>& labels) {
  const Shape s = logits->shape;
  const Shape ls = labels->shape;
  if (ls.n != s.n || ls.c != 1 || ls.h != s.h || ls.w != s.w)
    throw ShapeError(cat("pixel_softmax_cross_entropy: labels ", ls.str(),
                         " do not match logits ", s.str()));
  const i64 K = s.c, hw = s.h * s.w;

  auto probs = std::make_shared<std::vector<T>>(logits->data.size());
  auto lbl = std::make_shared<std::vector<int>>(static_cast<std::size_t>(s.n * hw));
  double total = 0;
  for (i64 n = 0; n < s.n; ++n)
    for (i64 i = 0; i < hw; ++i) {
      T raw = labels->data[n * hw + i];
      int y = static_cast<int>(raw);
      if (static_cast<T>(y) != raw || y < 0 || y >= K)
        throw ShapeError(cat("pixel_softmax_cross_entropy: label ", static_cast<double>(raw),
                             " at sample ", n, " pixel ", i, " outside [0,", K, ")"));
      (*lbl)[n * hw + i] = y;
      const i64 base = n * K * hw + i;
      T zmax = logits->data[base];
      for (i64 k = 1; k < K; ++k) zmax = std::max(zmax, logits->data[base + k * hw]);
      double denom = 0;
      for (i64 k = 0; k < K; ++k)
        denom += std::exp(static_cast<double>(logits->data[base + k * hw] - zmax));
      double lse = std::log(denom) + static_cast<double>(zmax);
      for (i64 k = 0; k < K; ++k)
        (*probs)[base + k * hw] =
            static_cast<T>(std::exp(static_cast<double>(logits->data[base + k * hw]) - lse));
      total += lse - static_cast<double>(logits->data[base + static_cast<i64>(y) * hw]);
    }
  auto loss = make_tensor<T>({1, 1, 1, 1}, ctx.taping() && logits->requires_grad);
  loss->data[0] = static_cast<T>(total / static_cast<double>(s.n * hw));
  detail::check_finite(*loss, "pixel_softmax_cross_entropy");

  if (loss->requires_grad) {
    ctx.tape->record(loss, [logits, loss, probs, lbl, K, hw] {
      if (loss->grad.empty()) return;
      logits->ensure_grad();
      const i64 n = logits->shape.n;
      const T scale = loss->grad[0] / static_cast<T>(n * hw);
      for (i64 b = 0; b < n; ++b)
        for (i64 i = 0; i < hw; ++i) {
          const i64 base = b * K * hw + i;
          const int y = (*lbl)[b * hw + i];
          for (i64 k = 0; k < K; ++k)
            logits->grad[base + k * hw] +=
                scale * ((*probs)[base + k * hw] - (k == y ? T(1) : T(0)));
        }
    });
  }
  return loss;
}

// Sigmoid binary cross-entropy between logits and a same-shape target map in
// [0, 1]. Mean over all elements; numerically stable log-sum-exp form.
template <class T>
TensorPtr<T> sigmoid_bce(Context<T>& ctx, const TensorPtr<T>& logits, const TensorPtr<T>& target) {
  if (!(logits->shape == target->shape))
    throw ShapeError(cat("sigmoid_bce: logits ", logits->shape.str(), " != target ",
                         target->shape.str()));
  const i64 n = logits->numel();
  for (i64 i = 0; i < n; ++i)
    if (target->data[i] < T(0) || target->data[i] > T(1))
      throw ShapeError(cat("sigmoid_bce: target value ", static_cast<double>(target->data[i]),
                           " at index ", i, " outside [0,1]"));

  double total = 0;
  for (i64 i = 0; i < n; ++i) {
    double z = static_cast<double>(logits->data[i]);
    double t = static_cast<double>(target->data[i]);
    total += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  auto loss = make_tensor<T>({1, 1, 1, 1}, ctx.taping() && logits->requires_grad);
  loss->data[0] = static_cast<T>(total / static_cast<double>(n));
  detail::check_finite(*loss, "sigmoid_bce");

  if (loss->requires_grad) {
    ctx.tape->record(loss, [logits, target, loss, n] {
      if (loss->grad.empty()) return;
      logits->ensure_grad();
      const T scale = loss->grad[0] / static_cast<T>(n);
      for (i64 i = 0; i < n; ++i) {
        double z = static_cast<double>(logits->data[i]);
        double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        logits->grad[i] += scale * static_cast<T>(sig - static_cast<double>(target->data[i]));
      }
    });
  }
  return loss;
}

}  // namespace mgnet
