#pragma once

#include <functional>
#include <vector>

#include "mgnet/tape.hpp"
#include "mgnet/tensor.hpp"

namespace mgnet {

// Central-difference check of tape gradients, for 64-bit verification runs.
// `f` must produce a scalar from the given leaves (any tensors it closes over
// are held fixed). Returns the max over all leaf coordinates of
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).
template <class T>
double grad_check_params(const std::function<TensorPtr<T>(Context<T>&)>& f,
                         const std::vector<TensorPtr<T>>& leaves, double eps) {
  // Analytic pass.
  Tape<T> tape;
  Context<T> ctx = train_context(tape);
  for (auto& leaf : leaves) {
    leaf->requires_grad = true;
    leaf->grad.clear();
  }
  auto loss = f(ctx);
  if (loss->numel() != 1)
    throw ShapeError(cat("grad_check: f returned shape ", loss->shape.str(), ", want scalar"));
  backward_scalar(tape, loss);
  std::vector<std::vector<T>> analytic;
  for (auto& leaf : leaves) {
    leaf->ensure_grad();
    analytic.push_back(leaf->grad);
  }

  // Numeric pass: perturb one coordinate at a time.
  auto eval = [&]() -> double {
    Context<T> c;
    c.mode = Mode::kTrain;
    return static_cast<double>(f(c)->data[0]);
  };
  double worst = 0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = *leaves[li];
    for (i64 i = 0; i < leaf.numel(); ++i) {
      const T saved = leaf.data[i];
      leaf.data[i] = saved + static_cast<T>(eps);
      double fp = eval();
      leaf.data[i] = saved - static_cast<T>(eps);
      double fm = eval();
      leaf.data[i] = saved;
      double numeric = (fp - fm) / (2 * eps);
      double a = static_cast<double>(analytic[li][i]);
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// Single-leaf convenience wrapper: checks d f(x) / d x.
template <class T>
double grad_check(const std::function<TensorPtr<T>(Context<T>&, const TensorPtr<T>&)>& f,
                  const TensorPtr<T>& x, double eps) {
  return grad_check_params<T>([&](Context<T>& ctx) { return f(ctx, x); }, {x}, eps);
}

}  // namespace mgnet
