#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "mgnet/tensor.hpp"

namespace mgnet {

// Reverse-mode gradient tape. Ops append a backward rule as they execute;
// backward() replays the rules once, in reverse recording order. Rules close
// over shared_ptrs to the tensors they touch, so tensor lifetime outlasts the
// tape replay even if the caller drops its handles. Each recorded node also
// registers its output tensor, so zero_grads() can reset every intermediate
// and make repeated backward passes independent of one another.
template <class T>
class Tape {
public:
  void record(const TensorPtr<T>& output, std::function<void()> backward_rule) {
    outputs_.push_back(output);
    nodes_.push_back(std::move(backward_rule));
  }

  void backward() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  // Clears gradients of all recorded op outputs (leaf tensors are the
  // caller's responsibility).
  void zero_grads() {
    for (auto& t : outputs_) t->zero_grad();
  }

  void clear() {
    nodes_.clear();
    outputs_.clear();
  }
  std::size_t size() const { return nodes_.size(); }

private:
  std::vector<std::function<void()>> nodes_;
  std::vector<TensorPtr<T>> outputs_;
};

// Seeds d(loss)/d(loss) = 1 and replays the tape.
template <class T>
void backward_scalar(Tape<T>& tape, const TensorPtr<T>& loss) {
  if (loss->numel() != 1) throw ShapeError(cat("backward_scalar: loss shape ", loss->shape.str()));
  loss->ensure_grad();
  loss->grad[0] += T(1);
  tape.backward();
}

enum class Mode { kTrain, kEval };

// Per-forward execution context: optional tape (null = no autodiff), train/eval
// switch for batchnorm, and an optional multiply-add counter that conv/linear
// kernels bump with their actual runtime work.
template <class T>
struct Context {
  Tape<T>* tape = nullptr;
  Mode mode = Mode::kEval;
  u64* mac_counter = nullptr;

  bool taping() const { return tape != nullptr; }

  void count_macs(u64 macs) const {
    if (mac_counter) *mac_counter += macs;
  }

  template <class... Ptrs>
  static bool any_requires_grad(const Ptrs&... p) {
    return (... || p->requires_grad);
  }
};

template <class T>
Context<T> train_context(Tape<T>& tape) {
  Context<T> ctx;
  ctx.tape = &tape;
  ctx.mode = Mode::kTrain;
  return ctx;
}

template <class T>
Context<T> eval_context() {
  return Context<T>{};
}

}  // namespace mgnet
