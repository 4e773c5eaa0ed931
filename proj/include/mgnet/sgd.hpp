#pragma once

#include <vector>

#include "mgnet/tensor.hpp"

namespace mgnet {

// One SGD update with momentum and (coupled) weight decay:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr * v
template <class T>
void sgd_step(Tensor<T>& param, const std::vector<T>& grad, std::vector<T>& velocity, T lr,
              T weight_decay, T momentum) {
  if (lr < T(0)) throw ConfigError(cat("sgd_step: lr ", static_cast<double>(lr), " must be >= 0"));
  if (lr == T(0)) return;  // explicit no-op so zero-lr runs leave weights bit-identical
  if (grad.size() != param.data.size())
    throw ShapeError(cat("sgd_step: grad size ", grad.size(), " != param size ",
                         param.data.size()));
  if (velocity.size() != param.data.size()) velocity.assign(param.data.size(), T(0));
  for (std::size_t i = 0; i < param.data.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i] + weight_decay * param.data[i];
    param.data[i] -= lr * velocity[i];
  }
}

// Momentum-SGD over a fixed parameter list. Holds one velocity buffer per
// parameter; step() consumes the gradients currently stored on the tensors.
template <class T>
class Sgd {
public:
  Sgd(std::vector<TensorPtr<T>> params, T weight_decay, T momentum = T(0.9))
      : params_(std::move(params)), weight_decay_(weight_decay), momentum_(momentum),
        velocity_(params_.size()) {}

  void step(T lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      p.ensure_grad();
      sgd_step(p, p.grad, velocity_[i], lr, weight_decay_, momentum_);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  std::size_t size() const { return params_.size(); }

private:
  std::vector<TensorPtr<T>> params_;
  T weight_decay_;
  T momentum_;
  std::vector<std::vector<T>> velocity_;
};

}  // namespace mgnet
