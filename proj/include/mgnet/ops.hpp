#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "mgnet/tape.hpp"
#include "mgnet/tensor.hpp"

namespace mgnet {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Unrolls one sample's receptive fields into a (c_in*k*k) x (out_h*out_w)
// column matrix. Out-of-bounds taps are zero (zero padding).
template <class T>
void im2col(const T* x, i64 c_in, i64 h, i64 w, i64 k, i64 stride, i64 pad, i64 out_h, i64 out_w,
            T* col) {
  for (i64 ci = 0; ci < c_in; ++ci) {
    const T* plane = x + ci * h * w;
    for (i64 ky = 0; ky < k; ++ky) {
      for (i64 kx = 0; kx < k; ++kx) {
        T* row = col + ((ci * k + ky) * k + kx) * out_h * out_w;
        for (i64 oy = 0; oy < out_h; ++oy) {
          i64 iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) {
            std::fill(row + oy * out_w, row + (oy + 1) * out_w, T(0));
            continue;
          }
          const T* src = plane + iy * w;
          for (i64 ox = 0; ox < out_w; ++ox) {
            i64 ix = ox * stride + kx - pad;
            row[oy * out_w + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add inverse of im2col.
template <class T>
void col2im_add(const T* col, i64 c_in, i64 h, i64 w, i64 k, i64 stride, i64 pad, i64 out_h,
                i64 out_w, T* x) {
  for (i64 ci = 0; ci < c_in; ++ci) {
    T* plane = x + ci * h * w;
    for (i64 ky = 0; ky < k; ++ky) {
      for (i64 kx = 0; kx < k; ++kx) {
        const T* row = col + ((ci * k + ky) * k + kx) * out_h * out_w;
        for (i64 oy = 0; oy < out_h; ++oy) {
          i64 iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          T* dst = plane + iy * w;
          for (i64 ox = 0; ox < out_w; ++ox) {
            i64 ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w) dst[ix] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-D convolution, zero padding, square kernel. Weight layout is
// (c_out, c_in, k, k), bias is (1, c_out, 1, 1). Implemented as im2col + GEMM;
// the per-output-element accumulation order is fixed, so results are
// bit-reproducible run to run.
template <class T>
TensorPtr<T> conv2d(Context<T>& ctx, const TensorPtr<T>& x, const TensorPtr<T>& w,
                    const TensorPtr<T>& b, i64 stride = 1, i64 pad = 1) {
  const Shape xs = x->shape, ws = w->shape;
  if (ws.h != ws.w) throw ShapeError(cat("conv2d: kernel must be square, got ", ws.str()));
  const i64 k = ws.h, c_out = ws.n, c_in = ws.c;
  if (xs.c != c_in)
    throw ShapeError(
        cat("conv2d: input channels ", xs.c, " != weight c_in ", c_in, " (weight ", ws.str(), ")"));
  if (b->shape.numel() != c_out)
    throw ShapeError(cat("conv2d: bias length ", b->shape.numel(), " != c_out ", c_out));
  if (stride < 1) throw ShapeError(cat("conv2d: stride ", stride, " must be >= 1"));
  const i64 out_h = (xs.h + 2 * pad - k) / stride + 1;
  const i64 out_w = (xs.w + 2 * pad - k) / stride + 1;
  if (out_h < 1 || out_w < 1)
    throw ShapeError(cat("conv2d: kernel ", k, " with pad ", pad, " exceeds input ", xs.str()));

  auto y = make_tensor<T>({xs.n, c_out, out_h, out_w},
                          ctx.taping() && Context<T>::any_requires_grad(x, w, b));
  const i64 ckk = c_in * k * k, ohw = out_h * out_w;
  std::vector<T> col(static_cast<std::size_t>(ckk * ohw));
  detail::ConstMatMap<T> wm(w->data.data(), c_out, ckk);
  for (i64 i = 0; i < xs.n; ++i) {
    detail::im2col(x->data.data() + i * c_in * xs.h * xs.w, c_in, xs.h, xs.w, k, stride, pad, out_h,
                   out_w, col.data());
    detail::ConstMatMap<T> cm(col.data(), ckk, ohw);
    detail::MatMap<T> ym(y->data.data() + i * c_out * ohw, c_out, ohw);
    ym.noalias() = wm * cm;
    for (i64 co = 0; co < c_out; ++co) ym.row(co).array() += b->data[co];
  }
  ctx.count_macs(static_cast<u64>(xs.n) * c_out * ckk * ohw);
  detail::check_finite(*y, "conv2d");

  if (y->requires_grad) {
    ctx.tape->record(y, [x, w, b, y, k, stride, pad, out_h, out_w] {
      if (y->grad.empty()) return;
      const Shape xs = x->shape;
      const i64 c_out = w->shape.n, c_in = w->shape.c;
      const i64 ckk = c_in * k * k, ohw = out_h * out_w;
      if (x->requires_grad) x->ensure_grad();
      if (w->requires_grad) w->ensure_grad();
      if (b->requires_grad) b->ensure_grad();
      std::vector<T> col(static_cast<std::size_t>(ckk * ohw));
      std::vector<T> dcol(static_cast<std::size_t>(ckk * ohw));
      detail::ConstMatMap<T> wm(w->data.data(), c_out, ckk);
      for (i64 i = 0; i < xs.n; ++i) {
        detail::ConstMatMap<T> dym(y->grad.data() + i * c_out * ohw, c_out, ohw);
        if (w->requires_grad) {
          detail::im2col(x->data.data() + i * c_in * xs.h * xs.w, c_in, xs.h, xs.w, k, stride, pad,
                         out_h, out_w, col.data());
          detail::ConstMatMap<T> cm(col.data(), ckk, ohw);
          detail::MatMap<T> dwm(w->grad.data(), c_out, ckk);
          dwm.noalias() += dym * cm.transpose();
        }
        if (b->requires_grad)
          for (i64 co = 0; co < c_out; ++co) b->grad[co] += dym.row(co).sum();
        if (x->requires_grad) {
          detail::MatMap<T> dcm(dcol.data(), ckk, ohw);
          dcm.noalias() = wm.transpose() * dym;
          detail::col2im_add(dcol.data(), c_in, xs.h, xs.w, k, stride, pad, out_h, out_w,
                             x->grad.data() + i * c_in * xs.h * xs.w);
        }
      }
    });
  }
  return y;
}

// 2x2 max pooling, stride 2. Ties go to the first element in row-major window
// order, and backward routes the gradient to that argmax only.
template <class T>
TensorPtr<T> maxpool2x(Context<T>& ctx, const TensorPtr<T>& x) {
  const Shape s = x->shape;
  if (s.h % 2 != 0 || s.w % 2 != 0)
    throw ShapeError(cat("maxpool2x: height and width must be even, got ", s.str()));
  const i64 oh = s.h / 2, ow = s.w / 2;
  auto y = make_tensor<T>({s.n, s.c, oh, ow}, ctx.taping() && x->requires_grad);
  auto argmax = std::make_shared<std::vector<i64>>(static_cast<std::size_t>(y->numel()));
  i64 oi = 0;
  for (i64 n = 0; n < s.n; ++n)
    for (i64 c = 0; c < s.c; ++c)
      for (i64 oy = 0; oy < oh; ++oy)
        for (i64 ox = 0; ox < ow; ++ox, ++oi) {
          i64 best = x->index(n, c, 2 * oy, 2 * ox);
          T bv = x->data[best];
          for (i64 dy = 0; dy < 2; ++dy)
            for (i64 dx = 0; dx < 2; ++dx) {
              i64 idx = x->index(n, c, 2 * oy + dy, 2 * ox + dx);
              if (x->data[idx] > bv) {
                bv = x->data[idx];
                best = idx;
              }
            }
          y->data[oi] = bv;
          (*argmax)[oi] = best;
        }
  detail::check_finite(*y, "maxpool2x");

  if (y->requires_grad) {
    ctx.tape->record(y, [x, y, argmax] {
      if (y->grad.empty()) return;
      x->ensure_grad();
      for (i64 i = 0; i < y->numel(); ++i) x->grad[(*argmax)[i]] += y->grad[i];
    });
  }
  return y;
}

// Nearest-neighbor 2x upsampling: each input pixel becomes a 2x2 block.
template <class T>
TensorPtr<T> upsample_nearest2x(Context<T>& ctx, const TensorPtr<T>& x) {
  const Shape s = x->shape;
  auto y = make_tensor<T>({s.n, s.c, s.h * 2, s.w * 2}, ctx.taping() && x->requires_grad);
  for (i64 n = 0; n < s.n; ++n)
    for (i64 c = 0; c < s.c; ++c)
      for (i64 iy = 0; iy < s.h; ++iy)
        for (i64 ix = 0; ix < s.w; ++ix) {
          T v = x->at(n, c, iy, ix);
          y->at(n, c, 2 * iy, 2 * ix) = v;
          y->at(n, c, 2 * iy, 2 * ix + 1) = v;
          y->at(n, c, 2 * iy + 1, 2 * ix) = v;
          y->at(n, c, 2 * iy + 1, 2 * ix + 1) = v;
        }

  if (y->requires_grad) {
    ctx.tape->record(y, [x, y] {
      if (y->grad.empty()) return;
      x->ensure_grad();
      const Shape s = x->shape;
      for (i64 n = 0; n < s.n; ++n)
        for (i64 c = 0; c < s.c; ++c)
          for (i64 iy = 0; iy < s.h; ++iy)
            for (i64 ix = 0; ix < s.w; ++ix)
              x->grad_at(n, c, iy, ix) +=
                  y->grad_at(n, c, 2 * iy, 2 * ix) + y->grad_at(n, c, 2 * iy, 2 * ix + 1) +
                  y->grad_at(n, c, 2 * iy + 1, 2 * ix) + y->grad_at(n, c, 2 * iy + 1, 2 * ix + 1);
    });
  }
  return y;
}

// 2x2 average pooling, stride 2. Used for building image pyramids.
template <class T>
TensorPtr<T> avgpool2x(Context<T>& ctx, const TensorPtr<T>& x) {
  const Shape s = x->shape;
  if (s.h % 2 != 0 || s.w % 2 != 0)
    throw ShapeError(cat("avgpool2x: height and width must be even, got ", s.str()));
  auto y = make_tensor<T>({s.n, s.c, s.h / 2, s.w / 2}, ctx.taping() && x->requires_grad);
  for (i64 n = 0; n < s.n; ++n)
    for (i64 c = 0; c < s.c; ++c)
      for (i64 oy = 0; oy < s.h / 2; ++oy)
        for (i64 ox = 0; ox < s.w / 2; ++ox)
          y->at(n, c, oy, ox) =
              (x->at(n, c, 2 * oy, 2 * ox) + x->at(n, c, 2 * oy, 2 * ox + 1) +
               x->at(n, c, 2 * oy + 1, 2 * ox) + x->at(n, c, 2 * oy + 1, 2 * ox + 1)) /
              T(4);

  if (y->requires_grad) {
    ctx.tape->record(y, [x, y] {
      if (y->grad.empty()) return;
      x->ensure_grad();
      const Shape ys = y->shape;
      for (i64 n = 0; n < ys.n; ++n)
        for (i64 c = 0; c < ys.c; ++c)
          for (i64 oy = 0; oy < ys.h; ++oy)
            for (i64 ox = 0; ox < ys.w; ++ox) {
              T g = y->grad_at(n, c, oy, ox) / T(4);
              x->grad_at(n, c, 2 * oy, 2 * ox) += g;
              x->grad_at(n, c, 2 * oy, 2 * ox + 1) += g;
              x->grad_at(n, c, 2 * oy + 1, 2 * ox) += g;
              x->grad_at(n, c, 2 * oy + 1, 2 * ox + 1) += g;
            }
    });
  }
  return y;
}

// Replicates the last row and column once (h+1, w+1). Paired with 2x2 kernels
// at pad 0 so those layers preserve spatial size.
template <class T>
TensorPtr<T> replicate_pad_br(Context<T>& ctx, const TensorPtr<T>& x) {
  const Shape s = x->shape;
  auto y = make_tensor<T>({s.n, s.c, s.h + 1, s.w + 1}, ctx.taping() && x->requires_grad);
  for (i64 n = 0; n < s.n; ++n)
    for (i64 c = 0; c < s.c; ++c)
      for (i64 iy = 0; iy <= s.h; ++iy)
        for (i64 ix = 0; ix <= s.w; ++ix)
          y->at(n, c, iy, ix) = x->at(n, c, std::min(iy, s.h - 1), std::min(ix, s.w - 1));

  if (y->requires_grad) {
    ctx.tape->record(y, [x, y] {
      if (y->grad.empty()) return;
      x->ensure_grad();
      const Shape s = x->shape;
      for (i64 n = 0; n < s.n; ++n)
        for (i64 c = 0; c < s.c; ++c)
          for (i64 iy = 0; iy <= s.h; ++iy)
            for (i64 ix = 0; ix <= s.w; ++ix)
              x->grad_at(n, c, std::min(iy, s.h - 1), std::min(ix, s.w - 1)) +=
                  y->grad_at(n, c, iy, ix);
    });
  }
  return y;
}

// Concatenates along the channel axis, in argument order. A single part is
// passed through untouched (no copy).
template <class T>
TensorPtr<T> concat_channels(Context<T>& ctx, const std::vector<TensorPtr<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no parts");
  if (parts.size() == 1) return parts[0];
  const Shape first = parts[0]->shape;
  i64 total_c = 0;
  bool rg = false;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Shape s = parts[i]->shape;
    if (s.n != first.n || s.h != first.h || s.w != first.w)
      throw ShapeError(cat("concat_channels: part ", i, " shape ", s.str(),
                           " does not match part 0 shape ", first.str()));
    total_c += s.c;
    rg = rg || parts[i]->requires_grad;
  }
  auto y = make_tensor<T>({first.n, total_c, first.h, first.w}, ctx.taping() && rg);
  const i64 hw = first.h * first.w;
  for (i64 n = 0; n < first.n; ++n) {
    i64 co = 0;
    for (const auto& p : parts) {
      std::copy_n(p->data.data() + n * p->shape.c * hw, p->shape.c * hw,
                  y->data.data() + (n * total_c + co) * hw);
      co += p->shape.c;
    }
  }

  if (y->requires_grad) {
    ctx.tape->record(y, [parts, y, hw, total_c] {
      if (y->grad.empty()) return;
      for (i64 n = 0; n < y->shape.n; ++n) {
        i64 co = 0;
        for (const auto& p : parts) {
          if (p->requires_grad) {
            p->ensure_grad();
            const T* src = y->grad.data() + (n * total_c + co) * hw;
            T* dst = p->grad.data() + n * p->shape.c * hw;
            for (i64 i = 0; i < p->shape.c * hw; ++i) dst[i] += src[i];
          }
          co += p->shape.c;
        }
      }
    });
  }
  return y;
}

template <class T>
TensorPtr<T> relu(Context<T>& ctx, const TensorPtr<T>& x) {
  auto y = make_tensor<T>(x->shape, ctx.taping() && x->requires_grad);
  for (i64 i = 0; i < x->numel(); ++i) y->data[i] = x->data[i] > T(0) ? x->data[i] : T(0);

  if (y->requires_grad) {
    ctx.tape->record(y, [x, y] {
      if (y->grad.empty()) return;
      x->ensure_grad();
      for (i64 i = 0; i < x->numel(); ++i)
        if (x->data[i] > T(0)) x->grad[i] += y->grad[i];
    });
  }
  return y;
}

template <class T>
TensorPtr<T> sigmoid(Context<T>& ctx, const TensorPtr<T>& x) {
  auto y = make_tensor<T>(x->shape, ctx.taping() && x->requires_grad);
  for (i64 i = 0; i < x->numel(); ++i) {
    double z = static_cast<double>(x->data[i]);
    y->data[i] = static_cast<T>(z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                                       : std::exp(z) / (1.0 + std::exp(z)));
  }

  if (y->requires_grad) {
    ctx.tape->record(y, [x, y] {
      if (y->grad.empty()) return;
      x->ensure_grad();
      for (i64 i = 0; i < x->numel(); ++i) {
        T s = y->data[i];
        x->grad[i] += y->grad[i] * s * (T(1) - s);
      }
    });
  }
  return y;
}

// Elementwise sum of two same-shape tensors.
template <class T>
TensorPtr<T> add(Context<T>& ctx, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (!(a->shape == b->shape))
    throw ShapeError(cat("add: shape ", a->shape.str(), " != ", b->shape.str()));
  auto y =
      make_tensor<T>(a->shape, ctx.taping() && Context<T>::any_requires_grad(a, b));
  for (i64 i = 0; i < a->numel(); ++i) y->data[i] = a->data[i] + b->data[i];

  if (y->requires_grad) {
    ctx.tape->record(y, [a, b, y] {
      if (y->grad.empty()) return;
      if (a->requires_grad) {
        a->ensure_grad();
        for (i64 i = 0; i < y->numel(); ++i) a->grad[i] += y->grad[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (i64 i = 0; i < y->numel(); ++i) b->grad[i] += y->grad[i];
      }
    });
  }
  return y;
}

// Fully-connected layer on (n, c, 1, 1) activations. Weight (out, in, 1, 1).
template <class T>
TensorPtr<T> linear(Context<T>& ctx, const TensorPtr<T>& x, const TensorPtr<T>& w,
                    const TensorPtr<T>& b) {
  const Shape xs = x->shape;
  if (xs.h != 1 || xs.w != 1)
    throw ShapeError(cat("linear: expected (n,c,1,1) input, got ", xs.str()));
  const i64 in = w->shape.c, out = w->shape.n;
  if (xs.c != in) throw ShapeError(cat("linear: input features ", xs.c, " != weight in ", in));
  if (b->shape.numel() != out)
    throw ShapeError(cat("linear: bias length ", b->shape.numel(), " != out ", out));

  auto y = make_tensor<T>({xs.n, out, 1, 1}, ctx.taping() && Context<T>::any_requires_grad(x, w, b));
  detail::ConstMatMap<T> xm(x->data.data(), xs.n, in);
  detail::ConstMatMap<T> wm(w->data.data(), out, in);
  detail::MatMap<T> ym(y->data.data(), xs.n, out);
  ym.noalias() = xm * wm.transpose();
  for (i64 i = 0; i < xs.n; ++i)
    for (i64 o = 0; o < out; ++o) y->data[i * out + o] += b->data[o];
  ctx.count_macs(static_cast<u64>(xs.n) * in * out);
  detail::check_finite(*y, "linear");

  if (y->requires_grad) {
    ctx.tape->record(y, [x, w, b, y, in, out] {
      if (y->grad.empty()) return;
      const i64 n = x->shape.n;
      detail::ConstMatMap<T> dym(y->grad.data(), n, out);
      if (w->requires_grad) {
        w->ensure_grad();
        detail::ConstMatMap<T> xm(x->data.data(), n, in);
        detail::MatMap<T> dwm(w->grad.data(), out, in);
        dwm.noalias() += dym.transpose() * xm;
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (i64 i = 0; i < n; ++i)
          for (i64 o = 0; o < out; ++o) b->grad[o] += y->grad[i * out + o];
      }
      if (x->requires_grad) {
        x->ensure_grad();
        detail::ConstMatMap<T> wm(w->data.data(), out, in);
        detail::MatMap<T> dxm(x->grad.data(), n, in);
        dxm.noalias() += dym * wm;
      }
    });
  }
  return y;
}

// Mean over the spatial extent, (n, c, h, w) -> (n, c, 1, 1).
template <class T>
TensorPtr<T> global_avg_pool(Context<T>& ctx, const TensorPtr<T>& x) {
  const Shape s = x->shape;
  auto y = make_tensor<T>({s.n, s.c, 1, 1}, ctx.taping() && x->requires_grad);
  const i64 hw = s.h * s.w;
  for (i64 n = 0; n < s.n; ++n)
    for (i64 c = 0; c < s.c; ++c) {
      T acc = 0;
      const T* p = x->data.data() + (n * s.c + c) * hw;
      for (i64 i = 0; i < hw; ++i) acc += p[i];
      y->data[n * s.c + c] = acc / static_cast<T>(hw);
    }

  if (y->requires_grad) {
    ctx.tape->record(y, [x, y, hw] {
      if (y->grad.empty()) return;
      x->ensure_grad();
      const Shape s = x->shape;
      for (i64 n = 0; n < s.n; ++n)
        for (i64 c = 0; c < s.c; ++c) {
          T g = y->grad[n * s.c + c] / static_cast<T>(hw);
          T* p = x->grad.data() + (n * s.c + c) * hw;
          for (i64 i = 0; i < hw; ++i) p[i] += g;
        }
    });
  }
  return y;
}

// Sum of all elements -> scalar (1,1,1,1).
template <class T>
TensorPtr<T> sum_all(Context<T>& ctx, const TensorPtr<T>& x) {
  auto y = make_tensor<T>({1, 1, 1, 1}, ctx.taping() && x->requires_grad);
  T acc = 0;
  for (T v : x->data) acc += v;
  y->data[0] = acc;

  if (y->requires_grad) {
    ctx.tape->record(y, [x, y] {
      if (y->grad.empty()) return;
      x->ensure_grad();
      for (i64 i = 0; i < x->numel(); ++i) x->grad[i] += y->grad[0];
    });
  }
  return y;
}

// Batch normalization state for one channel axis: learned affine plus running
// statistics for eval mode.
template <class T>
struct BatchNorm {
  TensorPtr<T> gamma, beta;               // (1, c, 1, 1), trainable
  TensorPtr<T> running_mean, running_var; // (1, c, 1, 1), buffers
  T eps = T(1e-5);
  T momentum = T(0.1);

  explicit BatchNorm(i64 channels) {
    gamma = full_tensor<T>({1, channels, 1, 1}, T(1), true);
    beta = make_tensor<T>({1, channels, 1, 1}, true);
    running_mean = make_tensor<T>({1, channels, 1, 1});
    running_var = full_tensor<T>({1, channels, 1, 1}, T(1));
  }

  i64 channels() const { return gamma->shape.c; }
};

// Train mode: normalize per channel with batch statistics over (n, h, w),
// update running stats by exponential moving average. Eval mode: normalize
// with the running stats. Variance is the population (biased) estimate.
template <class T>
TensorPtr<T> batchnorm(Context<T>& ctx, const TensorPtr<T>& x, BatchNorm<T>& bn) {
  const Shape s = x->shape;
  if (s.c != bn.channels())
    throw ShapeError(cat("batchnorm: input channels ", s.c, " != parameter channels ",
                         bn.channels()));
  auto y = make_tensor<T>(
      s, ctx.taping() && Context<T>::any_requires_grad(x, bn.gamma, bn.beta));
  const i64 hw = s.h * s.w;
  const i64 count = s.n * hw;
  const bool train = ctx.mode == Mode::kTrain;

  auto mean = std::make_shared<std::vector<T>>(s.c);
  auto invstd = std::make_shared<std::vector<T>>(s.c);
  for (i64 c = 0; c < s.c; ++c) {
    T mu, var;
    if (train) {
      T acc = 0;
      for (i64 n = 0; n < s.n; ++n) {
        const T* p = x->data.data() + (n * s.c + c) * hw;
        for (i64 i = 0; i < hw; ++i) acc += p[i];
      }
      mu = acc / static_cast<T>(count);
      T vacc = 0;
      for (i64 n = 0; n < s.n; ++n) {
        const T* p = x->data.data() + (n * s.c + c) * hw;
        for (i64 i = 0; i < hw; ++i) {
          T d = p[i] - mu;
          vacc += d * d;
        }
      }
      var = vacc / static_cast<T>(count);
      bn.running_mean->data[c] = (T(1) - bn.momentum) * bn.running_mean->data[c] + bn.momentum * mu;
      bn.running_var->data[c] = (T(1) - bn.momentum) * bn.running_var->data[c] + bn.momentum * var;
    } else {
      mu = bn.running_mean->data[c];
      var = bn.running_var->data[c];
    }
    (*mean)[c] = mu;
    (*invstd)[c] = T(1) / std::sqrt(var + bn.eps);
  }
  for (i64 n = 0; n < s.n; ++n)
    for (i64 c = 0; c < s.c; ++c) {
      const T* p = x->data.data() + (n * s.c + c) * hw;
      T* q = y->data.data() + (n * s.c + c) * hw;
      const T g = bn.gamma->data[c], bt = bn.beta->data[c];
      const T mu = (*mean)[c], is = (*invstd)[c];
      for (i64 i = 0; i < hw; ++i) q[i] = g * (p[i] - mu) * is + bt;
    }
  detail::check_finite(*y, "batchnorm");

  if (y->requires_grad) {
    auto gamma = bn.gamma;
    auto beta = bn.beta;
    ctx.tape->record(y, [x, y, gamma, beta, mean, invstd, hw, count, train] {
      if (y->grad.empty()) return;
      const Shape s = x->shape;
      for (i64 c = 0; c < s.c; ++c) {
        const T g = gamma->data[c], mu = (*mean)[c], is = (*invstd)[c];
        // Reductions over the channel slice.
        T sum_dy = 0, sum_dy_xhat = 0;
        for (i64 n = 0; n < s.n; ++n) {
          const T* dy = y->grad.data() + (n * s.c + c) * hw;
          const T* px = x->data.data() + (n * s.c + c) * hw;
          for (i64 i = 0; i < hw; ++i) {
            sum_dy += dy[i];
            sum_dy_xhat += dy[i] * (px[i] - mu) * is;
          }
        }
        if (gamma->requires_grad) {
          gamma->ensure_grad();
          gamma->grad[c] += sum_dy_xhat;
        }
        if (beta->requires_grad) {
          beta->ensure_grad();
          beta->grad[c] += sum_dy;
        }
        if (x->requires_grad) {
          x->ensure_grad();
          const T m = static_cast<T>(count);
          for (i64 n = 0; n < s.n; ++n) {
            const T* dy = y->grad.data() + (n * s.c + c) * hw;
            const T* px = x->data.data() + (n * s.c + c) * hw;
            T* dx = x->grad.data() + (n * s.c + c) * hw;
            for (i64 i = 0; i < hw; ++i) {
              if (train) {
                T xhat = (px[i] - mu) * is;
                dx[i] += g * is / m * (m * dy[i] - sum_dy - xhat * sum_dy_xhat);
              } else {
                dx[i] += g * is * dy[i];
              }
            }
          }
        }
      }
    });
  }
  return y;
}

}  // namespace mgnet
