#pragma once

#include <vector>

#include "mgnet/ops.hpp"

namespace mgnet {

// Ordered list of grids at dyadic scales, index 0 = finest. The unit of
// representation flowing through a multigrid network.
template <class T>
using Pyramid = std::vector<TensorPtr<T>>;

template <class T>
void validate_pyramid(const Pyramid<T>& p) {
  if (p.empty()) throw ShapeError("pyramid: needs at least one grid");
  const Shape f = p[0]->shape;
  if (f.h < 1 || f.w < 1) throw ShapeError(cat("pyramid: finest grid ", f.str(), " is empty"));
  for (std::size_t l = 1; l < p.size(); ++l) {
    const Shape a = p[l - 1]->shape, b = p[l]->shape;
    if (b.n != f.n) throw ShapeError(cat("pyramid: level ", l, " batch ", b.n, " != ", f.n));
    if (b.h * 2 != a.h || b.w * 2 != a.w)
      throw ShapeError(cat("pyramid: level ", l, " shape ", b.str(),
                           " is not an exact 2x reduction of ", a.str()));
  }
}

template <class T>
std::vector<i64> channel_plan(const Pyramid<T>& p) {
  std::vector<i64> plan;
  plan.reserve(p.size());
  for (const auto& g : p) plan.push_back(g->shape.c);
  return plan;
}

// Channels entering the convolution at `level`: the level's own channels plus
// those of whichever neighbors exist one step finer and one step coarser.
inline i64 mg_gather_channels(const std::vector<i64>& plan, std::size_t level) {
  i64 c = plan[level];
  if (level > 0) c += plan[level - 1];
  if (level + 1 < plan.size()) c += plan[level + 1];
  return c;
}

// Independent per-level 3x3 filter banks for one multigrid convolution.
// w[l] has shape (out_plan[l], mg_gather_channels(in_plan, l), k, k).
template <class T>
struct MgConvWeights {
  std::vector<TensorPtr<T>> w, b;
  i64 kernel = 3;

  std::size_t levels() const { return w.size(); }
};

// He-initialized weights for an mg convolution mapping in_plan -> out_plan.
template <class T>
MgConvWeights<T> make_mg_weights(Rng& rng, const std::vector<i64>& in_plan,
                                 const std::vector<i64>& out_plan, i64 kernel = 3,
                                 bool init = true) {
  if (in_plan.size() != out_plan.size())
    throw ShapeError(cat("make_mg_weights: in plan ", in_plan.size(), " levels vs out plan ",
                         out_plan.size()));
  MgConvWeights<T> mw;
  mw.kernel = kernel;
  for (std::size_t l = 0; l < in_plan.size(); ++l) {
    const i64 c_in = mg_gather_channels(in_plan, l);
    const i64 fan_in = c_in * kernel * kernel;
    auto w = init ? random_normal<T>({out_plan[l], c_in, kernel, kernel}, rng, 0.0,
                                     std::sqrt(2.0 / static_cast<double>(fan_in)), true)
                  : make_tensor<T>({out_plan[l], c_in, kernel, kernel}, true);
    mw.w.push_back(w);
    mw.b.push_back(make_tensor<T>({1, out_plan[l], 1, 1}, true));
  }
  return mw;
}

// Multigrid convolution: per output level, rescale the neighboring grids to
// that level's resolution (max-pool the finer, nearest-upsample the coarser),
// concatenate channels fine-to-coarse, then convolve 3x3 with same padding.
// On a 1-level pyramid this reduces to a plain conv2d.
template <class T>
Pyramid<T> mg_conv(Context<T>& ctx, const Pyramid<T>& p, const MgConvWeights<T>& mw) {
  validate_pyramid(p);
  if (mw.levels() != p.size())
    throw ShapeError(cat("mg_conv: weights cover ", mw.levels(), " levels, pyramid has ",
                         p.size()));
  Pyramid<T> out;
  out.reserve(p.size());
  for (std::size_t l = 0; l < p.size(); ++l) {
    std::vector<TensorPtr<T>> parts;
    if (l > 0) parts.push_back(maxpool2x(ctx, p[l - 1]));
    parts.push_back(p[l]);
    if (l + 1 < p.size()) parts.push_back(upsample_nearest2x(ctx, p[l + 1]));
    auto gathered = concat_channels(ctx, parts);
    if (gathered->shape.c != mw.w[l]->shape.c)
      throw ShapeError(cat("mg_conv: level ", l, " gathered ", gathered->shape.c,
                           " channels but weights expect ", mw.w[l]->shape.c));
    out.push_back(conv2d(ctx, gathered, mw.w[l], mw.b[l], 1, mw.kernel / 2));
  }
  return out;
}

// Depth-wise reduction of a whole pyramid: every grid is max-pooled 2x2.
// Grids that cannot be pooled (odd or unit extent) sit at the coarse end by
// the dyadic invariant and are dropped. Failing on the finest grid is an
// error since the pyramid would vanish.
template <class T>
Pyramid<T> pyramid_pool(Context<T>& ctx, const Pyramid<T>& p) {
  validate_pyramid(p);
  Pyramid<T> out;
  for (std::size_t l = 0; l < p.size(); ++l) {
    const Shape s = p[l]->shape;
    const bool poolable = s.h % 2 == 0 && s.w % 2 == 0 && s.h >= 2 && s.w >= 2;
    if (!poolable) {
      if (l == 0)
        throw ShapeError(cat("pyramid_pool: finest grid ", s.str(), " cannot be pooled"));
      continue;  // coarse grid dropped
    }
    out.push_back(maxpool2x(ctx, p[l]));
  }
  return out;
}

// Builds the network input pyramid from an image: level l is the image
// average-pooled l times, then (optionally) mapped through that level's own
// stem convolution. Requires h, w divisible by 2^(levels-1).
template <class T>
Pyramid<T> build_input_pyramid(Context<T>& ctx, const TensorPtr<T>& image, int levels,
                               const MgConvWeights<T>* stems = nullptr) {
  if (levels < 1) throw ShapeError(cat("build_input_pyramid: levels ", levels));
  const Shape s = image->shape;
  const i64 factor = i64(1) << (levels - 1);
  if (s.h % factor != 0 || s.w % factor != 0)
    throw ShapeError(cat("build_input_pyramid: image ", s.str(), " not divisible by 2^",
                         levels - 1));
  if (stems && static_cast<int>(stems->levels()) != levels)
    throw ShapeError(cat("build_input_pyramid: ", stems->levels(), " stems for ", levels,
                         " levels"));
  Pyramid<T> out;
  TensorPtr<T> cur = image;
  for (int l = 0; l < levels; ++l) {
    if (l > 0) cur = avgpool2x(ctx, cur);
    out.push_back(stems ? conv2d(ctx, cur, stems->w[l], stems->b[l], 1, stems->kernel / 2) : cur);
  }
  return out;
}

// Per-grid elementwise helpers.
template <class T>
Pyramid<T> relu_per_grid(Context<T>& ctx, const Pyramid<T>& p) {
  Pyramid<T> out;
  out.reserve(p.size());
  for (const auto& g : p) out.push_back(relu(ctx, g));
  return out;
}

template <class T>
Pyramid<T> add_per_grid(Context<T>& ctx, const Pyramid<T>& a, const Pyramid<T>& b) {
  if (a.size() != b.size())
    throw ShapeError(cat("add_per_grid: ", a.size(), " vs ", b.size(), " levels"));
  Pyramid<T> out;
  out.reserve(a.size());
  for (std::size_t l = 0; l < a.size(); ++l) out.push_back(add(ctx, a[l], b[l]));
  return out;
}

}  // namespace mgnet
