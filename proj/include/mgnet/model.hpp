#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mgnet/checkpoint.hpp"
#include "mgnet/losses.hpp"
#include "mgnet/pyramid.hpp"

namespace mgnet {

// One row of the cost table: a single convolution (or the linear head) with
// its per-sample multiply-add count. k == 0 marks a linear layer.
struct CostRow {
  std::string name;
  i64 c_in = 0, c_out = 0, k = 0;
  i64 out_h = 0, out_w = 0;
  u64 params = 0;
  u64 macs = 0;
};

// Mutable state threaded through a forward pass: the original input image
// (progressive stages read it when they activate a finer level), the live
// pyramid, and a stack of saved pyramids for encoder-decoder skips.
template <class T>
struct ModelState {
  TensorPtr<T> image;
  Pyramid<T> pyr;
  std::vector<Pyramid<T>> skips;
};

template <class T>
using ParamVisitor =
    std::function<void(const std::string& name, const TensorPtr<T>& t, bool trainable)>;

template <class T>
class Layer {
public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  virtual void forward(ModelState<T>& st, Context<T>& ctx) = 0;
  virtual void visit(const ParamVisitor<T>&) {}
  // Number of weighted stages this layer contributes to the network's named
  // depth (residual units count their two convolutions).
  virtual int stages() const { return 0; }
  virtual void cost_rows(std::vector<CostRow>&) const {}

  const std::string& name() const { return name_; }

protected:
  std::string name_;
};

namespace detail {

template <class T>
void visit_bank(const ParamVisitor<T>& v, const std::string& base, const MgConvWeights<T>& mw,
                int lo) {
  for (std::size_t l = 0; l < mw.levels(); ++l) {
    v(cat(base, ".", lo + static_cast<int>(l), ".w"), mw.w[l], true);
    v(cat(base, ".", lo + static_cast<int>(l), ".b"), mw.b[l], true);
  }
}

template <class T>
void visit_bn(const ParamVisitor<T>& v, const std::string& base, std::vector<BatchNorm<T>>& bns,
              int lo) {
  for (std::size_t l = 0; l < bns.size(); ++l) {
    const std::string p = cat(base, ".", lo + static_cast<int>(l));
    v(p + ".gamma", bns[l].gamma, true);
    v(p + ".beta", bns[l].beta, true);
    v(p + ".mean", bns[l].running_mean, false);
    v(p + ".var", bns[l].running_var, false);
  }
}

template <class T>
std::vector<BatchNorm<T>> make_bns(const std::vector<i64>& plan) {
  std::vector<BatchNorm<T>> bns;
  bns.reserve(plan.size());
  for (i64 c : plan) bns.emplace_back(c);
  return bns;
}

inline u64 conv_params(i64 c_out, i64 c_in, i64 k) {
  return static_cast<u64>(c_out) * c_in * k * k + static_cast<u64>(c_out);
}

}  // namespace detail

// Builds the initial pyramid over levels [lo, hi] from the image: level l is
// the image average-pooled l times followed by that level's stem convolution.
// Optionally batchnorm + relu, skipped for residual trunks which pre-activate.
template <class T>
class StemLayer : public Layer<T> {
public:
  StemLayer(std::string name, int lo, int hi, i64 in_channels, std::vector<i64> out_plan,
            std::vector<i64> out_sizes, bool bn_relu, bool counted, Rng& rng, bool init)
      : Layer<T>(std::move(name)), lo_(lo), hi_(hi), bn_relu_(bn_relu), counted_(counted),
        out_plan_(std::move(out_plan)), out_sizes_(std::move(out_sizes)) {
    const std::vector<i64> in_plan(out_plan_.size(), in_channels);
    // Per-level independent convs straight from the image: no cross-level
    // gather, so build each as a 1-level bank.
    for (std::size_t l = 0; l < out_plan_.size(); ++l) {
      auto bank = make_mg_weights<T>(rng, {in_channels}, {out_plan_[l]}, 3, init);
      w_.push_back(bank.w[0]);
      b_.push_back(bank.b[0]);
    }
    if (bn_relu_) bns_ = detail::make_bns<T>(out_plan_);
  }

  void forward(ModelState<T>& st, Context<T>& ctx) override {
    st.pyr.clear();
    TensorPtr<T> cur = st.image;
    for (int l = 0; l < lo_; ++l) cur = avgpool2x(ctx, cur);
    for (int l = lo_; l <= hi_; ++l) {
      if (l > lo_) cur = avgpool2x(ctx, cur);
      const std::size_t i = static_cast<std::size_t>(l - lo_);
      auto g = conv2d(ctx, cur, w_[i], b_[i], 1, 1);
      if (bn_relu_) g = relu(ctx, batchnorm(ctx, g, bns_[i]));
      st.pyr.push_back(g);
    }
  }

  void visit(const ParamVisitor<T>& v) override {
    for (std::size_t l = 0; l < w_.size(); ++l) {
      v(cat(this->name_, ".", lo_ + static_cast<int>(l), ".w"), w_[l], true);
      v(cat(this->name_, ".", lo_ + static_cast<int>(l), ".b"), b_[l], true);
    }
    if (bn_relu_) detail::visit_bn(v, this->name_ + ".bn", bns_, lo_);
  }

  int stages() const override { return counted_ ? 1 : 0; }

  void cost_rows(std::vector<CostRow>& rows) const override {
    for (std::size_t l = 0; l < out_plan_.size(); ++l) {
      const i64 c_in = w_[l]->shape.c;
      const i64 hw = out_sizes_[l];
      rows.push_back({cat(this->name_, "[l", lo_ + static_cast<int>(l), "]"), c_in, out_plan_[l],
                      3, hw, hw, detail::conv_params(out_plan_[l], c_in, 3),
                      static_cast<u64>(out_plan_[l]) * c_in * 9 * hw * hw});
    }
  }

private:
  int lo_, hi_;
  bool bn_relu_, counted_;
  std::vector<i64> out_plan_, out_sizes_;
  std::vector<TensorPtr<T>> w_, b_;
  std::vector<BatchNorm<T>> bns_;
};

// Activates one finer pyramid level mid-network: the image is average-pooled
// down to that level and passed through a fresh stem convolution, and the
// result is prepended to the pyramid. Input adapter; does not count as depth.
template <class T>
class ActivateLevelLayer : public Layer<T> {
public:
  ActivateLevelLayer(std::string name, int level, i64 in_channels, i64 out_channels, i64 out_size,
                     bool bn_relu, Rng& rng, bool init)
      : Layer<T>(std::move(name)), level_(level), out_channels_(out_channels),
        out_size_(out_size), bn_relu_(bn_relu) {
    auto bank = make_mg_weights<T>(rng, {in_channels}, {out_channels}, 3, init);
    w_ = bank.w[0];
    b_ = bank.b[0];
    if (bn_relu_) bns_ = detail::make_bns<T>({out_channels});
  }

  void forward(ModelState<T>& st, Context<T>& ctx) override {
    TensorPtr<T> cur = st.image;
    for (int l = 0; l < level_; ++l) cur = avgpool2x(ctx, cur);
    auto g = conv2d(ctx, cur, w_, b_, 1, 1);
    if (bn_relu_) g = relu(ctx, batchnorm(ctx, g, bns_[0]));
    st.pyr.insert(st.pyr.begin(), g);
  }

  void visit(const ParamVisitor<T>& v) override {
    v(cat(this->name_, ".", level_, ".w"), w_, true);
    v(cat(this->name_, ".", level_, ".b"), b_, true);
    if (bn_relu_) detail::visit_bn(v, this->name_ + ".bn", bns_, level_);
  }

  void cost_rows(std::vector<CostRow>& rows) const override {
    const i64 c_in = w_->shape.c;
    rows.push_back({cat(this->name_, "[l", level_, "]"), c_in, out_channels_, 3, out_size_,
                    out_size_, detail::conv_params(out_channels_, c_in, 3),
                    static_cast<u64>(out_channels_) * c_in * 9 * out_size_ * out_size_});
  }

private:
  int level_;
  i64 out_channels_, out_size_;
  bool bn_relu_;
  TensorPtr<T> w_, b_;
  std::vector<BatchNorm<T>> bns_;
};

// One multigrid convolution stage, optionally followed by per-grid
// batchnorm + relu.
template <class T>
class MgConvBlock : public Layer<T> {
public:
  MgConvBlock(std::string name, const std::vector<i64>& in_plan, std::vector<i64> out_plan,
              std::vector<i64> out_sizes, int lo, bool bn_relu, Rng& rng, bool init)
      : Layer<T>(std::move(name)), lo_(lo), bn_relu_(bn_relu), in_plan_(in_plan),
        out_plan_(std::move(out_plan)), out_sizes_(std::move(out_sizes)) {
    mw_ = make_mg_weights<T>(rng, in_plan, out_plan_, 3, init);
    if (bn_relu_) bns_ = detail::make_bns<T>(out_plan_);
  }

  void forward(ModelState<T>& st, Context<T>& ctx) override {
    st.pyr = mg_conv(ctx, st.pyr, mw_);
    if (bn_relu_)
      for (std::size_t l = 0; l < st.pyr.size(); ++l)
        st.pyr[l] = relu(ctx, batchnorm(ctx, st.pyr[l], bns_[l]));
  }

  void visit(const ParamVisitor<T>& v) override {
    detail::visit_bank(v, this->name_, mw_, lo_);
    if (bn_relu_) detail::visit_bn(v, this->name_ + ".bn", bns_, lo_);
  }

  int stages() const override { return 1; }

  void cost_rows(std::vector<CostRow>& rows) const override {
    for (std::size_t l = 0; l < out_plan_.size(); ++l) {
      const i64 c_in = mg_gather_channels(in_plan_, l);
      const i64 hw = out_sizes_[l];
      rows.push_back({cat(this->name_, "[l", lo_ + static_cast<int>(l), "]"), c_in, out_plan_[l],
                      3, hw, hw, detail::conv_params(out_plan_[l], c_in, 3),
                      static_cast<u64>(out_plan_[l]) * c_in * 9 * hw * hw});
    }
  }

  const MgConvWeights<T>& weights() const { return mw_; }

private:
  int lo_;
  bool bn_relu_;
  std::vector<i64> in_plan_, out_plan_, out_sizes_;
  MgConvWeights<T> mw_;
  std::vector<BatchNorm<T>> bns_;
};

// Pre-activation residual unit on pyramids:
//   out = shortcut(p) + mgconv2(relu(bn2(mgconv1(relu(bn1(p))))))
// Batchnorm and relu act separately on each grid. The shortcut is the
// identity when the channel plan is unchanged, else a per-level 1x1
// projection.
template <class T>
class ResMgUnit : public Layer<T> {
public:
  ResMgUnit(std::string name, const std::vector<i64>& in_plan, std::vector<i64> out_plan,
            std::vector<i64> out_sizes, int lo, Rng& rng, bool init)
      : Layer<T>(std::move(name)), lo_(lo), in_plan_(in_plan), out_plan_(std::move(out_plan)),
        out_sizes_(std::move(out_sizes)) {
    bn1_ = detail::make_bns<T>(in_plan_);
    conv1_ = make_mg_weights<T>(rng, in_plan_, out_plan_, 3, init);
    bn2_ = detail::make_bns<T>(out_plan_);
    conv2_ = make_mg_weights<T>(rng, out_plan_, out_plan_, 3, init);
    if (in_plan_ != out_plan_) {
      for (std::size_t l = 0; l < in_plan_.size(); ++l) {
        auto bank = make_mg_weights<T>(rng, {in_plan_[l]}, {out_plan_[l]}, 1, init);
        proj_w_.push_back(bank.w[0]);
        proj_b_.push_back(bank.b[0]);
      }
    }
  }

  void forward(ModelState<T>& st, Context<T>& ctx) override {
    Pyramid<T> h = st.pyr;
    for (std::size_t l = 0; l < h.size(); ++l)
      h[l] = relu(ctx, batchnorm(ctx, h[l], bn1_[l]));
    h = mg_conv(ctx, h, conv1_);
    for (std::size_t l = 0; l < h.size(); ++l)
      h[l] = relu(ctx, batchnorm(ctx, h[l], bn2_[l]));
    h = mg_conv(ctx, h, conv2_);
    Pyramid<T> shortcut = st.pyr;
    if (!proj_w_.empty())
      for (std::size_t l = 0; l < shortcut.size(); ++l)
        shortcut[l] = conv2d(ctx, shortcut[l], proj_w_[l], proj_b_[l], 1, 0);
    st.pyr = add_per_grid(ctx, shortcut, h);
  }

  void visit(const ParamVisitor<T>& v) override {
    detail::visit_bn(v, this->name_ + ".bn1", bn1_, lo_);
    detail::visit_bank(v, this->name_ + ".conv1", conv1_, lo_);
    detail::visit_bn(v, this->name_ + ".bn2", bn2_, lo_);
    detail::visit_bank(v, this->name_ + ".conv2", conv2_, lo_);
    for (std::size_t l = 0; l < proj_w_.size(); ++l) {
      v(cat(this->name_, ".proj.", lo_ + static_cast<int>(l), ".w"), proj_w_[l], true);
      v(cat(this->name_, ".proj.", lo_ + static_cast<int>(l), ".b"), proj_b_[l], true);
    }
  }

  int stages() const override { return 2; }

  void cost_rows(std::vector<CostRow>& rows) const override {
    for (std::size_t l = 0; l < out_plan_.size(); ++l) {
      const i64 hw = out_sizes_[l];
      const i64 cin1 = mg_gather_channels(in_plan_, l);
      rows.push_back({cat(this->name_, ".conv1[l", lo_ + static_cast<int>(l), "]"), cin1,
                      out_plan_[l], 3, hw, hw, detail::conv_params(out_plan_[l], cin1, 3),
                      static_cast<u64>(out_plan_[l]) * cin1 * 9 * hw * hw});
      const i64 cin2 = mg_gather_channels(out_plan_, l);
      rows.push_back({cat(this->name_, ".conv2[l", lo_ + static_cast<int>(l), "]"), cin2,
                      out_plan_[l], 3, hw, hw, detail::conv_params(out_plan_[l], cin2, 3),
                      static_cast<u64>(out_plan_[l]) * cin2 * 9 * hw * hw});
      if (!proj_w_.empty())
        rows.push_back({cat(this->name_, ".proj[l", lo_ + static_cast<int>(l), "]"), in_plan_[l],
                        out_plan_[l], 1, hw, hw, detail::conv_params(out_plan_[l], in_plan_[l], 1),
                        static_cast<u64>(out_plan_[l]) * in_plan_[l] * hw * hw});
    }
  }

private:
  int lo_;
  std::vector<i64> in_plan_, out_plan_, out_sizes_;
  std::vector<BatchNorm<T>> bn1_, bn2_;
  MgConvWeights<T> conv1_, conv2_;
  std::vector<TensorPtr<T>> proj_w_, proj_b_;
};

// Depth-wise pyramid reduction between sections.
template <class T>
class PyramidPoolLayer : public Layer<T> {
public:
  explicit PyramidPoolLayer(std::string name) : Layer<T>(std::move(name)) {}
  void forward(ModelState<T>& st, Context<T>& ctx) override {
    st.pyr = pyramid_pool(ctx, st.pyr);
  }
};

// Truncates the pyramid to its finest `keep` grids. Used near dense outputs
// where coarser grids can no longer reach the output.
template <class T>
class DropCoarseLayer : public Layer<T> {
public:
  DropCoarseLayer(std::string name, std::size_t keep)
      : Layer<T>(std::move(name)), keep_(keep) {}
  void forward(ModelState<T>& st, Context<T>&) override {
    if (st.pyr.size() > keep_) st.pyr.resize(keep_);
  }

private:
  std::size_t keep_;
};

template <class T>
class SkipPushLayer : public Layer<T> {
public:
  explicit SkipPushLayer(std::string name) : Layer<T>(std::move(name)) {}
  void forward(ModelState<T>& st, Context<T>&) override { st.skips.push_back(st.pyr); }
};

// Pops the top skip pyramid and concatenates it channel-wise, level by level.
template <class T>
class SkipConcatLayer : public Layer<T> {
public:
  explicit SkipConcatLayer(std::string name) : Layer<T>(std::move(name)) {}
  void forward(ModelState<T>& st, Context<T>& ctx) override {
    if (st.skips.empty()) throw ShapeError(cat(this->name_, ": skip stack empty"));
    Pyramid<T> skip = st.skips.back();
    st.skips.pop_back();
    if (skip.size() != st.pyr.size())
      throw ShapeError(cat(this->name_, ": skip has ", skip.size(), " levels, pyramid ",
                           st.pyr.size()));
    for (std::size_t l = 0; l < st.pyr.size(); ++l)
      st.pyr[l] = concat_channels(ctx, {st.pyr[l], skip[l]});
  }
};

// Decoder upsampling stage: nearest 2x upsample of every grid, then a 2x2
// convolution (replicate-padded bottom/right) so spatial size is preserved.
template <class T>
class UpConvLayer : public Layer<T> {
public:
  UpConvLayer(std::string name, const std::vector<i64>& in_plan, std::vector<i64> out_plan,
              std::vector<i64> out_sizes, int lo, Rng& rng, bool init)
      : Layer<T>(std::move(name)), lo_(lo), in_plan_(in_plan), out_plan_(std::move(out_plan)),
        out_sizes_(std::move(out_sizes)) {
    for (std::size_t l = 0; l < in_plan_.size(); ++l) {
      auto bank = make_mg_weights<T>(rng, {in_plan_[l]}, {out_plan_[l]}, 2, init);
      w_.push_back(bank.w[0]);
      b_.push_back(bank.b[0]);
    }
    bns_ = detail::make_bns<T>(out_plan_);
  }

  void forward(ModelState<T>& st, Context<T>& ctx) override {
    for (std::size_t l = 0; l < st.pyr.size(); ++l) {
      auto up = upsample_nearest2x(ctx, st.pyr[l]);
      auto padded = replicate_pad_br(ctx, up);
      auto g = conv2d(ctx, padded, w_[l], b_[l], 1, 0);
      st.pyr[l] = relu(ctx, batchnorm(ctx, g, bns_[l]));
    }
  }

  void visit(const ParamVisitor<T>& v) override {
    for (std::size_t l = 0; l < w_.size(); ++l) {
      v(cat(this->name_, ".", lo_ + static_cast<int>(l), ".w"), w_[l], true);
      v(cat(this->name_, ".", lo_ + static_cast<int>(l), ".b"), b_[l], true);
    }
    detail::visit_bn(v, this->name_ + ".bn", bns_, lo_);
  }

  int stages() const override { return 1; }

  void cost_rows(std::vector<CostRow>& rows) const override {
    for (std::size_t l = 0; l < out_plan_.size(); ++l) {
      const i64 hw = out_sizes_[l];
      rows.push_back({cat(this->name_, "[l", lo_ + static_cast<int>(l), "]"), in_plan_[l],
                      out_plan_[l], 2, hw, hw, detail::conv_params(out_plan_[l], in_plan_[l], 2),
                      static_cast<u64>(out_plan_[l]) * in_plan_[l] * 4 * hw * hw});
    }
  }

private:
  int lo_;
  std::vector<i64> in_plan_, out_plan_, out_sizes_;
  std::vector<TensorPtr<T>> w_, b_;
  std::vector<BatchNorm<T>> bns_;
};

// Classification head: global average pool over the coarsest grid, then one
// linear layer to class logits.
template <class T>
class ClassifierHead : public Layer<T> {
public:
  ClassifierHead(std::string name, i64 in_features, i64 classes, Rng& rng, bool init)
      : Layer<T>(std::move(name)), in_features_(in_features), classes_(classes) {
    w_ = init ? random_normal<T>({classes, in_features, 1, 1}, rng, 0.0,
                                 std::sqrt(2.0 / static_cast<double>(in_features)), true)
              : make_tensor<T>({classes, in_features, 1, 1}, true);
    b_ = make_tensor<T>({1, classes, 1, 1}, true);
  }

  void forward(ModelState<T>& st, Context<T>& ctx) override {
    auto pooled = global_avg_pool(ctx, st.pyr.back());
    st.pyr = {linear(ctx, pooled, w_, b_)};
  }

  void visit(const ParamVisitor<T>& v) override {
    v(this->name_ + ".w", w_, true);
    v(this->name_ + ".b", b_, true);
  }

  int stages() const override { return 1; }

  void cost_rows(std::vector<CostRow>& rows) const override {
    rows.push_back({this->name_, in_features_, classes_, 0, 1, 1,
                    static_cast<u64>(classes_) * in_features_ + static_cast<u64>(classes_),
                    static_cast<u64>(classes_) * in_features_});
  }

private:
  i64 in_features_, classes_;
  TensorPtr<T> w_, b_;
};

// Dense head: 1x1 convolution on the finest grid to per-pixel outputs.
template <class T>
class DenseHead : public Layer<T> {
public:
  DenseHead(std::string name, i64 in_channels, i64 out_channels, i64 out_size, Rng& rng, bool init)
      : Layer<T>(std::move(name)), out_size_(out_size) {
    auto bank = make_mg_weights<T>(rng, {in_channels}, {out_channels}, 1, init);
    w_ = bank.w[0];
    b_ = bank.b[0];
  }

  void forward(ModelState<T>& st, Context<T>& ctx) override {
    st.pyr = {conv2d(ctx, st.pyr[0], w_, b_, 1, 0)};
  }

  void visit(const ParamVisitor<T>& v) override {
    v(this->name_ + ".w", w_, true);
    v(this->name_ + ".b", b_, true);
  }

  int stages() const override { return 1; }

  void cost_rows(std::vector<CostRow>& rows) const override {
    const i64 c_in = w_->shape.c, c_out = w_->shape.n;
    rows.push_back({this->name_, c_in, c_out, 1, out_size_, out_size_,
                    detail::conv_params(c_out, c_in, 1),
                    static_cast<u64>(c_out) * c_in * out_size_ * out_size_});
  }

private:
  i64 out_size_;
  TensorPtr<T> w_, b_;
};

// A built network: an ordered layer list plus bookkeeping for checkpoints and
// cost accounting.
template <class T>
class Model {
public:
  std::vector<std::unique_ptr<Layer<T>>> layers;

  TensorPtr<T> forward(Context<T>& ctx, const TensorPtr<T>& image) {
    ModelState<T> st;
    st.image = image;
    for (auto& l : layers) l->forward(st, ctx);
    return st.pyr[0];
  }

  // Runs a no-tape forward and reports the first layer whose output contains
  // a non-finite value. Used for the training-abort diagnostic.
  std::optional<std::string> first_nonfinite(const TensorPtr<T>& image) {
    Context<T> ctx;
    ctx.mode = Mode::kTrain;
    ModelState<T> st;
    st.image = image;
    for (auto& l : layers) {
      l->forward(st, ctx);
      for (std::size_t g = 0; g < st.pyr.size(); ++g)
        if (!st.pyr[g]->all_finite()) return cat(l->name(), " (grid ", g, ")");
    }
    return std::nullopt;
  }

  std::vector<std::pair<std::string, TensorPtr<T>>> named_state() {
    std::vector<std::pair<std::string, TensorPtr<T>>> out;
    for (auto& l : layers)
      l->visit([&](const std::string& n, const TensorPtr<T>& t, bool) { out.emplace_back(n, t); });
    return out;
  }

  std::vector<TensorPtr<T>> parameters() {
    std::vector<TensorPtr<T>> out;
    for (auto& l : layers)
      l->visit([&](const std::string&, const TensorPtr<T>& t, bool trainable) {
        if (trainable) out.push_back(t);
      });
    return out;
  }

  int depth() const {
    int d = 0;
    for (const auto& l : layers) d += l->stages();
    return d;
  }

  u64 param_count() {
    u64 total = 0;
    for (auto& l : layers)
      l->visit([&](const std::string&, const TensorPtr<T>& t, bool trainable) {
        if (trainable) total += static_cast<u64>(t->numel());
      });
    return total;
  }

  std::vector<CostRow> cost_rows() const {
    std::vector<CostRow> rows;
    for (const auto& l : layers) l->cost_rows(rows);
    return rows;
  }

  // Per-sample multiply-adds of all convolutions and linear layers.
  u64 flops_per_sample() const {
    u64 total = 0;
    for (const auto& row : cost_rows()) total += row.macs;
    return total;
  }

  void save(const std::string& path) { save_checkpoint<T>(path, named_state()); }

  void load(const std::string& path) {
    auto blocks = load_checkpoint<T>(path);
    auto state = named_state();
    if (blocks.size() != state.size())
      throw IoError(cat(path, ": has ", blocks.size(), " tensors, model expects ", state.size()));
    std::size_t i = 0;
    for (auto& [name, t] : state) {
      if (blocks[i].first != name)
        throw IoError(cat(path, ": tensor ", i, " named '", blocks[i].first, "', model expects '",
                          name, "'"));
      if (!(blocks[i].second->shape == t->shape))
        throw IoError(cat(path, ": tensor '", name, "' shape ", blocks[i].second->shape.str(),
                          ", model expects ", t->shape.str()));
      t->data = blocks[i].second->data;
      ++i;
    }
  }
};

}  // namespace mgnet
