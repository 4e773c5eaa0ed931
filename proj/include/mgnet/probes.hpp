#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <vector>

#include "mgnet/model.hpp"

namespace mgnet {

// Occluder sweep settings. The occluder is a square of uniform random noise,
// drawn once from the seed and reused at every sweep position.
struct AttentionConfig {
  i64 occluder = 8;
  i64 probe_row = 0, probe_col = 0;
  i64 probe_window = 3;
  i64 stride = 1;
  u64 seed = 7;
};

// Raw and [0,1]-normalized sensitivity maps at input resolution. Magnitudes
// are attributed to the occluder's center pixel.
struct AttentionMap {
  i64 h = 0, w = 0;
  std::vector<double> raw;
  std::vector<double> normalized;

  double at(i64 y, i64 x) const { return raw[static_cast<std::size_t>(y * w + x)]; }

  // Intensity-weighted center of mass of the raw map, (row, col).
  std::pair<double, double> center_of_mass() const {
    double mass = 0, ry = 0, rx = 0;
    for (i64 y = 0; y < h; ++y)
      for (i64 x = 0; x < w; ++x) {
        const double v = at(y, x);
        mass += v;
        ry += v * static_cast<double>(y);
        rx += v * static_cast<double>(x);
      }
    if (mass <= 0) return {static_cast<double>(h) / 2, static_cast<double>(w) / 2};
    return {ry / mass, rx / mass};
  }
};

// Sweeps the occluder over the image; at each position, the map records the
// maximum absolute change of the model output inside the probe window,
// relative to the unoccluded output. `forward` is any image -> image map
// (for a trained model, forward + output nonlinearity).
template <class T>
AttentionMap attention_map(const std::function<TensorPtr<T>(const TensorPtr<T>&)>& forward,
                           const TensorPtr<T>& image, const AttentionConfig& cfg) {
  const Shape s = image->shape;
  if (s.n != 1) throw ShapeError(cat("attention_map: expected single image, got ", s.str()));
  if (cfg.occluder < 1 || cfg.occluder > std::min(s.h, s.w))
    throw ShapeError(cat("attention_map: occluder ", cfg.occluder, " does not fit input ",
                         s.str()));
  auto baseline = forward(image);
  const Shape os = baseline->shape;
  const i64 half = cfg.probe_window / 2;
  if (cfg.probe_row - half < 0 || cfg.probe_row + half >= os.h || cfg.probe_col - half < 0 ||
      cfg.probe_col + half >= os.w)
    throw ShapeError(cat("attention_map: probe (", cfg.probe_row, ",", cfg.probe_col,
                         ") window outside output ", os.str()));

  Rng rng(sub_seed(cfg.seed, "noise"));
  std::vector<T> noise(static_cast<std::size_t>(s.c * cfg.occluder * cfg.occluder));
  for (auto& v : noise) v = static_cast<T>(rng.next_double());

  AttentionMap map;
  map.h = s.h;
  map.w = s.w;
  map.raw.assign(static_cast<std::size_t>(s.h * s.w), 0.0);

  auto probe_delta = [&](const Tensor<T>& out) {
    double best = 0;
    for (i64 c = 0; c < os.c; ++c)
      for (i64 dy = -half; dy <= half; ++dy)
        for (i64 dx = -half; dx <= half; ++dx) {
          const i64 idx = out.index(0, c, cfg.probe_row + dy, cfg.probe_col + dx);
          best = std::max(best, std::abs(static_cast<double>(out.data[idx]) -
                                         static_cast<double>(baseline->data[idx])));
        }
    return best;
  };

  for (i64 top = 0; top + cfg.occluder <= s.h; top += cfg.stride)
    for (i64 left = 0; left + cfg.occluder <= s.w; left += cfg.stride) {
      auto occluded = clone_tensor(*image);
      for (i64 c = 0; c < s.c; ++c)
        for (i64 y = 0; y < cfg.occluder; ++y)
          for (i64 x = 0; x < cfg.occluder; ++x)
            occluded->at(0, c, top + y, left + x) =
                noise[static_cast<std::size_t>((c * cfg.occluder + y) * cfg.occluder + x)];
      auto out = forward(occluded);
      map.raw[static_cast<std::size_t>((top + cfg.occluder / 2) * s.w + left + cfg.occluder / 2)] =
          probe_delta(*out);
    }

  double peak = 0;
  for (double v : map.raw) peak = std::max(peak, v);
  map.normalized.resize(map.raw.size());
  for (std::size_t i = 0; i < map.raw.size(); ++i)
    map.normalized[i] = peak > 0 ? map.raw[i] / peak : 0.0;
  return map;
}

// Binary PGM ("P5", maxval 255) of a [0,1] map.
inline void write_pgm(const std::string& path, i64 h, i64 w, const std::vector<double>& values) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(cat("cannot open for write: ", path));
  os << "P5\n" << w << " " << h << "\n255\n";
  for (double v : values) {
    const int b = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    os.put(static_cast<char>(b));
  }
  if (!os) throw IoError(cat("write failed: ", path));
}

inline void write_map_csv(const std::string& path, i64 h, i64 w,
                          const std::vector<double>& values) {
  std::ofstream os(path);
  if (!os) throw IoError(cat("cannot open for write: ", path));
  for (i64 y = 0; y < h; ++y) {
    for (i64 x = 0; x < w; ++x) os << (x ? "," : "") << values[static_cast<std::size_t>(y * w + x)];
    os << "\n";
  }
}

// Inclusive bounding box of a measured receptive field.
struct Footprint {
  i64 r0 = 0, c0 = 0, r1 = -1, c1 = -1;

  i64 side() const { return r1 < r0 ? 0 : std::max(r1 - r0 + 1, c1 - c0 + 1); }
};

// Replaces every parameter value by its absolute value in place. Positive
// weights prevent gradient cancellation when measuring reach.
template <class T>
void make_weights_positive(Model<T>& model) {
  for (auto& p : model.parameters())
    for (auto& v : p->data) v = std::abs(v);
}

// Measures the input region that can influence the output unit at
// (row, col): forward a random positive image, backprop a one-hot gradient
// from that unit, return the bounding box of |input gradient| > 1e-12.
// Call make_weights_positive on the model first.
template <class T>
Footprint receptive_footprint(Model<T>& model, i64 in_hw, i64 in_channels, i64 row, i64 col,
                              u64 seed = 11) {
  Rng rng(sub_seed(seed, "probe"));
  auto image = random_uniform<T>({1, in_channels, in_hw, in_hw}, rng, 0.5, 1.5, true);
  Tape<T> tape;
  Context<T> ctx;
  ctx.tape = &tape;
  ctx.mode = Mode::kEval;
  auto out = model.forward(ctx, image);
  if (row < 0 || row >= out->shape.h || col < 0 || col >= out->shape.w)
    throw ShapeError(cat("receptive_footprint: location (", row, ",", col, ") outside output ",
                         out->shape.str()));
  out->ensure_grad();
  out->grad[out->index(0, 0, row, col)] = T(1);
  tape.backward();
  image->ensure_grad();

  Footprint fp{in_hw, in_hw, -1, -1};
  for (i64 c = 0; c < in_channels; ++c)
    for (i64 y = 0; y < in_hw; ++y)
      for (i64 x = 0; x < in_hw; ++x)
        if (std::abs(static_cast<double>(image->grad[image->index(0, c, y, x)])) > 1e-12) {
          fp.r0 = std::min(fp.r0, y);
          fp.c0 = std::min(fp.c0, x);
          fp.r1 = std::max(fp.r1, y);
          fp.c1 = std::max(fp.c1, x);
        }
  return fp;
}

// Passes the raw image through as a 1-level pyramid.
template <class T>
class RawInputLayer : public Layer<T> {
public:
  explicit RawInputLayer(std::string name) : Layer<T>(std::move(name)) {}
  void forward(ModelState<T>& st, Context<T>&) override { st.pyr = {st.image}; }
};

// Probe stack for receptive-field measurement: L multigrid convolutions over
// `levels` grids, no normalization or nonlinearity. Single-grid stacks take
// the image directly (footprint grows 2 pixels per conv); multi-level stacks
// build the standard input pyramid (average-pool + per-level stem).
template <class T>
Model<T> build_rf_stack(int levels, int depth, i64 width, i64 input_hw, u64 seed) {
  if (levels < 1 || depth < 1) throw ConfigError("build_rf_stack: levels and depth must be >= 1");
  Rng rng(sub_seed(seed, "init"));
  Model<T> m;
  std::vector<i64> plan, sizes;
  for (int l = 0; l < levels; ++l) {
    plan.push_back(std::max<i64>(1, width >> l));
    sizes.push_back(input_hw >> l);
  }
  std::vector<i64> in_plan;
  if (levels == 1) {
    m.layers.push_back(std::make_unique<RawInputLayer<T>>("input"));
    in_plan = {1};
  } else {
    m.layers.push_back(std::make_unique<StemLayer<T>>("stem", 0, levels - 1, 1, plan, sizes,
                                                      false, false, rng, true));
    in_plan = plan;
  }
  for (int i = 0; i < depth; ++i) {
    m.layers.push_back(std::make_unique<MgConvBlock<T>>(cat("mgconv", i), in_plan, plan, sizes, 0,
                                                        false, rng, true));
    in_plan = plan;
  }
  return m;
}

}  // namespace mgnet
