#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "mgnet/data.hpp"

namespace mgnet {

// Source digits for the synthetic tasks: grayscale glyphs in [0, 1] on a
// 28x28 canvas, one label per glyph.
template <class T>
struct DigitBank {
  std::vector<TensorPtr<T>> images;
  std::vector<int> labels;
};

namespace detail {

// Classic 5x7 pixel font, digits 0-9, rows top to bottom.
inline const std::array<std::array<u8, 7>, 10>& digit_font() {
  static const std::array<std::array<u8, 7>, 10> font = {{
      {0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110},  // 0
      {0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110},  // 1
      {0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111},  // 2
      {0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110},  // 3
      {0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010},  // 4
      {0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110},  // 5
      {0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110},  // 6
      {0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000},  // 7
      {0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110},  // 8
      {0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100},  // 9
  }};
  return font;
}

inline double glyph_at(int digit, double row, double col) {
  // Bilinear sample of the 5x7 bitmap, zero outside.
  const auto& rows = digit_font()[static_cast<std::size_t>(digit)];
  auto bit = [&](i64 r, i64 c) -> double {
    if (r < 0 || r >= 7 || c < 0 || c >= 5) return 0.0;
    return (rows[static_cast<std::size_t>(r)] >> (4 - c)) & 1 ? 1.0 : 0.0;
  };
  const i64 r0 = static_cast<i64>(std::floor(row)), c0 = static_cast<i64>(std::floor(col));
  const double fr = row - static_cast<double>(r0), fc = col - static_cast<double>(c0);
  return bit(r0, c0) * (1 - fr) * (1 - fc) + bit(r0, c0 + 1) * (1 - fr) * fc +
         bit(r0 + 1, c0) * fr * (1 - fc) + bit(r0 + 1, c0 + 1) * fr * fc;
}

}  // namespace detail

// Renders the built-in font into MNIST-sized digits: each glyph upscaled 4x
// with bilinear smoothing onto a 28x28 canvas. Used when no IDX files are
// supplied.
template <class T>
DigitBank<T> builtin_digit_bank() {
  DigitBank<T> bank;
  for (int d = 0; d < 10; ++d) {
    auto t = make_tensor<T>({1, 1, 28, 28});
    for (i64 y = 0; y < 28; ++y)
      for (i64 x = 0; x < 28; ++x) {
        // Glyph box is 20x28 centered horizontally (5*4 x 7*4).
        const double row = (static_cast<double>(y) + 0.5) / 4.0 - 0.5;
        const double col = (static_cast<double>(x) - 4.0 + 0.5) / 4.0 - 0.5;
        t->at(0, 0, y, x) = static_cast<T>(detail::glyph_at(d, row, col));
      }
    bank.images.push_back(std::move(t));
    bank.labels.push_back(d);
  }
  return bank;
}

template <class T>
DigitBank<T> mnist_digit_bank(const std::string& images_path, const std::string& labels_path) {
  DigitBank<T> bank;
  bank.images = load_idx_images<T>(images_path);
  bank.labels = load_idx_labels(labels_path);
  if (bank.images.size() != bank.labels.size())
    throw IoError(cat(images_path, ": ", bank.images.size(), " images vs ", bank.labels.size(),
                      " labels"));
  return bank;
}

// 2x2 linear map (applied around the digit centroid when pasting). Vectors
// are (x, y): x' = m00 x + m01 y, y' = m10 x + m11 y.
struct Affine2 {
  double m00 = 1, m01 = 0, m10 = 0, m11 = 1;

  static Affine2 compose(double scale, double rot_rad, double shear_rad) {
    // rotate(rot) * shear_x(shear) * uniform scale
    const double cs = std::cos(rot_rad), sn = std::sin(rot_rad), sh = std::tan(shear_rad);
    Affine2 a;
    a.m00 = cs * scale;
    a.m10 = sn * scale;
    a.m01 = (cs * sh - sn) * scale;
    a.m11 = (sn * sh + cs) * scale;
    return a;
  }

  Affine2 inverse() const {
    const double det = m00 * m11 - m01 * m10;
    if (std::abs(det) < 1e-12) throw ShapeError("affine: singular transform");
    return {m11 / det, -m01 / det, -m10 / det, m00 / det};
  }
};

// Mass centroid of a grayscale image, (row, col).
template <class T>
std::pair<double, double> foreground_centroid(const Tensor<T>& im, double threshold = 0.0) {
  double mass = 0, ry = 0, rx = 0;
  for (i64 y = 0; y < im.shape.h; ++y)
    for (i64 x = 0; x < im.shape.w; ++x) {
      double v = static_cast<double>(im.at(0, 0, y, x));
      if (v > threshold) {
        mass += v;
        ry += v * static_cast<double>(y);
        rx += v * static_cast<double>(x);
      }
    }
  if (mass <= 0) return {im.shape.h / 2.0, im.shape.w / 2.0};
  return {ry / mass, rx / mass};
}

namespace detail {

// Tight bounding box of pixels above threshold, inclusive (r0, c0, r1, c1).
template <class T>
std::array<i64, 4> fg_bbox(const Tensor<T>& im, double threshold) {
  i64 r0 = im.shape.h, c0 = im.shape.w, r1 = -1, c1 = -1;
  for (i64 y = 0; y < im.shape.h; ++y)
    for (i64 x = 0; x < im.shape.w; ++x)
      if (static_cast<double>(im.at(0, 0, y, x)) > threshold) {
        r0 = std::min(r0, y);
        c0 = std::min(c0, x);
        r1 = std::max(r1, y);
        c1 = std::max(c1, x);
      }
  return {r0, c0, r1, c1};
}

}  // namespace detail

// Renders `digit` onto `canvas` with linear map A about the digit's centroid,
// placing the centroid at (cy, cx). Inverse-mapped bilinear sampling,
// per-pixel max compositing. Returns the rendered values (before max) so the
// caller can threshold a foreground mask.
template <class T>
std::vector<T> paste_affine(Tensor<T>& canvas, const Tensor<T>& digit, const Affine2& a,
                            double cy, double cx) {
  const Affine2 inv = a.inverse();
  auto [gy, gx] = foreground_centroid(digit);
  const i64 H = canvas.shape.h, W = canvas.shape.w;
  std::vector<T> rendered(static_cast<std::size_t>(H * W), T(0));
  for (i64 y = 0; y < H; ++y)
    for (i64 x = 0; x < W; ++x) {
      const double py = static_cast<double>(y) - cy, px = static_cast<double>(x) - cx;
      const double qy = inv.m10 * px + inv.m11 * py + gy;
      const double qx = inv.m00 * px + inv.m01 * py + gx;
      if (qy < -1 || qy > static_cast<double>(digit.shape.h) || qx < -1 ||
          qx > static_cast<double>(digit.shape.w))
        continue;
      const i64 y0 = static_cast<i64>(std::floor(qy)), x0 = static_cast<i64>(std::floor(qx));
      const double fy = qy - static_cast<double>(y0), fx = qx - static_cast<double>(x0);
      auto src = [&](i64 r, i64 c) -> double {
        if (r < 0 || r >= digit.shape.h || c < 0 || c >= digit.shape.w) return 0.0;
        return static_cast<double>(digit.at(0, 0, r, c));
      };
      const double v = src(y0, x0) * (1 - fy) * (1 - fx) + src(y0, x0 + 1) * (1 - fy) * fx +
                       src(y0 + 1, x0) * fy * (1 - fx) + src(y0 + 1, x0 + 1) * fy * fx;
      if (v <= 0) continue;
      rendered[static_cast<std::size_t>(y * W + x)] = static_cast<T>(v);
      canvas.at(0, 0, y, x) = std::max(canvas.at(0, 0, y, x), static_cast<T>(v));
    }
  return rendered;
}

// Generator settings. Angles in degrees; scale is relative to the source
// digit; translation is uniform over centroid positions that keep the
// transformed digit's bounding box inside the canvas.
struct GenConfig {
  u64 seed = 1;
  i64 canvas = 64;
  int train_count = 10000;
  int test_count = 1000;
  int digits_min = 3;
  int digits_max = 5;
  double scale_min = 0.7;
  double scale_max = 1.3;
  double rot_deg = 45.0;    // rotation uniform in (-rot_deg, +rot_deg)
  double shear_deg = 60.0;  // shear uniform in (-shear_deg, +shear_deg); spt only
  double overlap_cap = 0.30;
  int max_tries = 10;
  bool translate = true;
};

// Per-digit foreground masks kept by the generator so tests can audit the
// overlap cap and label consistency after the fact.
struct SegAudit {
  struct Placed {
    std::vector<u8> mask;  // canvas-sized, 1 = thresholded foreground
    int label = 0;
  };
  std::vector<std::vector<Placed>> samples;
};

namespace detail {

inline double deg2rad(double d) { return d * 3.14159265358979323846 / 180.0; }

// Overlap between two masks: intersection over the smaller area.
inline double mask_overlap(const std::vector<u8>& a, const std::vector<u8>& b) {
  i64 inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i];
    nb += b[i];
    inter += a[i] & b[i];
  }
  const i64 smaller = std::min(na, nb);
  if (smaller == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(smaller);
}

// Valid centroid range so the transformed foreground bbox stays on canvas.
// Returns nullopt when the digit cannot fit.
template <class T>
std::optional<std::array<double, 4>> centroid_range(const Tensor<T>& digit, const Affine2& a,
                                                    i64 canvas) {
  auto bb = fg_bbox(digit, kForegroundThreshold / 2);
  if (bb[2] < 0) return std::nullopt;  // empty digit
  auto [gy, gx] = foreground_centroid(digit);
  double lo_y = -1e30, hi_y = 1e30, lo_x = -1e30, hi_x = 1e30;
  for (int cy = 0; cy < 2; ++cy)
    for (int cx = 0; cx < 2; ++cx) {
      const double ry = static_cast<double>(cy ? bb[2] + 1 : bb[0] - 1) - gy;
      const double rx = static_cast<double>(cx ? bb[3] + 1 : bb[1] - 1) - gx;
      const double py = a.m10 * rx + a.m11 * ry;
      const double px = a.m00 * rx + a.m01 * ry;
      // Pixel p lands at centroid + (px, py); keep it within [0, canvas-1].
      lo_y = std::max(lo_y, -py);
      hi_y = std::min(hi_y, static_cast<double>(canvas - 1) - py);
      lo_x = std::max(lo_x, -px);
      hi_x = std::min(hi_x, static_cast<double>(canvas - 1) - px);
    }
  if (lo_y > hi_y || lo_x > hi_x) return std::nullopt;
  return std::array<double, 4>{lo_y, hi_y, lo_x, hi_x};
}

}  // namespace detail

// Segmentation sample generator: k digits (uniform in the configured range)
// pasted with random scale/rotation/translation under the pairwise overlap
// cap; labels take the last-pasted digit on contested pixels, background is
// class 10. Each sample is generated from its own seed, so the dataset is
// identical regardless of generation order.
template <class T>
Dataset<T> gen_seg_dataset(const GenConfig& cfg, const DigitBank<T>& bank, int count,
                           u64 stream_seed, SegAudit* audit = nullptr) {
  if (bank.images.empty()) throw ConfigError("gen_seg_dataset: empty digit bank");
  Dataset<T> ds;
  ds.task = Task::kSeg;
  const i64 C = cfg.canvas;
  for (int s = 0; s < count; ++s) {
    Rng rng(sample_seed(stream_seed, static_cast<u64>(s)));
    auto image = make_tensor<T>({1, 1, C, C});
    auto labels = full_tensor<T>({1, 1, C, C}, T(kBackgroundLabel));
    std::vector<SegAudit::Placed> placed;
    const int k = static_cast<int>(rng.uniform_int(cfg.digits_min, cfg.digits_max));
    for (int d = 0; d < k; ++d) {
      const i64 pick = rng.uniform_int(0, static_cast<i64>(bank.images.size()) - 1);
      const Tensor<T>& digit = *bank.images[pick];
      const int cls = bank.labels[static_cast<std::size_t>(pick)];
      for (int attempt = 0; attempt < cfg.max_tries; ++attempt) {
        const double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
        const double rot = detail::deg2rad(rng.uniform(-cfg.rot_deg, cfg.rot_deg));
        const Affine2 a = Affine2::compose(scale, rot, 0.0);
        auto range = detail::centroid_range(digit, a, C);
        if (!range) continue;
        const double cy = cfg.translate ? rng.uniform((*range)[0], (*range)[1])
                                        : (static_cast<double>(C) - 1) / 2;
        const double cx = cfg.translate ? rng.uniform((*range)[2], (*range)[3])
                                        : (static_cast<double>(C) - 1) / 2;
        // Trial render on a scratch canvas; committed only if overlap passes.
        Tensor<T> scratch({1, 1, C, C});
        auto rendered = paste_affine(scratch, digit, a, cy, cx);
        std::vector<u8> mask(rendered.size());
        for (std::size_t i = 0; i < rendered.size(); ++i)
          mask[i] = rendered[i] > static_cast<T>(kForegroundThreshold) ? 1 : 0;
        bool ok = true;
        for (const auto& prev : placed)
          if (detail::mask_overlap(mask, prev.mask) > cfg.overlap_cap) {
            ok = false;
            break;
          }
        if (!ok) continue;
        for (i64 i = 0; i < C * C; ++i) {
          image->data[i] = std::max(image->data[i], rendered[static_cast<std::size_t>(i)]);
          if (mask[static_cast<std::size_t>(i)]) labels->data[i] = static_cast<T>(cls);
        }
        placed.push_back({std::move(mask), cls});
        break;
      }
    }
    ds.images.push_back(std::move(image));
    ds.targets.push_back(std::move(labels));
    ds.labels.push_back(-1);
    if (audit) audit->samples.push_back(std::move(placed));
  }
  return ds;
}

// Spatial-transformation sample generator: one digit per image, distorted by
// scale * rotation * shear plus translation; the target is the same digit,
// untransformed, pasted with its centroid at the canvas center.
template <class T>
Dataset<T> gen_spt_dataset(const GenConfig& cfg, const DigitBank<T>& bank, int count,
                           u64 stream_seed) {
  if (bank.images.empty()) throw ConfigError("gen_spt_dataset: empty digit bank");
  Dataset<T> ds;
  ds.task = Task::kSpt;
  const i64 C = cfg.canvas;
  const double center = (static_cast<double>(C) - 1) / 2;
  for (int s = 0; s < count; ++s) {
    Rng rng(sample_seed(stream_seed, static_cast<u64>(s)));
    const i64 pick = rng.uniform_int(0, static_cast<i64>(bank.images.size()) - 1);
    const Tensor<T>& digit = *bank.images[pick];

    auto image = make_tensor<T>({1, 1, C, C});
    for (int attempt = 0;; ++attempt) {
      const double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
      const double rot = detail::deg2rad(rng.uniform(-cfg.rot_deg, cfg.rot_deg));
      const double shear = detail::deg2rad(rng.uniform(-cfg.shear_deg, cfg.shear_deg));
      const Affine2 a = Affine2::compose(scale, rot, shear);
      auto range = detail::centroid_range(digit, a, C);
      if (!range) {
        if (attempt + 1 >= cfg.max_tries)
          throw ConfigError(cat("gen_spt_dataset: digit does not fit canvas ", C,
                                " under configured transforms"));
        continue;
      }
      const double cy = cfg.translate ? rng.uniform((*range)[0], (*range)[1]) : center;
      const double cx = cfg.translate ? rng.uniform((*range)[2], (*range)[3]) : center;
      paste_affine(*image, digit, a, cy, cx);
      break;
    }

    auto target = make_tensor<T>({1, 1, C, C});
    paste_affine(*target, digit, Affine2{}, center, center);

    ds.images.push_back(std::move(image));
    ds.targets.push_back(std::move(target));
    ds.labels.push_back(bank.labels[static_cast<std::size_t>(pick)]);
  }
  return ds;
}

}  // namespace mgnet
