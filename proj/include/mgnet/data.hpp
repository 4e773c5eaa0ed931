#pragma once

#include <Eigen/Dense>
#include <array>
#include <fstream>
#include <string>
#include <vector>

#include "mgnet/checkpoint.hpp"
#include "mgnet/rng.hpp"
#include "mgnet/tensor.hpp"

namespace mgnet {

enum class Task { kClassify, kSeg, kSpt };

// Segmentation label maps use digit classes 0-9 plus this background class;
// foreground masks binarize grayscale at this threshold.
inline constexpr int kBackgroundLabel = 10;
inline constexpr double kForegroundThreshold = 0.5;

inline const char* task_name(Task t) {
  switch (t) {
    case Task::kClassify: return "classify";
    case Task::kSeg: return "seg";
    case Task::kSpt: return "spt";
  }
  return "?";
}

inline Task parse_task(const std::string& s) {
  for (Task t : {Task::kClassify, Task::kSeg, Task::kSpt})
    if (s == task_name(t)) return t;
  throw ConfigError(cat("unknown task '", s, "'"));
}

// In-memory dataset. Images are (1, c, h, w). For segmentation, `targets`
// holds integer label maps (1, 1, h, w); for spatial transformation, the
// target images; classification uses `labels` only. `labels` doubles as the
// per-sample digit class for spatial-transformation bookkeeping.
template <class T>
struct Dataset {
  Task task = Task::kClassify;
  std::vector<TensorPtr<T>> images;
  std::vector<TensorPtr<T>> targets;
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
};

// ---------------------------------------------------------------------------
// Dataset archive: magic "MGD1", u32 version, u32 task tag, u32 sample count,
// then per sample the tensor blocks of the checkpoint encoding:
//   classify: "image", "class"      seg: "image", "labels"
//   spt:      "image", "target", "class"
// ---------------------------------------------------------------------------

inline constexpr char kArchiveMagic[4] = {'M', 'G', 'D', '1'};
inline constexpr u32 kArchiveVersion = 1;

template <class T>
void save_dataset(const std::string& path, const Dataset<T>& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(cat("cannot open for write: ", path));
  os.write(kArchiveMagic, 4);
  detail::write_u32(os, kArchiveVersion);
  detail::write_u32(os, static_cast<u32>(ds.task));
  detail::write_u32(os, static_cast<u32>(ds.size()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    detail::write_tensor_block(os, "image", *ds.images[i]);
    if (ds.task == Task::kSeg) {
      detail::write_tensor_block(os, "labels", *ds.targets[i]);
    } else {
      if (ds.task == Task::kSpt) detail::write_tensor_block(os, "target", *ds.targets[i]);
      auto cls = make_tensor<T>({1, 1, 1, 1});
      cls->data[0] = static_cast<T>(ds.labels[i]);
      detail::write_tensor_block(os, "class", *cls);
    }
  }
  if (!os) throw IoError(cat("write failed: ", path));
}

template <class T>
Dataset<T> load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(cat("cannot open: ", path));
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kArchiveMagic, 4) != 0)
    throw IoError(cat(path, ": bad magic, not a dataset archive"));
  const u32 version = detail::read_u32(is, path, "version");
  if (version != kArchiveVersion) throw IoError(cat(path, ": unsupported version ", version));
  const u32 task = detail::read_u32(is, path, "task");
  if (task > 2) throw IoError(cat(path, ": unknown task tag ", task));
  const u32 count = detail::read_u32(is, path, "sample count");
  Dataset<T> ds;
  ds.task = static_cast<Task>(task);
  auto expect = [&](const char* want) {
    auto [name, t] = detail::read_tensor_block<T>(is, path);
    if (name != want) throw IoError(cat(path, ": expected block '", want, "', got '", name, "'"));
    return t;
  };
  for (u32 i = 0; i < count; ++i) {
    ds.images.push_back(expect("image"));
    if (ds.task == Task::kSeg) {
      ds.targets.push_back(expect("labels"));
      ds.labels.push_back(-1);
    } else {
      if (ds.task == Task::kSpt) ds.targets.push_back(expect("target"));
      ds.labels.push_back(static_cast<int>(expect("class")->data[0]));
    }
  }
  return ds;
}

inline u64 file_digest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(cat("cannot open: ", path));
  std::vector<char> buf(1 << 16);
  u64 h = 0xcbf29ce484222325ull;
  while (is) {
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h = fnv1a64(buf.data(), static_cast<std::size_t>(is.gcount()), h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// MNIST IDX containers: big-endian headers, unsigned byte payloads.
// Image magic 0x00000803, label magic 0x00000801.
// ---------------------------------------------------------------------------

namespace detail {

inline u32 read_be32(std::istream& is, const std::string& path, i64 offset) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw IoError(cat(path, ": truncated header at offset ", offset));
  return static_cast<u32>(b[0]) << 24 | static_cast<u32>(b[1]) << 16 |
         static_cast<u32>(b[2]) << 8 | static_cast<u32>(b[3]);
}

}  // namespace detail

// Loads IDX images scaled to [0, 1]: byte 0 -> 0.0, byte 255 -> 1.0.
template <class T>
std::vector<TensorPtr<T>> load_idx_images(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(cat("cannot open: ", path));
  const u32 magic = detail::read_be32(is, path, 0);
  if (magic != 0x00000803u)
    throw IoError(cat(path, ": bad image magic 0x", std::hex, magic, " at offset 0"));
  const u32 count = detail::read_be32(is, path, 4);
  const u32 rows = detail::read_be32(is, path, 8);
  const u32 cols = detail::read_be32(is, path, 12);
  std::vector<TensorPtr<T>> out;
  out.reserve(count);
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
  for (u32 i = 0; i < count; ++i) {
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw IoError(cat(path, ": truncated at byte ", 16 + static_cast<i64>(i) * rows * cols +
                                   is.gcount(),
                        ", expected ", count, " images of ", rows, "x", cols));
    auto t = make_tensor<T>({1, 1, static_cast<i64>(rows), static_cast<i64>(cols)});
    for (std::size_t p = 0; p < buf.size(); ++p)
      t->data[p] = static_cast<T>(buf[p]) / T(255);
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<int> load_idx_labels(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(cat("cannot open: ", path));
  const u32 magic = detail::read_be32(is, path, 0);
  if (magic != 0x00000801u)
    throw IoError(cat(path, ": bad label magic 0x", std::hex, magic, " at offset 0"));
  const u32 count = detail::read_be32(is, path, 4);
  std::vector<unsigned char> buf(count);
  if (!is.read(reinterpret_cast<char*>(buf.data()), count))
    throw IoError(cat(path, ": truncated at byte ", 8 + is.gcount(), ", expected ", count,
                      " labels"));
  return std::vector<int>(buf.begin(), buf.end());
}

// ---------------------------------------------------------------------------
// CIFAR-100 binary records: coarse label byte, fine label byte, 3072 pixel
// bytes (channel-major 32x32).
// ---------------------------------------------------------------------------

template <class T>
struct CifarData {
  std::vector<TensorPtr<T>> images;  // (1, 3, 32, 32) in [0, 1]
  std::vector<int> fine_labels;
  std::vector<int> coarse_labels;
};

template <class T>
CifarData<T> load_cifar100(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(cat("cannot open: ", path));
  is.seekg(0, std::ios::end);
  const i64 size = is.tellg();
  is.seekg(0);
  constexpr i64 kRecord = 2 + 3072;
  if (size % kRecord != 0)
    throw IoError(cat(path, ": size ", size, " is not a multiple of record size ", kRecord));
  CifarData<T> out;
  std::vector<unsigned char> rec(kRecord);
  for (i64 i = 0; i < size / kRecord; ++i) {
    is.read(reinterpret_cast<char*>(rec.data()), kRecord);
    out.coarse_labels.push_back(rec[0]);
    out.fine_labels.push_back(rec[1]);
    auto t = make_tensor<T>({1, 3, 32, 32});
    for (i64 p = 0; p < 3072; ++p) t->data[p] = static_cast<T>(rec[2 + p]) / T(255);
    out.images.push_back(std::move(t));
  }
  return out;
}

// Per-channel mean/std over a whole image set.
template <class T>
struct ChannelStats {
  std::vector<double> mean, stddev;
};

template <class T>
ChannelStats<T> channel_stats(const std::vector<TensorPtr<T>>& images) {
  if (images.empty()) throw ShapeError("channel_stats: empty image set");
  const i64 c = images[0]->shape.c;
  std::vector<double> sum(c, 0), sq(c, 0);
  i64 count = 0;
  for (const auto& im : images) {
    const i64 hw = im->shape.h * im->shape.w;
    for (i64 ch = 0; ch < c; ++ch)
      for (i64 i = 0; i < hw; ++i) {
        double v = static_cast<double>(im->data[ch * hw + i]);
        sum[ch] += v;
        sq[ch] += v * v;
      }
    count += hw;
  }
  ChannelStats<T> st;
  for (i64 ch = 0; ch < c; ++ch) {
    double m = sum[ch] / static_cast<double>(count);
    st.mean.push_back(m);
    st.stddev.push_back(std::sqrt(std::max(sq[ch] / static_cast<double>(count) - m * m, 1e-12)));
  }
  return st;
}

template <class T>
void standardize_channels(std::vector<TensorPtr<T>>& images, const ChannelStats<T>& st) {
  for (auto& im : images) {
    const i64 hw = im->shape.h * im->shape.w;
    for (i64 ch = 0; ch < im->shape.c; ++ch)
      for (i64 i = 0; i < hw; ++i)
        im->data[ch * hw + i] = static_cast<T>(
            (static_cast<double>(im->data[ch * hw + i]) - st.mean[ch]) / st.stddev[ch]);
  }
}

// Full ZCA whitening over flattened images: W = V (L + eps I)^-1/2 V^T from
// the eigendecomposition of the data covariance. Fit on the training set,
// apply to both splits.
template <class T>
struct ZcaTransform {
  Eigen::VectorXd mean;
  Eigen::MatrixXd whiten;
};

template <class T>
ZcaTransform<T> zca_fit(const std::vector<TensorPtr<T>>& images, double eps = 1e-3) {
  if (images.empty()) throw ShapeError("zca_fit: empty image set");
  const i64 d = images[0]->numel();
  const i64 n = static_cast<i64>(images.size());
  Eigen::MatrixXd x(n, d);
  for (i64 i = 0; i < n; ++i)
    for (i64 j = 0; j < d; ++j) x(i, j) = static_cast<double>(images[i]->data[j]);
  ZcaTransform<T> z;
  z.mean = x.colwise().mean();
  x.rowwise() -= z.mean.transpose();
  Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  Eigen::VectorXd scale = (eig.eigenvalues().array() + eps).rsqrt();
  z.whiten = eig.eigenvectors() * scale.asDiagonal() * eig.eigenvectors().transpose();
  return z;
}

template <class T>
void zca_apply(std::vector<TensorPtr<T>>& images, const ZcaTransform<T>& z) {
  for (auto& im : images) {
    const i64 d = im->numel();
    Eigen::VectorXd v(d);
    for (i64 j = 0; j < d; ++j) v(j) = static_cast<double>(im->data[j]) - z.mean(j);
    Eigen::VectorXd w = z.whiten * v;
    for (i64 j = 0; j < d; ++j) im->data[j] = static_cast<T>(w(j));
  }
}

// Zero-pads an image by `pad` pixels on every side.
template <class T>
TensorPtr<T> pad_image(const TensorPtr<T>& im, i64 pad) {
  const Shape s = im->shape;
  auto out = make_tensor<T>({s.n, s.c, s.h + 2 * pad, s.w + 2 * pad});
  for (i64 n = 0; n < s.n; ++n)
    for (i64 c = 0; c < s.c; ++c)
      for (i64 y = 0; y < s.h; ++y)
        for (i64 x = 0; x < s.w; ++x) out->at(n, c, y + pad, x + pad) = im->at(n, c, y, x);
  return out;
}

template <class T>
TensorPtr<T> crop_image(const TensorPtr<T>& im, i64 top, i64 left, i64 size) {
  const Shape s = im->shape;
  if (top < 0 || left < 0 || top + size > s.h || left + size > s.w)
    throw ShapeError(cat("crop_image: ", size, "x", size, " at (", top, ",", left,
                         ") outside ", s.str()));
  auto out = make_tensor<T>({s.n, s.c, size, size});
  for (i64 n = 0; n < s.n; ++n)
    for (i64 c = 0; c < s.c; ++c)
      for (i64 y = 0; y < size; ++y)
        for (i64 x = 0; x < size; ++x) out->at(n, c, y, x) = im->at(n, c, top + y, left + x);
  return out;
}

template <class T>
TensorPtr<T> hflip_image(const TensorPtr<T>& im) {
  const Shape s = im->shape;
  auto out = make_tensor<T>(s);
  for (i64 n = 0; n < s.n; ++n)
    for (i64 c = 0; c < s.c; ++c)
      for (i64 y = 0; y < s.h; ++y)
        for (i64 x = 0; x < s.w; ++x) out->at(n, c, y, x) = im->at(n, c, y, s.w - 1 - x);
  return out;
}

// Training-time view of a padded image: random crop back to `size` plus a
// coin-flip horizontal mirror. Test time uses the center crop.
template <class T>
TensorPtr<T> random_crop_flip(const TensorPtr<T>& padded, i64 size, Rng& rng) {
  const i64 max_top = padded->shape.h - size;
  const i64 top = rng.uniform_int(0, max_top);
  const i64 left = rng.uniform_int(0, padded->shape.w - size);
  auto out = crop_image(padded, top, left, size);
  if (rng.uniform_int(0, 1) == 1) out = hflip_image(out);
  return out;
}

template <class T>
TensorPtr<T> center_crop(const TensorPtr<T>& padded, i64 size) {
  return crop_image(padded, (padded->shape.h - size) / 2, (padded->shape.w - size) / 2, size);
}

}  // namespace mgnet
