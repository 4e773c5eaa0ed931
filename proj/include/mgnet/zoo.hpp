#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mgnet/model.hpp"

namespace mgnet {

enum class Family { kVgg, kMg, kPmg, kRes, kRmg, kRpmg, kSg, kRsg, kUnet, kUmg };
enum class HeadKind { kClassifier, kDenseSeg, kDenseSpt };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::kVgg: return "vgg";
    case Family::kMg: return "mg";
    case Family::kPmg: return "pmg";
    case Family::kRes: return "res";
    case Family::kRmg: return "r-mg";
    case Family::kRpmg: return "r-pmg";
    case Family::kSg: return "sg";
    case Family::kRsg: return "r-sg";
    case Family::kUnet: return "unet";
    case Family::kUmg: return "u-mg";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  for (Family f : {Family::kVgg, Family::kMg, Family::kPmg, Family::kRes, Family::kRmg,
                   Family::kRpmg, Family::kSg, Family::kRsg, Family::kUnet, Family::kUmg})
    if (s == family_name(f)) return f;
  throw ConfigError(cat("unknown family '", s, "'"));
}

inline const char* head_name(HeadKind h) {
  switch (h) {
    case HeadKind::kClassifier: return "classifier";
    case HeadKind::kDenseSeg: return "seg";
    case HeadKind::kDenseSpt: return "spt";
  }
  return "?";
}

inline HeadKind parse_head(const std::string& s) {
  for (HeadKind h : {HeadKind::kClassifier, HeadKind::kDenseSeg, HeadKind::kDenseSpt})
    if (s == head_name(h)) return h;
  throw ConfigError(cat("unknown head '", s, "'"));
}

// One resolved section of the layout: `blocks` conv stages (or residual
// units), base finest-grid width, active level interval, and whether the
// whole pyramid is pooled afterwards.
struct SectionDef {
  int blocks = 0;
  i64 width = 0;
  int lo = 0, hi = 0;
  bool pool_after = false;
};

// Declarative description of a network. `sections` is filled by
// resolve_arch(); everything else is user intent.
struct ArchSpec {
  Family family = Family::kPmg;
  int depth = 11;
  HeadKind head = HeadKind::kDenseSeg;
  i64 classes = 11;
  int levels = 3;
  i64 input_hw = 32;
  i64 in_channels = 1;
  i64 width = 0;  // base finest-grid width; 0 = family default
  double width_mult = 1.0;

  // Resolved by resolve_arch:
  std::vector<SectionDef> sections;
  bool residual = false;
  bool free_stem = false;  // residual trunks get a standalone stem conv stage
};

namespace detail {

inline i64 round_half_down(double x) { return static_cast<i64>(std::ceil(x - 0.5)); }

// Channel count for a grid `rel` levels coarser than the section's finest:
// base width halved per coarser level, then scaled by the global multiplier.
inline i64 level_channels(i64 width, int rel, double mult) {
  return std::max<i64>(1, round_half_down(static_cast<double>(width >> rel) * mult));
}

inline bool is_dense(HeadKind h) { return h != HeadKind::kClassifier; }

}  // namespace detail

// Expands (family, depth, head) into the concrete section layout, or throws
// ConfigError when the depth is not expressible. Depth counts weighted
// stages: every conv bank and the head, two per residual unit; mid-network
// level-activation stems are input adapters and do not count.
inline ArchSpec resolve_arch(const ArchSpec& in) {
  ArchSpec spec = in;
  spec.sections.clear();
  const Family f = spec.family;
  const bool dense = detail::is_dense(spec.head);
  spec.residual = f == Family::kRes || f == Family::kRmg || f == Family::kRpmg ||
                  f == Family::kRsg;
  spec.free_stem = spec.residual;
  if (f == Family::kVgg || f == Family::kRes || f == Family::kSg || f == Family::kRsg ||
      f == Family::kUnet)
    spec.levels = 1;
  if (spec.levels < 1) throw ConfigError(cat("levels ", spec.levels, " must be >= 1"));
  const int K = spec.levels;
  if (spec.input_hw % (i64(1) << (K - 1)) != 0)
    throw ConfigError(cat("input size ", spec.input_hw, " not divisible by 2^", K - 1));

  const bool classify = !dense;
  if (classify && (f == Family::kSg || f == Family::kRsg || f == Family::kUnet ||
                   f == Family::kUmg))
    throw ConfigError(cat(family_name(f), " is a dense-task family, not a classifier"));
  if (dense && (f == Family::kVgg || f == Family::kMg || f == Family::kRes ||
                f == Family::kRmg))
    throw ConfigError(cat(family_name(f), " is a classification family; dense heads need pmg/"
                                          "r-pmg/sg/r-sg/unet/u-mg"));
  if (spec.classes < 1) throw ConfigError("classes must be >= 1");

  const int d = spec.depth;
  auto bad_depth = [&](const char* why) {
    throw ConfigError(cat(family_name(f), " depth ", d, " not expressible: ", why));
  };

  if (classify) {
    const i64 w0 = spec.width > 0 ? spec.width : 32;
    const i64 widths[5] = {w0, 2 * w0, 4 * w0, 8 * w0, 8 * w0};
    if (f == Family::kVgg || f == Family::kMg) {
      if ((d - 1) % 5 != 0 || d < 6) bad_depth("need depth = 5*L + 1");
      const int L = (d - 1) / 5;
      for (int s = 0; s < 5; ++s)
        spec.sections.push_back({L, widths[s], 0, K - 1, s < 4});
    } else if (f == Family::kRes || f == Family::kRmg) {
      if ((d - 2) % 10 != 0 || d < 12) bad_depth("need depth = 10*U + 2");
      const int U = (d - 2) / 10;
      for (int s = 0; s < 5; ++s)
        spec.sections.push_back({U, widths[s], 0, K - 1, s < 4});
    } else if (f == Family::kPmg || f == Family::kRpmg) {
      if (f == Family::kPmg) {
        const int L = (d - 1) / 7;
        const int E = (d - 1) - 4 * L;
        if (L < 1 || E < 3) bad_depth("progressive prefix needs at least 3 stages");
        const int a = E / 3, b = E / 3, c = E - 2 * (E / 3);
        spec.sections.push_back({a, widths[0], K - 1, K - 1, false});
        spec.sections.push_back({b, widths[0], std::max(K - 2, 0), K - 1, false});
        spec.sections.push_back({c, widths[0], 0, K - 1, true});
        for (int s = 1; s < 5; ++s)
          spec.sections.push_back({L, widths[s], 0, K - 1, s < 4});
      } else {
        if ((d - 2) % 2 != 0) bad_depth("residual depth must be even");
        const int units = (d - 2) / 2;
        const int U = units / 7;
        const int E = units - 4 * U;
        if (U < 1 || E < 3) bad_depth("progressive prefix needs at least 3 unit stages");
        const int a = E / 3, b = E / 3, c = E - 2 * (E / 3);
        spec.sections.push_back({a, widths[0], K - 1, K - 1, false});
        spec.sections.push_back({b, widths[0], std::max(K - 2, 0), K - 1, false});
        spec.sections.push_back({c, widths[0], 0, K - 1, true});
        for (int s = 1; s < 5; ++s)
          spec.sections.push_back({U, widths[s], 0, K - 1, s < 4});
      }
    } else {
      bad_depth("family/head mismatch");
    }
    return spec;
  }

  // Dense layouts keep full resolution throughout.
  const i64 w0 = spec.width > 0 ? spec.width : 16;
  if (f == Family::kPmg || f == Family::kSg) {
    const int t = d - 1;  // trunk convs including the stem, excluding the head
    if (t < 3) bad_depth("need at least 4 layers");
    const int a = t / 3, b = t / 3, c = t - 2 * (t / 3);
    spec.sections.push_back({a, w0, K - 1, K - 1, false});
    spec.sections.push_back({b, w0, std::max(K - 2, 0), K - 1, false});
    if (K >= 3 && c >= 2) {
      spec.sections.push_back({c - 1, w0, 0, K - 1, false});
      spec.sections.push_back({1, w0, 0, 1, false});  // coarse tail out of output range
    } else {
      spec.sections.push_back({c, w0, 0, K - 1, false});
    }
  } else if (f == Family::kRpmg || f == Family::kRsg) {
    if ((d - 2) % 2 != 0) bad_depth("residual depth must be even");
    const int units = (d - 2) / 2;
    if (units < 3) bad_depth("need at least 3 residual units");
    const int a = units / 3, b = units / 3, c = units - 2 * (units / 3);
    spec.sections.push_back({a, w0, K - 1, K - 1, false});
    spec.sections.push_back({b, w0, std::max(K - 2, 0), K - 1, false});
    spec.sections.push_back({c, w0, 0, K - 1, false});
  } else if (f == Family::kUnet || f == Family::kUmg) {
    if (d < 11 || (d - 11) % 5 != 0) bad_depth("need depth = 11 + 5*e");
    const int e = (d - 11) / 5;
    spec.sections.push_back({2 + e, w0, 0, K - 1, true});       // encoder 1
    spec.sections.push_back({2 + e, 2 * w0, 0, K - 1, true});   // encoder 2
    spec.sections.push_back({2 + e, 4 * w0, 0, K - 1, false});  // bottleneck
    spec.sections.push_back({1 + e, 2 * w0, 0, K - 1, false});  // decoder 2
    spec.sections.push_back({1 + e, w0, 0, K - 1, false});      // decoder 1
  } else {
    bad_depth("family/head mismatch");
  }
  return spec;
}

namespace detail {

// Builder-side bookkeeping mirroring what the layers will do at runtime.
struct BuildCursor {
  std::vector<i64> plan;   // channels, finest first
  std::vector<i64> sizes;  // square spatial extent, finest first
  int lo = 0;              // level id of the finest grid (naming + avgpool count)
};

inline void pool_cursor(BuildCursor& cur) {
  std::vector<i64> plan, sizes;
  for (std::size_t l = 0; l < cur.sizes.size(); ++l) {
    if (cur.sizes[l] % 2 == 0 && cur.sizes[l] >= 2) {
      plan.push_back(cur.plan[l]);
      sizes.push_back(cur.sizes[l] / 2);
    } else if (l == 0) {
      throw ConfigError(cat("input too small: grid of size ", cur.sizes[l],
                            " cannot be pooled"));
    }
  }
  cur.plan = std::move(plan);
  cur.sizes = std::move(sizes);
}

}  // namespace detail

// Materializes a network from a spec. All weights draw from the "init"
// sub-seed in build order, so identical (spec, seed) pairs produce identical
// models. `init = false` allocates zeroed weights (used for pure counting).
template <class T>
Model<T> build_model(const ArchSpec& user_spec, u64 seed, bool init = true) {
  const ArchSpec spec = resolve_arch(user_spec);
  Rng rng(sub_seed(seed, "init"));
  Model<T> m;
  detail::BuildCursor cur;

  const bool dense = detail::is_dense(spec.head);
  const bool unet_like = spec.family == Family::kUnet || spec.family == Family::kUmg;
  int conv_id = 0;       // names plain conv stages
  int unit_id = 0;       // names residual units
  int up_id = 0;
  bool pooled_yet = false;

  auto section_plan = [&](const SectionDef& s) {
    std::vector<i64> plan;
    for (int l = s.lo; l <= s.hi; ++l)
      plan.push_back(detail::level_channels(s.width, l - s.lo, spec.width_mult));
    return plan;
  };
  auto sizes_for = [&](const SectionDef& s) {
    std::vector<i64> sizes;
    for (int l = s.lo; l <= s.hi; ++l) sizes.push_back(spec.input_hw >> l);
    return sizes;
  };

  std::vector<std::pair<std::vector<i64>, std::vector<i64>>> skip_stack;
  bool stem_done = false;

  auto emit_blocks = [&](int count, const std::vector<i64>& target) {
    for (int bI = 0; bI < count; ++bI) {
      if (spec.residual) {
        m.layers.push_back(std::make_unique<ResMgUnit<T>>(cat("unit.", unit_id++), cur.plan, target,
                                                          cur.sizes, cur.lo, rng, init));
      } else {
        m.layers.push_back(std::make_unique<MgConvBlock<T>>(cat("mgconv.", conv_id++), cur.plan,
                                                            target, cur.sizes, cur.lo, true, rng,
                                                            init));
      }
      cur.plan = target;
    }
  };

  for (std::size_t si = 0; si < spec.sections.size(); ++si) {
    const SectionDef& sec = spec.sections[si];
    std::vector<i64> target = section_plan(sec);

    if (!stem_done) {
      cur.lo = sec.lo;
      cur.plan = target;
      cur.sizes = sizes_for(sec);
      m.layers.push_back(std::make_unique<StemLayer<T>>(
          "stem", sec.lo, sec.hi, spec.in_channels, target, cur.sizes, !spec.residual, true, rng,
          init));
      stem_done = true;
      emit_blocks(sec.blocks - (spec.free_stem ? 0 : 1), target);
    } else {
      // Structural transitions into this section.
      if (sec.lo < cur.lo) {
        if (pooled_yet)
          throw ConfigError("level activation after pooling is not supported");
        for (int a = cur.lo - 1; a >= sec.lo; --a) {
          const i64 c = detail::level_channels(sec.width, 0, spec.width_mult);
          m.layers.push_back(std::make_unique<ActivateLevelLayer<T>>(
              cat("act.", a), a, spec.in_channels, c, spec.input_hw >> a, !spec.residual, rng,
              init));
          cur.plan.insert(cur.plan.begin(), c);
          cur.sizes.insert(cur.sizes.begin(), spec.input_hw >> a);
          cur.lo = a;
        }
      }
      const int want_levels = sec.hi - sec.lo + 1;
      if (static_cast<int>(cur.plan.size()) > want_levels) {
        m.layers.push_back(std::make_unique<DropCoarseLayer<T>>(
            cat("drop.", si), static_cast<std::size_t>(want_levels)));
        cur.plan.resize(want_levels);
        cur.sizes.resize(want_levels);
      }
      // Pooling may have dropped coarse grids; sections continue on whatever
      // levels survive.
      if (target.size() > cur.plan.size()) target.resize(cur.plan.size());
      emit_blocks(sec.blocks, target);
    }

    if (unet_like) {
      // Encoder sections push a skip before pooling; decoder sections start
      // with an up-convolution and a skip concat (handled below).
      if (si <= 1) {
        skip_stack.emplace_back(cur.plan, cur.sizes);
        m.layers.push_back(std::make_unique<SkipPushLayer<T>>(cat("push.", si)));
      }
      if (sec.pool_after) {
        m.layers.push_back(std::make_unique<PyramidPoolLayer<T>>(cat("pool.", si)));
        detail::pool_cursor(cur);
        pooled_yet = true;
      }
      if (si == 2 || si == 3) {
        // Up into the next section's width, then concatenate the skip.
        const SectionDef& nxt = spec.sections[si + 1];
        std::vector<i64> up_plan = section_plan(nxt);
        up_plan.resize(cur.plan.size(),
                       up_plan.empty() ? 1 : up_plan.back());  // plans match level count
        for (auto& s : cur.sizes) s *= 2;
        m.layers.push_back(std::make_unique<UpConvLayer<T>>(cat("up.", up_id++), cur.plan, up_plan,
                                                            cur.sizes, cur.lo, rng, init));
        cur.plan = up_plan;
        auto [sp, ss] = skip_stack.back();
        skip_stack.pop_back();
        if (ss != cur.sizes)
          throw ConfigError("skip connection sizes do not match decoder sizes");
        m.layers.push_back(std::make_unique<SkipConcatLayer<T>>(cat("cat.", si)));
        for (std::size_t l = 0; l < cur.plan.size(); ++l) cur.plan[l] += sp[l];
      }
    } else if (sec.pool_after) {
      m.layers.push_back(std::make_unique<PyramidPoolLayer<T>>(cat("pool.", si)));
      detail::pool_cursor(cur);
      pooled_yet = true;
    }
  }

  if (spec.head == HeadKind::kClassifier) {
    m.layers.push_back(
        std::make_unique<ClassifierHead<T>>("head", cur.plan.back(), spec.classes, rng, init));
  } else {
    const i64 out_c = spec.head == HeadKind::kDenseSeg ? spec.classes : 1;
    m.layers.push_back(
        std::make_unique<DenseHead<T>>("head", cur.plan[0], out_c, cur.sizes[0], rng, init));
  }

  if (m.depth() != spec.depth)
    throw ConfigError(cat(family_name(spec.family), "-", spec.depth, ": layout realizes depth ",
                          m.depth(), " (builder bug or unsupported combination)"));
  return m;
}

// Parameter count without materializing weights.
inline u64 count_params(const ArchSpec& spec) {
  return build_model<float>(spec, 0, false).param_count();
}

// Per-sample forward multiply-adds of all convs and linear layers.
inline u64 count_flops(const ArchSpec& spec) {
  return build_model<float>(spec, 0, false).flops_per_sample();
}

// Scales the channel plan (shape preserved) until the parameter count is as
// close to the baseline's as possible from below; errors if no multiplier in
// [1/8, 1] lands within 10%.
inline ArchSpec calibrate_sm(const ArchSpec& spec, const ArchSpec& baseline) {
  const u64 target = count_params(baseline);
  auto params_at = [&](double mult) {
    ArchSpec s = spec;
    s.width_mult = mult;
    return count_params(s);
  };
  double lo = 0.125, hi = 1.0;
  double chosen;
  if (params_at(hi) <= target) {
    chosen = hi;
  } else if (params_at(lo) > target) {
    throw ConfigError(cat("calibration unreachable: params at multiplier 1/8 (", params_at(lo),
                          ") still exceed baseline (", target, ")"));
  } else {
    for (int it = 0; it < 60; ++it) {
      double mid = 0.5 * (lo + hi);
      (params_at(mid) <= target ? lo : hi) = mid;
    }
    chosen = lo;
  }
  const u64 realized = params_at(chosen);
  const double err = std::abs(static_cast<double>(realized) - static_cast<double>(target)) /
                     static_cast<double>(target);
  if (err > 0.10)
    throw ConfigError(cat("calibration unreachable: best multiplier ", chosen, " gives ",
                          realized, " params vs baseline ", target, " (", err * 100, "% off)"));
  ArchSpec out = spec;
  out.width_mult = chosen;
  return out;
}

}  // namespace mgnet
