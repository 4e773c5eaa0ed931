#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mgnet/probes.hpp"
#include "mgnet/synth.hpp"
#include "mgnet/train.hpp"
#include "mgnet/zoo.hpp"

namespace mgnet {

// Plain-text sectioned key=value configuration:
//   [section]
//   key = value        # comment
// Unknown keys are an error so typos never pass silently.

using ConfigSections = std::map<std::string, std::map<std::string, std::string>>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Shortest decimal string that parses back to exactly the same double.
inline std::string shortest_double(double v) {
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  return buf;
}

}  // namespace detail

inline ConfigSections parse_config_text(const std::string& text) {
  ConfigSections out;
  std::string section;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(cat("config line ", lineno, ": malformed section header '", line, "'"));
      section = detail::trim(line.substr(1, line.size() - 2));
      out[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(cat("config line ", lineno, ": expected key=value, got '", line, "'"));
    const std::string key = detail::trim(line.substr(0, eq));
    if (section.empty())
      throw ConfigError(cat("config line ", lineno, ": key '", key, "' before any [section]"));
    out[section][key] = detail::trim(line.substr(eq + 1));
  }
  return out;
}

inline ConfigSections parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(cat("cannot open config: ", path));
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

namespace detail {

// Tracks which keys were consumed so leftovers can be reported as unknown.
class KvReader {
public:
  KvReader(const ConfigSections& cfg, std::string section) : section_(std::move(section)) {
    auto it = cfg.find(section_);
    if (it != cfg.end()) kv_ = &it->second;
  }

  std::string get_str(const std::string& key, const std::string& dflt) {
    seen_.insert(key);
    if (!kv_) return dflt;
    auto it = kv_->find(key);
    return it == kv_->end() ? dflt : it->second;
  }

  i64 get_int(const std::string& key, i64 dflt) {
    const std::string s = get_str(key, cat(dflt));
    try {
      std::size_t pos;
      i64 v = std::stoll(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(cat("key '", key, "' in section [", section_, "]: '", s,
                            "' is not an integer"));
    }
  }

  u64 get_u64(const std::string& key, u64 dflt) {
    const std::string s = get_str(key, cat(dflt));
    try {
      std::size_t pos;
      u64 v = std::stoull(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(cat("key '", key, "' in section [", section_, "]: '", s,
                            "' is not an unsigned integer"));
    }
  }

  double get_real(const std::string& key, double dflt) {
    const std::string s = get_str(key, shortest_double(dflt));
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || s.empty())
      throw ConfigError(cat("key '", key, "' in section [", section_, "]: '", s,
                            "' is not a number"));
    return v;
  }

  bool get_bool(const std::string& key, bool dflt) {
    const std::string s = get_str(key, dflt ? "true" : "false");
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(cat("key '", key, "' in section [", section_, "]: '", s,
                          "' is not a boolean"));
  }

  void finish() const {
    if (!kv_) return;
    for (const auto& [key, value] : *kv_)
      if (!seen_.count(key))
        throw ConfigError(cat("unknown key '", key, "' in section [", section_, "]"));
  }

private:
  std::string section_;
  const std::map<std::string, std::string>* kv_ = nullptr;
  std::set<std::string> seen_;
};

}  // namespace detail

// Fully resolved run configuration: every knob explicit, suitable for
// byte-identical reproduction.
struct RunConfig {
  // [run]
  u64 seed = 1;
  std::string out_dir = "out";
  std::string precision = "f64";

  // [arch]
  std::string family = "pmg";
  bool calibrated = false;  // "-sm" variant: channel plan scaled to the baseline
  int depth = 11;
  std::string head = "seg";
  i64 classes = 11;
  int levels = 3;
  i64 width = 0;
  double width_mult = 1.0;
  i64 input_hw = 32;
  i64 in_channels = 1;

  // [data]
  std::string task = "seg";
  std::string source = "font";  // font | mnist
  GenConfig gen;
  std::string mnist_images, mnist_labels;
  std::string train_archive, test_archive;

  // [train]
  TrainConfig train;
  std::string schedule = "exp";
  double lr_start = 0.1, lr_end = 0.0001, lr_factor = 0.2;
  int lr_period = 60;

  // [analyze]
  AttentionConfig attn;
  i64 image_index = 0;
  int rf_levels = 3;
  i64 rf_width = 8;
  int rf_max_depth = 10;
  i64 rf_input = 64;
};

inline RunConfig resolve_config(const ConfigSections& cfg) {
  RunConfig rc;

  detail::KvReader run(cfg, "run");
  rc.seed = run.get_u64("seed", rc.seed);
  rc.out_dir = run.get_str("out", rc.out_dir);
  rc.precision = run.get_str("precision", rc.precision);
  if (rc.precision != "f32" && rc.precision != "f64")
    throw ConfigError(cat("precision '", rc.precision, "' must be f32 or f64"));
  run.finish();

  detail::KvReader arch(cfg, "arch");
  std::string fam = arch.get_str("family", rc.family);
  if (fam.size() > 3 && fam.substr(fam.size() - 3) == "-sm") {
    rc.calibrated = true;
    fam = fam.substr(0, fam.size() - 3);
  }
  parse_family(fam);  // validates
  rc.family = fam;
  rc.depth = static_cast<int>(arch.get_int("depth", rc.depth));
  rc.head = arch.get_str("head", rc.head);
  parse_head(rc.head);
  rc.classes = arch.get_int("classes", rc.classes);
  rc.levels = static_cast<int>(arch.get_int("levels", rc.levels));
  rc.width = arch.get_int("width", rc.width);
  rc.width_mult = arch.get_real("width_mult", rc.width_mult);
  rc.input_hw = arch.get_int("input", rc.input_hw);
  rc.in_channels = arch.get_int("in_channels", rc.in_channels);
  arch.finish();

  detail::KvReader data(cfg, "data");
  rc.task = data.get_str("task", rc.task);
  parse_task(rc.task);
  rc.source = data.get_str("source", rc.source);
  if (rc.source != "font" && rc.source != "mnist")
    throw ConfigError(cat("source '", rc.source, "' must be font or mnist"));
  rc.gen.canvas = data.get_int("canvas", rc.gen.canvas);
  rc.gen.train_count = static_cast<int>(data.get_int("train_count", rc.gen.train_count));
  rc.gen.test_count = static_cast<int>(data.get_int("test_count", rc.gen.test_count));
  rc.gen.digits_min = static_cast<int>(data.get_int("digits_min", rc.gen.digits_min));
  rc.gen.digits_max = static_cast<int>(data.get_int("digits_max", rc.gen.digits_max));
  rc.gen.scale_min = data.get_real("scale_min", rc.gen.scale_min);
  rc.gen.scale_max = data.get_real("scale_max", rc.gen.scale_max);
  rc.gen.rot_deg = data.get_real("rot_deg", rc.gen.rot_deg);
  rc.gen.shear_deg = data.get_real("shear_deg", rc.gen.shear_deg);
  rc.gen.overlap_cap = data.get_real("overlap_cap", rc.gen.overlap_cap);
  rc.gen.max_tries = static_cast<int>(data.get_int("max_tries", rc.gen.max_tries));
  rc.gen.translate = data.get_bool("translate", rc.gen.translate);
  rc.mnist_images = data.get_str("mnist_images", "");
  rc.mnist_labels = data.get_str("mnist_labels", "");
  rc.train_archive = data.get_str("train_archive", "");
  rc.test_archive = data.get_str("test_archive", "");
  data.finish();

  detail::KvReader train(cfg, "train");
  rc.train.batch = static_cast<int>(train.get_int("batch", rc.train.batch));
  rc.train.iters_per_epoch =
      static_cast<int>(train.get_int("iters_per_epoch", rc.train.iters_per_epoch));
  rc.train.epochs = static_cast<int>(train.get_int("epochs", rc.train.epochs));
  rc.train.weight_decay = train.get_real("weight_decay", rc.train.weight_decay);
  rc.train.momentum = train.get_real("momentum", rc.train.momentum);
  rc.schedule = train.get_str("schedule", rc.schedule);
  rc.lr_start = train.get_real("lr_start", rc.lr_start);
  rc.lr_end = train.get_real("lr_end", rc.lr_end);
  rc.lr_factor = train.get_real("lr_factor", rc.lr_factor);
  rc.lr_period = static_cast<int>(train.get_int("lr_period", rc.lr_period));
  rc.train.ckpt_every = static_cast<int>(train.get_int("ckpt_every", rc.train.ckpt_every));
  train.finish();
  if (rc.schedule == "exp") {
    if (!(rc.lr_end < rc.lr_start))
      throw ConfigError("exp schedule requires lr_end < lr_start");
    rc.train.schedule = {ScheduleKind::kExp, rc.lr_start, rc.lr_end, rc.lr_factor, rc.lr_period};
  } else if (rc.schedule == "step") {
    rc.train.schedule = {ScheduleKind::kStep, rc.lr_start, rc.lr_end, rc.lr_factor, rc.lr_period};
  } else {
    throw ConfigError(cat("schedule '", rc.schedule, "' must be exp or step"));
  }
  if (rc.train.batch < 1 || rc.train.epochs < 0 || rc.train.iters_per_epoch < 1)
    throw ConfigError("train: batch/iters_per_epoch must be positive, epochs >= 0");

  detail::KvReader an(cfg, "analyze");
  rc.attn.occluder = an.get_int("occluder", rc.attn.occluder);
  rc.attn.probe_row = an.get_int("probe_row", rc.attn.probe_row);
  rc.attn.probe_col = an.get_int("probe_col", rc.attn.probe_col);
  rc.attn.probe_window = an.get_int("probe_window", rc.attn.probe_window);
  rc.attn.stride = an.get_int("stride", rc.attn.stride);
  rc.image_index = an.get_int("image_index", rc.image_index);
  rc.rf_levels = static_cast<int>(an.get_int("rf_levels", rc.rf_levels));
  rc.rf_width = an.get_int("rf_width", rc.rf_width);
  rc.rf_max_depth = static_cast<int>(an.get_int("rf_max_depth", rc.rf_max_depth));
  rc.rf_input = an.get_int("rf_input", rc.rf_input);
  an.finish();

  for (const auto& [name, kv] : cfg)
    if (name != "run" && name != "arch" && name != "data" && name != "train" && name != "analyze")
      throw ConfigError(cat("unknown section [", name, "]"));
  return rc;
}

// Canonical serialization: every key, fixed order, shortest-round-trip
// numbers. parse -> resolve -> serialize is idempotent.
inline std::string serialize_config(const RunConfig& rc) {
  using detail::shortest_double;
  std::ostringstream os;
  os << "[run]\n";
  os << "seed = " << rc.seed << "\n";
  os << "out = " << rc.out_dir << "\n";
  os << "precision = " << rc.precision << "\n";
  os << "\n[arch]\n";
  os << "family = " << rc.family << (rc.calibrated ? "-sm" : "") << "\n";
  os << "depth = " << rc.depth << "\n";
  os << "head = " << rc.head << "\n";
  os << "classes = " << rc.classes << "\n";
  os << "levels = " << rc.levels << "\n";
  os << "width = " << rc.width << "\n";
  os << "width_mult = " << shortest_double(rc.width_mult) << "\n";
  os << "input = " << rc.input_hw << "\n";
  os << "in_channels = " << rc.in_channels << "\n";
  os << "\n[data]\n";
  os << "task = " << rc.task << "\n";
  os << "source = " << rc.source << "\n";
  os << "canvas = " << rc.gen.canvas << "\n";
  os << "train_count = " << rc.gen.train_count << "\n";
  os << "test_count = " << rc.gen.test_count << "\n";
  os << "digits_min = " << rc.gen.digits_min << "\n";
  os << "digits_max = " << rc.gen.digits_max << "\n";
  os << "scale_min = " << shortest_double(rc.gen.scale_min) << "\n";
  os << "scale_max = " << shortest_double(rc.gen.scale_max) << "\n";
  os << "rot_deg = " << shortest_double(rc.gen.rot_deg) << "\n";
  os << "shear_deg = " << shortest_double(rc.gen.shear_deg) << "\n";
  os << "overlap_cap = " << shortest_double(rc.gen.overlap_cap) << "\n";
  os << "max_tries = " << rc.gen.max_tries << "\n";
  os << "translate = " << (rc.gen.translate ? "true" : "false") << "\n";
  os << "mnist_images = " << rc.mnist_images << "\n";
  os << "mnist_labels = " << rc.mnist_labels << "\n";
  os << "train_archive = " << rc.train_archive << "\n";
  os << "test_archive = " << rc.test_archive << "\n";
  os << "\n[train]\n";
  os << "batch = " << rc.train.batch << "\n";
  os << "iters_per_epoch = " << rc.train.iters_per_epoch << "\n";
  os << "epochs = " << rc.train.epochs << "\n";
  os << "weight_decay = " << shortest_double(rc.train.weight_decay) << "\n";
  os << "momentum = " << shortest_double(rc.train.momentum) << "\n";
  os << "schedule = " << rc.schedule << "\n";
  os << "lr_start = " << shortest_double(rc.lr_start) << "\n";
  os << "lr_end = " << shortest_double(rc.lr_end) << "\n";
  os << "lr_factor = " << shortest_double(rc.lr_factor) << "\n";
  os << "lr_period = " << rc.lr_period << "\n";
  os << "ckpt_every = " << rc.train.ckpt_every << "\n";
  os << "\n[analyze]\n";
  os << "occluder = " << rc.attn.occluder << "\n";
  os << "probe_row = " << rc.attn.probe_row << "\n";
  os << "probe_col = " << rc.attn.probe_col << "\n";
  os << "probe_window = " << rc.attn.probe_window << "\n";
  os << "stride = " << rc.attn.stride << "\n";
  os << "image_index = " << rc.image_index << "\n";
  os << "rf_levels = " << rc.rf_levels << "\n";
  os << "rf_width = " << rc.rf_width << "\n";
  os << "rf_max_depth = " << rc.rf_max_depth << "\n";
  os << "rf_input = " << rc.rf_input << "\n";
  return os.str();
}

inline u64 config_hash(const RunConfig& rc) { return fnv1a64(serialize_config(rc)); }

// Builds the architecture description out of the resolved config, applying
// the "-sm" calibration against the family's natural baseline when asked.
inline ArchSpec arch_from_config(const RunConfig& rc) {
  ArchSpec spec;
  spec.family = parse_family(rc.family);
  spec.depth = rc.depth;
  spec.head = parse_head(rc.head);
  spec.classes = rc.classes;
  spec.levels = rc.levels;
  spec.width = rc.width;
  spec.width_mult = rc.width_mult;
  spec.input_hw = rc.input_hw;
  spec.in_channels = rc.in_channels;
  if (rc.calibrated) {
    ArchSpec baseline = spec;
    switch (spec.family) {
      case Family::kMg:
      case Family::kPmg: baseline.family = Family::kVgg; break;
      case Family::kRmg:
      case Family::kRpmg: baseline.family = Family::kRes; break;
      default:
        throw ConfigError(cat("family ", rc.family, "-sm has no baseline to calibrate against"));
    }
    baseline.levels = 1;
    baseline.width_mult = 1.0;
    spec = calibrate_sm(spec, baseline);
  }
  return spec;
}

// Every artifact gets a sidecar recording how to reproduce it.
inline void write_sidecar(const std::string& artifact_path, u64 seed, u64 cfg_hash) {
  std::ofstream os(artifact_path + ".meta");
  if (!os) throw IoError(cat("cannot open for write: ", artifact_path, ".meta"));
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(cfg_hash));
  os << "seed = " << seed << "\nconfig_hash = " << hex << "\n";
}

}  // namespace mgnet
