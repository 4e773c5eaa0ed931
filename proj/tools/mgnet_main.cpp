// mgnet command-line tool: dataset generation, training, evaluation, cost
// accounting, receptive-field probes, and occluder attention maps for
// multigrid convolutional networks.

#include <CLI11.hpp>
#include <filesystem>
#include <iomanip>
#include <iostream>

#include "mgnet/config.hpp"

namespace fs = std::filesystem;
using namespace mgnet;

namespace {

struct CliArgs {
  std::string config_path;
  std::string out_dir;
  std::string checkpoint;
  std::string precision;
  i64 seed = -1;
  i64 image_index = -1;
};

RunConfig load_run_config(const CliArgs& args) {
  ConfigSections sections;
  if (!args.config_path.empty()) sections = parse_config_file(args.config_path);
  RunConfig rc = resolve_config(sections);
  if (args.seed >= 0) rc.seed = static_cast<u64>(args.seed);
  if (!args.out_dir.empty()) rc.out_dir = args.out_dir;
  if (!args.precision.empty()) rc.precision = args.precision;
  if (args.image_index >= 0) rc.image_index = args.image_index;
  if (rc.precision != "f32" && rc.precision != "f64")
    throw ConfigError(cat("precision '", rc.precision, "' must be f32 or f64"));
  return rc;
}

// Writes the fully resolved config snapshot next to the command's outputs.
void snapshot_config(const RunConfig& rc) {
  fs::create_directories(rc.out_dir);
  std::ofstream os(rc.out_dir + "/resolved.cfg");
  os << serialize_config(rc);
}

template <class T>
DigitBank<T> digit_source(const RunConfig& rc) {
  if (rc.source == "mnist") {
    if (rc.mnist_images.empty() || rc.mnist_labels.empty())
      throw ConfigError("source=mnist needs mnist_images and mnist_labels paths");
    return mnist_digit_bank<T>(rc.mnist_images, rc.mnist_labels);
  }
  return builtin_digit_bank<T>();
}

template <class T>
std::pair<Dataset<T>, Dataset<T>> make_datasets(const RunConfig& rc) {
  if (!rc.train_archive.empty()) {
    Dataset<T> tr = load_dataset<T>(rc.train_archive);
    Dataset<T> te = rc.test_archive.empty() ? Dataset<T>{} : load_dataset<T>(rc.test_archive);
    if (te.images.empty()) te.task = tr.task;
    return {std::move(tr), std::move(te)};
  }
  auto bank = digit_source<T>(rc);
  GenConfig gen = rc.gen;
  gen.seed = rc.seed;
  const Task task = parse_task(rc.task);
  if (task == Task::kSeg)
    return {gen_seg_dataset(gen, bank, gen.train_count, sub_seed(rc.seed, "data:train")),
            gen_seg_dataset(gen, bank, gen.test_count, sub_seed(rc.seed, "data:test"))};
  if (task == Task::kSpt)
    return {gen_spt_dataset(gen, bank, gen.train_count, sub_seed(rc.seed, "data:train")),
            gen_spt_dataset(gen, bank, gen.test_count, sub_seed(rc.seed, "data:test"))};
  throw ConfigError("task=classify needs train_archive/test_archive (see gen-data)");
}

int cmd_gen_data(const RunConfig& rc) {
  snapshot_config(rc);
  const u64 hash = config_hash(rc);
  auto [train_ds, test_ds] = make_datasets<float>(rc);
  const std::string train_path = rc.out_dir + "/train.mgd";
  const std::string test_path = rc.out_dir + "/test.mgd";
  save_dataset(train_path, train_ds);
  write_sidecar(train_path, rc.seed, hash);
  save_dataset(test_path, test_ds);
  write_sidecar(test_path, rc.seed, hash);
  std::cout << "wrote " << train_path << " (" << train_ds.size() << " samples), " << test_path
            << " (" << test_ds.size() << " samples)\n";
  return 0;
}

template <class T>
int cmd_train(const RunConfig& rc) {
  snapshot_config(rc);
  auto [train_ds, test_ds] = make_datasets<T>(rc);
  ArchSpec spec = arch_from_config(rc);
  Model<T> model = build_model<T>(spec, rc.seed);
  TrainConfig cfg = rc.train;
  cfg.seed = rc.seed;
  cfg.out_dir = rc.out_dir;
  TrainResult res = train(model, train_ds, test_ds, cfg);
  const u64 hash = config_hash(rc);
  if (!res.final_checkpoint.empty()) write_sidecar(res.final_checkpoint, rc.seed, hash);
  write_sidecar(rc.out_dir + "/metrics.csv", rc.seed, hash);
  if (!res.history.empty()) {
    const auto& last = res.history.back();
    std::cout << "final epoch " << last.epoch << ": loss " << last.train_loss;
    if (last.eval.classify_error_pct >= 0) std::cout << ", error% " << last.eval.classify_error_pct;
    if (last.eval.mean_iou_pct >= 0)
      std::cout << ", mean IoU% " << last.eval.mean_iou_pct << ", mean error% "
                << last.eval.mean_error_pct;
    std::cout << "\n";
  }
  std::cout << "checkpoint: " << res.final_checkpoint << "\n";
  return 0;
}

template <class T>
int cmd_eval(const RunConfig& rc, const std::string& checkpoint) {
  auto [train_ds, test_ds] = make_datasets<T>(rc);
  const Dataset<T>& ds = test_ds.size() ? test_ds : train_ds;
  ArchSpec spec = arch_from_config(rc);
  Model<T> model = build_model<T>(spec, rc.seed);
  if (!checkpoint.empty()) model.load(checkpoint);
  MetricReport r = evaluate(model, ds);
  std::cout << "samples=" << ds.size();
  if (r.classify_error_pct >= 0) std::cout << " error%=" << r.classify_error_pct;
  if (r.mean_iou_pct >= 0)
    std::cout << " mean_iou%=" << r.mean_iou_pct << " mean_error%=" << r.mean_error_pct;
  std::cout << "\n";
  return 0;
}

template <class T>
int cmd_attention(const RunConfig& rc, const std::string& checkpoint) {
  snapshot_config(rc);
  auto [train_ds, test_ds] = make_datasets<T>(rc);
  const Dataset<T>& ds = test_ds.size() ? test_ds : train_ds;
  if (rc.image_index < 0 || rc.image_index >= static_cast<i64>(ds.size()))
    throw ConfigError(cat("image_index ", rc.image_index, " outside dataset of ", ds.size()));
  ArchSpec spec = arch_from_config(rc);
  Model<T> model = build_model<T>(spec, rc.seed);
  if (!checkpoint.empty()) model.load(checkpoint);
  const bool spt = parse_head(rc.head) == HeadKind::kDenseSpt;
  auto forward = [&](const TensorPtr<T>& im) {
    Context<T> ctx;
    auto out = model.forward(ctx, im);
    return spt ? sigmoid(ctx, out) : out;
  };
  AttentionConfig cfg = rc.attn;
  cfg.seed = rc.seed;
  auto image = ds.images[static_cast<std::size_t>(rc.image_index)];
  AttentionMap map = attention_map<T>(forward, image, cfg);
  const u64 hash = config_hash(rc);
  const std::string base = cat(rc.out_dir, "/attention_", rc.image_index);
  write_pgm(base + ".pgm", map.h, map.w, map.normalized);
  write_sidecar(base + ".pgm", rc.seed, hash);
  write_map_csv(base + ".csv", map.h, map.w, map.raw);
  write_sidecar(base + ".csv", rc.seed, hash);
  auto [cy, cx] = map.center_of_mass();
  std::cout << "wrote " << base << ".pgm/.csv, attention center (" << cy << "," << cx << ")\n";
  return 0;
}

template <class T>
int cmd_rf_probe(const RunConfig& rc) {
  const i64 hw = rc.rf_input;
  std::cout << "depth,single_grid_side,multigrid_side\n";
  for (int L = 1; L <= rc.rf_max_depth; ++L) {
    auto sg = build_rf_stack<T>(1, L, rc.rf_width, hw, rc.seed);
    make_weights_positive(sg);
    auto sg_fp = receptive_footprint(sg, hw, 1, hw / 2, hw / 2, rc.seed);
    auto mg = build_rf_stack<T>(rc.rf_levels, L, rc.rf_width, hw, rc.seed);
    make_weights_positive(mg);
    auto mg_fp = receptive_footprint(mg, hw, 1, hw / 2, hw / 2, rc.seed);
    std::cout << L << "," << sg_fp.side() << "," << mg_fp.side() << "\n";
  }
  return 0;
}

int cmd_cost(const RunConfig& rc) {
  ArchSpec spec = arch_from_config(rc);
  Model<float> model = build_model<float>(spec, rc.seed, false);
  std::cout << "layer,c_in,c_out,k,out_h,out_w,params,macs\n";
  for (const auto& row : model.cost_rows())
    std::cout << row.name << "," << row.c_in << "," << row.c_out << "," << row.k << ","
              << row.out_h << "," << row.out_w << "," << row.params << "," << row.macs << "\n";
  std::cout << "total_depth," << model.depth() << "\n";
  std::cout << "total_params," << model.param_count() << "\n";
  std::cout << "total_macs_per_sample," << model.flops_per_sample() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multigrid convolutional network toolkit"};
  app.require_subcommand(1);

  CliArgs args;
  app.add_option("--config", args.config_path, "config file (sectioned key=value)");
  app.add_option("--seed", args.seed, "override [run] seed");
  app.add_option("--out", args.out_dir, "override [run] out directory");
  app.add_option("--precision", args.precision, "f32 or f64");
  app.add_option("--checkpoint", args.checkpoint, "model checkpoint path");
  app.add_option("--image", args.image_index, "image index for attention maps");

  auto* gen = app.add_subcommand("gen-data", "generate dataset archives");
  auto* train = app.add_subcommand("train", "train a model");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* attention = app.add_subcommand("attention", "occluder attention map");
  auto* rf = app.add_subcommand("rf-probe", "receptive footprint vs depth table");
  auto* cost = app.add_subcommand("cost", "parameter and multiply-add accounting");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig rc = load_run_config(args);
    const bool f64 = rc.precision == "f64";
    if (gen->parsed()) return cmd_gen_data(rc);
    if (train->parsed()) return f64 ? cmd_train<double>(rc) : cmd_train<float>(rc);
    if (eval->parsed())
      return f64 ? cmd_eval<double>(rc, args.checkpoint) : cmd_eval<float>(rc, args.checkpoint);
    if (attention->parsed())
      return f64 ? cmd_attention<double>(rc, args.checkpoint)
                 : cmd_attention<float>(rc, args.checkpoint);
    if (rf->parsed()) return f64 ? cmd_rf_probe<double>(rc) : cmd_rf_probe<float>(rc);
    if (cost->parsed()) return cmd_cost(rc);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
