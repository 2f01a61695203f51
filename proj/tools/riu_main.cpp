#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "riunet/io.hpp"
#include "riunet/render.hpp"
#include "riunet/synth.hpp"
#include "riunet/trainer.hpp"
#include "riunet/unet.hpp"

namespace fs = std::filesystem;
using namespace riunet;

namespace {

// Outputs registered before writing; removed if the command fails so a bad
// run never leaves partial artifacts behind.
std::vector<std::string> g_outputs;

void plan_output(const std::string& path) { g_outputs.push_back(path); }

void discard_outputs() {
  for (const std::string& path : g_outputs) {
    std::error_code ec;
    fs::remove(path, ec);
  }
}

void print_config(const std::string& subcommand,
                  const std::vector<std::pair<std::string, std::string>>& kv) {
  std::cout << "config subcommand " << subcommand << "\n";
  for (const auto& [k, v] : kv) std::cout << "config " << k << " " << v << "\n";
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

struct CommonOpts {
  uint64_t seed = 0;
  int width = 512;
  int height = 64;
  int classes = 4;
  std::string out;
};

ProjectionConfig projection_for(const CommonOpts& o) {
  ProjectionConfig cfg;
  cfg.width = o.width;
  cfg.height = o.height;
  cfg.validate();
  return cfg;
}

std::string scene_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene%04d", index);
  return buf;
}

// --- synth -------------------------------------------------------------------

struct SynthOpts : CommonOpts {
  int scenes = 8;
  int cars = 3;
  int pedestrians = 2;
  int cyclists = 2;
};

void run_synth(const SynthOpts& o) {
  print_config("synth", {{"seed", std::to_string(o.seed)},
                         {"scenes", std::to_string(o.scenes)},
                         {"cars", std::to_string(o.cars)},
                         {"pedestrians", std::to_string(o.pedestrians)},
                         {"cyclists", std::to_string(o.cyclists)},
                         {"width", std::to_string(o.width)},
                         {"height", std::to_string(o.height)},
                         {"out", o.out}});
  fs::create_directories(o.out);
  for (int i = 0; i < o.scenes; ++i) {
    SceneSpec spec;
    spec.seed = mix_seed(o.seed, uint64_t(i));
    spec.num_cars = o.cars;
    spec.num_pedestrians = o.pedestrians;
    spec.num_cyclists = o.cyclists;
    spec.beams = projection_for(o);
    const PointCloud cloud = generate_scene(spec);
    const std::string base = (fs::path(o.out) / scene_id(i)).string();
    plan_output(base + ".bin");
    plan_output(base + ".label");
    write_point_cloud(base + ".bin", cloud);
    write_labels(base + ".label", cloud.labels);
    std::cout << "wrote " << base << ".bin (" << cloud.size() << " points)\n";
  }
}

// --- project ------------------------------------------------------------------

struct ProjectOpts : CommonOpts {
  std::string in;
  std::string labels;
};

void run_project(const ProjectOpts& o) {
  print_config("project", {{"in", o.in},
                           {"labels", o.labels.empty() ? "(none)" : o.labels},
                           {"width", std::to_string(o.width)},
                           {"height", std::to_string(o.height)},
                           {"out", o.out}});
  PointCloud cloud = read_point_cloud(o.in);
  if (!o.labels.empty()) {
    cloud.labels = read_labels(o.labels);
    if (cloud.labels.size() != cloud.size())
      throw std::runtime_error("label count does not match point count");
  }
  RangeImage image = project(cloud, projection_for(o));
  image.index_map.clear();
  plan_output(o.out);
  write_range_image(o.out, image);
  size_t valid = 0;
  for (uint8_t m : image.mask) valid += m;
  std::cout << "wrote " << o.out << " (" << valid << " valid pixels)\n";
}

// --- build-dataset ----------------------------------------------------------------

struct BuildOpts : CommonOpts {
  std::string in;
  double val_fraction = 0.2;
  double w0 = 10.0;
  double sigma = 5.0;
  bool no_class_balance = false;
};

void run_build(const BuildOpts& o) {
  print_config("build-dataset", {{"in", o.in},
                                 {"seed", std::to_string(o.seed)},
                                 {"val_fraction", fmt(o.val_fraction)},
                                 {"classes", std::to_string(o.classes)},
                                 {"width", std::to_string(o.width)},
                                 {"height", std::to_string(o.height)},
                                 {"w0", fmt(o.w0)},
                                 {"sigma", fmt(o.sigma)},
                                 {"class_balance", o.no_class_balance ? "off" : "on"},
                                 {"out", o.out}});
  std::vector<std::string> ids;
  std::vector<PointCloud> clouds;
  std::vector<fs::path> bins;
  for (const auto& entry : fs::directory_iterator(o.in))
    if (entry.path().extension() == ".bin") bins.push_back(entry.path());
  std::sort(bins.begin(), bins.end());
  if (bins.empty()) throw std::runtime_error("no .bin files under " + o.in);
  for (const fs::path& bin : bins) {
    PointCloud cloud = read_point_cloud(bin.string());
    fs::path label_path = bin;
    label_path.replace_extension(".label");
    cloud.labels = read_labels(label_path.string());
    if (cloud.labels.size() != cloud.size())
      throw std::runtime_error(label_path.string() + ": label count does not match point count");
    ids.push_back(bin.stem().string());
    clouds.push_back(std::move(cloud));
  }
  DatasetBuildConfig cfg;
  cfg.projection = projection_for(o);
  cfg.num_classes = o.classes;
  if (o.classes != 4) {
    cfg.class_names.clear();
    for (int k = 0; k < o.classes; ++k)
      cfg.class_names.push_back(k == 0 ? "background" : "class" + std::to_string(k));
  }
  cfg.val_fraction = o.val_fraction;
  cfg.seed = o.seed;
  cfg.weight_params.w0 = o.w0;
  cfg.weight_params.sigma = o.sigma;
  cfg.weight_params.class_balance = !o.no_class_balance;
  for (const std::string& id : ids) plan_output((fs::path(o.out) / (id + ".rimg")).string());
  plan_output((fs::path(o.out) / "manifest.txt").string());
  const DatasetManifest manifest = build_dataset(ids, clouds, cfg, o.out);
  std::cout << "wrote " << (fs::path(o.out) / "manifest.txt").string() << " ("
            << manifest.train_indices().size() << " train, " << manifest.val_indices().size()
            << " val)\n";
}

// --- train -------------------------------------------------------------------------

struct TrainOpts : CommonOpts {
  std::string data;
  std::string resume;
  double lr = 0.001;
  int batch = 8;
  int epochs = 10;
  double bn_momentum = 0.99;
  int model_depth = 4;
  int base_channels = 64;
  int checkpoint_interval = 0;
  bool deterministic = false;
};

void run_train(const TrainOpts& o) {
  print_config("train", {{"data", o.data},
                         {"resume", o.resume.empty() ? "(none)" : o.resume},
                         {"seed", std::to_string(o.seed)},
                         {"lr", fmt(o.lr)},
                         {"batch", std::to_string(o.batch)},
                         {"epochs", std::to_string(o.epochs)},
                         {"bn_momentum", fmt(o.bn_momentum)},
                         {"model_depth", std::to_string(o.model_depth)},
                         {"base_channels", std::to_string(o.base_channels)},
                         {"checkpoint_interval", std::to_string(o.checkpoint_interval)},
                         {"deterministic", o.deterministic ? "on" : "on (always)"},
                         {"out", o.out}});
  const DatasetManifest manifest = read_manifest((fs::path(o.data) / "manifest.txt").string());
  UNetModel<float> model;
  int start_epoch = 0;
  int64_t start_step = 0;
  if (o.resume.empty()) {
    ModelConfig mc;
    mc.in_channels = 2;
    mc.num_classes = manifest.num_classes;
    mc.depth = o.model_depth;
    mc.base_channels = o.base_channels;
    mc.height = manifest.projection.height;
    mc.width = manifest.projection.width;
    mc.bn_momentum = o.bn_momentum;
    model = UNetModel<float>::build(mc, o.seed);
  } else {
    const auto entries = read_checkpoint(o.resume);
    model = model_from_entries<float>(entries);
    const NamedArray* ep = find_entry(entries, "__trainer.epoch");
    const NamedArray* st = find_entry(entries, "__trainer.global_step");
    if (!ep || !st) throw std::runtime_error(o.resume + ": not a trainer checkpoint");
    start_epoch = int(ep->data[0]);
    start_step = int64_t(st->data[0]);
    std::cout << "resuming after epoch " << start_epoch << "\n";
  }
  std::cout << "parameters " << model.parameter_count() << "\n";
  TrainConfig cfg;
  cfg.lr = o.lr;
  cfg.batch_size = o.batch;
  cfg.epochs = o.epochs;
  cfg.seed = o.seed;
  cfg.checkpoint_interval = o.checkpoint_interval;
  cfg.deterministic = o.deterministic;
  cfg.out_dir = o.out;
  train_model(model, manifest, cfg, std::cout, start_epoch, start_step);
}

// --- eval ---------------------------------------------------------------------------

struct EvalOpts : CommonOpts {
  std::string data;
  std::string model;
  std::string split = "val";
  std::string points_dir;
};

void run_eval(const EvalOpts& o) {
  print_config("eval", {{"data", o.data},
                        {"model", o.model},
                        {"split", o.split},
                        {"points", o.points_dir.empty() ? "(none)" : o.points_dir},
                        {"out", o.out.empty() ? "(stdout only)" : o.out}});
  const DatasetManifest manifest = read_manifest((fs::path(o.data) / "manifest.txt").string());
  UNetModel<float> model = load_model<float>(o.model);
  if (model.config.num_classes != manifest.num_classes)
    throw std::runtime_error("model and manifest disagree on class count");
  std::vector<int> indices;
  if (o.split == "train")
    indices = manifest.train_indices();
  else if (o.split == "val")
    indices = manifest.val_indices();
  else if (o.split == "all")
    for (size_t i = 0; i < manifest.ids.size(); ++i) indices.push_back(int(i));
  else
    throw std::runtime_error("--split must be train, val or all");
  if (indices.empty()) throw std::runtime_error("split '" + o.split + "' is empty");

  const SegMetrics metrics = evaluate(model, manifest, indices);
  std::cout << "pixel metrics (" << o.split << " split)\n"
            << format_metrics_table(metrics, manifest.class_names);
  std::string report = format_metrics_report(metrics, manifest.class_names);

  if (!o.points_dir.empty()) {
    const SegMetrics pm = evaluate_points(model, manifest, indices, o.points_dir);
    std::cout << "point metrics (" << o.split << " split)\n"
              << format_metrics_table(pm, manifest.class_names);
    std::string plines = format_metrics_report(pm, manifest.class_names);
    std::string prefixed;
    size_t start = 0;
    while (start < plines.size()) {
      const size_t stop = plines.find('\n', start);
      prefixed += "points." + plines.substr(start, stop - start + 1);
      start = stop + 1;
    }
    report += prefixed;
  }
  if (!o.out.empty()) {
    plan_output(o.out);
    std::ofstream os(o.out, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + o.out + " for writing");
    os << report;
    os.flush();
    if (!os) throw std::runtime_error("write failed for " + o.out);
    std::cout << "wrote " << o.out << "\n";
  }
}

// --- infer ---------------------------------------------------------------------------

struct InferOpts : CommonOpts {
  std::string model;
  std::string in;
};

void run_infer(const InferOpts& o) {
  print_config("infer", {{"model", o.model}, {"in", o.in}, {"out", o.out}});
  UNetModel<float> model = load_model<float>(o.model);
  PointCloud cloud = read_point_cloud(o.in);
  ProjectionConfig proj;
  proj.width = model.config.width;
  proj.height = model.config.height;
  RangeImage image = project(cloud, proj);

  NoGradGuard no_grad;
  model.set_training(false);
  Tensor<float> one = normalize_channels<float>(image, model.stats);
  Tensor<float> input =
      Tensor<float>::from_array({1, 2, image.height, image.width}, ArrayX<float>(one.data()));
  Tensor<float> logits = model.forward(input);
  const Index hw = Index(image.pixel_count());
  const Index k = logits.extent(1);
  const float* y = logits.data().data();
  image.has_labels = true;
  image.labels.assign(size_t(hw), 0);
  for (Index i = 0; i < hw; ++i) {
    if (!image.mask[size_t(i)]) continue;
    int best = 0;
    float best_v = y[i];
    for (Index c = 1; c < k; ++c)
      if (y[c * hw + i] > best_v) {
        best_v = y[c * hw + i];
        best = int(c);
      }
    image.labels[size_t(i)] = uint8_t(best);
  }
  const std::vector<uint8_t> point_labels = backproject_labels(image, cloud);

  const std::string rimg_path = o.out + ".rimg";
  const std::string bin_path = o.out + ".bin";
  const std::string label_path = o.out + ".label";
  plan_output(rimg_path);
  plan_output(bin_path);
  plan_output(label_path);
  RangeImage stored = image;
  stored.index_map.clear();
  write_range_image(rimg_path, stored);
  write_point_cloud(bin_path, cloud);
  write_labels(label_path, point_labels);
  std::cout << "wrote " << rimg_path << ", " << bin_path << ", " << label_path << "\n";
}

// --- render ---------------------------------------------------------------------------

struct RenderOpts : CommonOpts {
  std::string in;
};

void run_render(const RenderOpts& o) {
  print_config("render", {{"in", o.in}, {"out", o.out}});
  const RangeImage image = read_range_image(o.in);
  plan_output(o.out);
  render_labels(o.out, image);
  std::cout << "wrote " << o.out << " (" << image.width << "x" << image.height << ")\n";
}

// --- bench ----------------------------------------------------------------------------

struct BenchOpts : CommonOpts {
  std::string model;
  int frames = 30;
  int model_depth = 4;
  int base_channels = 64;
};

void run_bench(const BenchOpts& o) {
  print_config("bench", {{"model", o.model.empty() ? "(fresh)" : o.model},
                         {"frames", std::to_string(o.frames)},
                         {"seed", std::to_string(o.seed)},
                         {"width", std::to_string(o.width)},
                         {"height", std::to_string(o.height)}});
  UNetModel<float> model;
  if (!o.model.empty()) {
    model = load_model<float>(o.model);
  } else {
    ModelConfig mc;
    mc.in_channels = 2;
    mc.num_classes = o.classes;
    mc.depth = o.model_depth;
    mc.base_channels = o.base_channels;
    mc.height = o.height;
    mc.width = o.width;
    model = UNetModel<float>::build(mc, o.seed);
  }
  const BenchReport report = benchmark_inference(model, o.frames, o.seed);
  char line[96];
  std::snprintf(line, sizeof line, "frames %d\nseconds %.6f\nfps %.3f\n", report.frames,
                report.seconds, report.fps);
  std::cout << line;
}

void add_common(CLI::App* sub, CommonOpts& o, bool with_out = true) {
  sub->add_option("--seed", o.seed, "random seed")->capture_default_str();
  sub->add_option("--width", o.width, "range image width")->capture_default_str();
  sub->add_option("--height", o.height, "range image height")->capture_default_str();
  sub->add_option("--classes", o.classes, "number of classes")->capture_default_str();
  if (with_out) sub->add_option("--out", o.out, "output path")->required();
  sub->set_config("--config", "", "read options from a config file");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR range-image semantic segmentation pipeline"};
  app.require_subcommand(1);

  SynthOpts synth_opts;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate labeled synthetic point clouds");
  add_common(synth_cmd, synth_opts);
  synth_cmd->add_option("--scenes", synth_opts.scenes, "number of scenes")->capture_default_str();
  synth_cmd->add_option("--cars", synth_opts.cars, "cars per scene")->capture_default_str();
  synth_cmd->add_option("--pedestrians", synth_opts.pedestrians, "pedestrians per scene")
      ->capture_default_str();
  synth_cmd->add_option("--cyclists", synth_opts.cyclists, "cyclists per scene")->capture_default_str();

  ProjectOpts project_opts;
  CLI::App* project_cmd = app.add_subcommand("project", "project a point cloud to a range image");
  add_common(project_cmd, project_opts);
  project_cmd->add_option("--in", project_opts.in, "input .bin point cloud")->required();
  project_cmd->add_option("--labels", project_opts.labels, "optional .label sidecar");

  BuildOpts build_opts;
  CLI::App* build_cmd = app.add_subcommand("build-dataset", "project clouds and write a dataset");
  add_common(build_cmd, build_opts);
  build_cmd->add_option("--in", build_opts.in, "directory of .bin + .label files")->required();
  build_cmd->add_option("--val-fraction", build_opts.val_fraction, "validation fraction")
      ->capture_default_str();
  build_cmd->add_option("--w0", build_opts.w0, "boundary weight amplitude")->capture_default_str();
  build_cmd->add_option("--sigma", build_opts.sigma, "boundary weight falloff, pixels")
      ->capture_default_str();
  build_cmd->add_flag("--no-class-balance", build_opts.no_class_balance, "disable w_c balancing");

  TrainOpts train_opts;
  CLI::App* train_cmd = app.add_subcommand("train", "train the segmentation network");
  add_common(train_cmd, train_opts);
  train_cmd->add_option("--data", train_opts.data, "dataset directory (holds manifest.txt)")->required();
  train_cmd->add_option("--resume", train_opts.resume, "checkpoint to resume from");
  train_cmd->add_option("--lr", train_opts.lr, "learning rate")->capture_default_str();
  train_cmd->add_option("--batch", train_opts.batch, "batch size")->capture_default_str();
  train_cmd->add_option("--epochs", train_opts.epochs, "epoch budget")->capture_default_str();
  train_cmd->add_option("--bn-momentum", train_opts.bn_momentum, "batchnorm running-stat momentum")
      ->capture_default_str();
  train_cmd->add_option("--model-depth", train_opts.model_depth, "encoder stages")->capture_default_str();
  train_cmd->add_option("--base-channels", train_opts.base_channels, "first-stage channels")
      ->capture_default_str();
  train_cmd->add_option("--checkpoint-interval", train_opts.checkpoint_interval,
                        "epochs between checkpoints (0 = final only)")
      ->capture_default_str();
  train_cmd->add_flag("--deterministic", train_opts.deterministic,
                      "deterministic mode (always on; flag kept for scripts)");

  EvalOpts eval_opts;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd, eval_opts, false);
  eval_cmd->add_option("--data", eval_opts.data, "dataset directory")->required();
  eval_cmd->add_option("--model", eval_opts.model, "checkpoint path")->required();
  eval_cmd->add_option("--split", eval_opts.split, "train | val | all")->capture_default_str();
  eval_cmd->add_option("--points", eval_opts.points_dir, "cloud directory for point-level metrics");
  eval_cmd->add_option("--out", eval_opts.out, "metrics report file");

  InferOpts infer_opts;
  CLI::App* infer_cmd = app.add_subcommand("infer", "label one point cloud");
  add_common(infer_cmd, infer_opts);
  infer_cmd->add_option("--model", infer_opts.model, "checkpoint path")->required();
  infer_cmd->add_option("--in", infer_opts.in, "input .bin point cloud")->required();

  RenderOpts render_opts;
  CLI::App* render_cmd = app.add_subcommand("render", "render a range image's labels to PPM");
  add_common(render_cmd, render_opts);
  render_cmd->add_option("--in", render_opts.in, "input .rimg file")->required();

  BenchOpts bench_opts;
  CLI::App* bench_cmd = app.add_subcommand("bench", "measure inference throughput");
  add_common(bench_cmd, bench_opts, false);
  bench_cmd->add_option("--model", bench_opts.model, "checkpoint path (else a fresh model)");
  bench_cmd->add_option("--frames", bench_opts.frames, "frames to run")->capture_default_str();
  bench_cmd->add_option("--model-depth", bench_opts.model_depth, "encoder stages")->capture_default_str();
  bench_cmd->add_option("--base-channels", bench_opts.base_channels, "first-stage channels")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd) run_synth(synth_opts);
    if (*project_cmd) run_project(project_opts);
    if (*build_cmd) run_build(build_opts);
    if (*train_cmd) run_train(train_opts);
    if (*eval_cmd) run_eval(eval_opts);
    if (*infer_cmd) run_infer(infer_opts);
    if (*render_cmd) run_render(render_opts);
    if (*bench_cmd) run_bench(bench_opts);
  } catch (const std::exception& e) {
    discard_outputs();
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
