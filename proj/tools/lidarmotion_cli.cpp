// lidarmotion command-line pipeline: synthesize scenes, ingest Kitti
// sequences, project scans, generate ground truth and priors, assemble
// network inputs, train, evaluate and render.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include "lidarmotion/config.hpp"
#include "lidarmotion/datapipe.hpp"
#include "lidarmotion/error.hpp"
#include "lidarmotion/evalkit.hpp"
#include "lidarmotion/flow_color.hpp"
#include "lidarmotion/kitti.hpp"
#include "lidarmotion/motion_net.hpp"
#include "lidarmotion/synth.hpp"

namespace fs = std::filesystem;
using namespace lidarmotion;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;

  RunConfig load() const { return load_run_config(config_path, overrides); }
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON run configuration")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", opts.overrides,
                  "dotted key=value config override (repeatable)");
}

void require_exists(const std::string& path, const char* what) {
  if (!fs::exists(path)) {
    fail(ErrorCategory::io, std::string(what) + " does not exist: " + path);
  }
}

std::string pair_dir_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "pair_%04d", i);
  return buf;
}

// Frames that have a successor at distance n.
std::vector<int> pair_frames(const SceneDir& scene, const IntervalSpec& spec) {
  std::vector<int> out;
  for (const auto& [frame, pose] : scene.poses) {
    if (scene.poses.count(frame + spec.n)) out.push_back(frame);
  }
  return out;
}

AssembleOptions assemble_options(const RunConfig& config,
                                 std::optional<MotionNet<double>>& flow_net) {
  AssembleOptions options;
  options.mode = config.mode;
  if (config.mode == Mode::D) return options;
  options.flow_source = config.flow_source;
  if (config.flow_source == FlowSource::predicted) {
    if (config.flow_checkpoint.empty()) {
      fail(ErrorCategory::config, "flow.source=pred needs flow.checkpoint");
    }
    require_exists(config.flow_checkpoint, "flow checkpoint");
    NetConfig flow_config = config.net;
    flow_config.in_channels = 4;
    flow_net.emplace(build_net<double>(flow_config, 0));
    load_net(*flow_net, config.flow_checkpoint);
    MotionNet<double>* net = &*flow_net;
    options.flow_predictor = [net](const PriorStack& data) {
      const auto pred = net_predict(*net, data.data, data.channels(), data.rows, data.cols);
      LidarFlowMap map(data.rows, data.cols);
      const size_t plane = data.plane();
      for (size_t i = 0; i < plane; ++i) {
        if (data.data[i] <= 0.0) continue;  // no return at t
        map.u[i] = pred[i];
        map.v[i] = pred[plane + i];
        map.valid[i] = 1;
      }
      return map;
    };
  }
  return options;
}

std::vector<AssembledSample> assemble_dataset(const std::string& data_dir,
                                              const RunConfig& config,
                                              std::optional<MotionNet<double>>& flow_net,
                                              DatasetIndex* index_out = nullptr) {
  const AssembleOptions options = assemble_options(config, flow_net);
  std::vector<AssembledSample> samples;
  for (const std::string& dir : list_pair_dirs(data_dir)) {
    const SceneDir scene = open_scene_dir(dir);
    for (int frame : pair_frames(scene, config.interval)) {
      const ScenePair pair = load_scene_pair(scene, frame, config.interval, config.sensor);
      samples.push_back(assemble_input(pair, options, config.sensor, config.interval));
      if (index_out) {
        index_out->entries.push_back({dir, frame, samples.back().has_motion});
      }
    }
  }
  if (samples.empty()) {
    fail(ErrorCategory::io, "no scene pairs under " + data_dir);
  }
  return samples;
}

void write_loss_curve(const std::vector<double>& losses, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCategory::io, "cannot open for writing: " + path);
  char buf[64];
  for (size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu %.17g\n", i, losses[i]);
    out << buf;
  }
}

// ---- commands ----

int cmd_synth(const CommonOpts& common, const std::string& out_dir) {
  const RunConfig config = common.load();
  fs::create_directories(out_dir);
  const int n_static = static_cast<int>(
      std::lround(config.synth.count * config.synth.static_fraction));
  for (int i = 0; i < config.synth.count; ++i) {
    const bool force_static = i >= config.synth.count - n_static;
    const SynthSpec spec = random_spec(derive_seed(config.synth.seed, i),
                                       config.synth.params, force_static);
    write_synth_pair_dir((fs::path(out_dir) / pair_dir_name(i)).string(), spec,
                         config.synth.params);
  }
  std::printf("synthesized %d scene pairs under %s\n", config.synth.count,
              out_dir.c_str());
  return 0;
}

int cmd_ingest_kitti(const CommonOpts& common, const std::string& velodyne_dir,
                     const std::string& label_file, const std::string& pose_file,
                     const std::string& calib_file, const std::string& flow_dir,
                     const std::string& out_dir) {
  const RunConfig config = common.load();
  (void)config;
  require_exists(velodyne_dir, "velodyne directory");
  require_exists(label_file, "label file");
  require_exists(pose_file, "pose file");
  require_exists(calib_file, "calib file");

  const CameraCalib calib = read_kitti_calib(calib_file);
  const auto poses = read_pose_file(pose_file);
  const auto boxes = read_kitti_tracking_labels(label_file, calib);

  std::map<int, PointCloud> clouds;
  std::map<int, FlowImage> flows;
  for (const auto& [frame, pose] : poses) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.bin", frame);
    const fs::path bin = fs::path(velodyne_dir) / name;
    require_exists(bin.string(), "velodyne scan");
    clouds[frame] = read_velodyne_bin(bin.string());
    if (!flow_dir.empty()) {
      std::snprintf(name, sizeof(name), "%06d.lfl", frame);
      const fs::path lfl = fs::path(flow_dir) / name;
      if (fs::exists(lfl)) flows[frame] = load_flow_image(lfl.string());
    }
  }
  write_scene_dir(out_dir, poses, boxes, clouds, calib, flows, {});
  std::printf("ingested %zu frames into %s\n", poses.size(), out_dir.c_str());
  return 0;
}

int cmd_project(const CommonOpts& common, const std::string& scan,
                const std::string& out) {
  const RunConfig config = common.load();
  require_exists(scan, "scan");
  const PointCloud cloud = read_velodyne_bin(scan);
  save_range_image(project(cloud, config.sensor), out);
  return 0;
}

int cmd_gen_gt(const CommonOpts& common, const std::string& data_dir,
               const std::string& index_path) {
  const RunConfig config = common.load();
  require_exists(data_dir, "dataset directory");
  DatasetIndex index;
  for (const std::string& dir : list_pair_dirs(data_dir)) {
    const SceneDir scene = open_scene_dir(dir);
    fs::create_directories(fs::path(dir) / "gt");
    for (int frame : pair_frames(scene, config.interval)) {
      const ScenePair pair = load_scene_pair(scene, frame, config.interval, config.sensor);
      AssembleOptions options;  // mode D: ground truth only needs the scans
      options.mode = Mode::D;
      const AssembledSample sample =
          assemble_input(pair, options, config.sensor, config.interval);
      char name[32];
      std::snprintf(name, sizeof(name), "%06d.mot", frame);
      save_motion_map(sample.gt, (fs::path(dir) / "gt" / name).string());
      index.entries.push_back({dir, frame, sample.has_motion});
    }
  }
  if (index.entries.empty()) fail(ErrorCategory::io, "no scene pairs under " + data_dir);
  save_dataset_index(index, index_path);
  std::printf("wrote ground truth for %zu pairs; index at %s\n", index.entries.size(),
              index_path.c_str());
  return 0;
}

int cmd_gen_flowprior(const CommonOpts& common, const std::string& data_dir) {
  const RunConfig config = common.load();
  require_exists(data_dir, "dataset directory");
  long written = 0;
  for (const std::string& dir : list_pair_dirs(data_dir)) {
    const SceneDir scene = open_scene_dir(dir);
    if (!scene.calib.has_value()) {
      fail(ErrorCategory::mode_prerequisite_missing,
           dir + ": lidar-flow needs calib.txt");
    }
    fs::create_directories(fs::path(dir) / "lidar_flow");
    for (int frame : pair_frames(scene, config.interval)) {
      const ScenePair pair = load_scene_pair(scene, frame, config.interval, config.sensor);
      if (!pair.flow.has_value()) {
        fail(ErrorCategory::mode_prerequisite_missing,
             dir + ": lidar-flow needs flow/%06d.lfl camera flow maps");
      }
      const RangeImage image = project(pair.scan_t, config.sensor);
      const LidarFlowMap map = lidar_flow_gt(image, config.sensor, *pair.calib, *pair.flow);
      char name[32];
      std::snprintf(name, sizeof(name), "%06d.lfl", frame);
      save_lidar_flow(map, (fs::path(dir) / "lidar_flow" / name).string());
      ++written;
    }
  }
  std::printf("wrote %ld lidar-flow maps\n", written);
  return 0;
}

int cmd_assemble(const CommonOpts& common, const std::string& data_dir,
                 const std::string& out_dir) {
  const RunConfig config = common.load();
  require_exists(data_dir, "dataset directory");
  fs::create_directories(out_dir);
  std::optional<MotionNet<double>> flow_net;
  DatasetIndex index;
  const auto samples = assemble_dataset(data_dir, config, flow_net, &index);
  for (size_t i = 0; i < samples.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "sample_%05zu.stk", i);
    save_stack(samples[i].stack, (fs::path(out_dir) / name).string());
    std::snprintf(name, sizeof(name), "sample_%05zu.mot", i);
    save_motion_map(samples[i].gt, (fs::path(out_dir) / name).string());
  }
  save_dataset_index(index, (fs::path(out_dir) / "index.json").string());
  std::printf("assembled %zu samples (mode %s) into %s\n", samples.size(),
              mode_name(config.mode).c_str(), out_dir.c_str());
  return 0;
}

template <class T>
void run_training(const RunConfig& config, const std::vector<AssembledSample>& samples,
                  const std::string& checkpoint, const std::string& loss_curve) {
  TrainDataset<T> dataset = config.train.target == "flow"
                                ? to_flow_train_dataset<T>(samples)
                                : to_train_dataset<T>(samples);
  NetConfig net_config = config.net;
  if (config.train.target == "flow") net_config.in_channels = 4;
  MotionNet<T> net = build_net<T>(net_config, config.train.seed);
  const auto losses = train_net(net, dataset, config.schedule());
  save_net(net, checkpoint);
  if (!loss_curve.empty()) write_loss_curve(losses, loss_curve);
  std::printf("trained %ld iterations (final loss %.6g); checkpoint at %s\n",
              config.train.iterations, losses.empty() ? 0.0 : losses.back(),
              checkpoint.c_str());
}

int cmd_train(const CommonOpts& common, const std::string& data_dir,
              const std::string& checkpoint, const std::string& loss_curve) {
  RunConfig config = common.load();
  require_exists(data_dir, "dataset directory");
  if (config.train.target == "flow" && config.mode == Mode::D) {
    fail(ErrorCategory::config, "train.target=flow needs a flow-bearing mode (D&F...)");
  }
  std::optional<MotionNet<double>> flow_net;
  const auto samples = assemble_dataset(data_dir, config, flow_net);
  if (config.train.precision == "f32") {
    run_training<float>(config, samples, checkpoint, loss_curve);
  } else {
    run_training<double>(config, samples, checkpoint, loss_curve);
  }
  return 0;
}

int cmd_eval(const CommonOpts& common, const std::string& data_dir,
             const std::string& checkpoint, const std::string& model_name,
             const std::string& train_data, bool baselines, const std::string& json_out,
             const std::string& table_out) {
  const RunConfig config = common.load();
  require_exists(data_dir, "dataset directory");
  std::optional<MotionNet<double>> flow_net;
  const auto samples = assemble_dataset(data_dir, config, flow_net);

  EvalReport report;
  if (baselines) {
    report.rows.push_back(baseline_zero(samples));
    if (!train_data.empty()) {
      require_exists(train_data, "training dataset directory");
      std::optional<MotionNet<double>> train_flow_net;
      const auto train_samples = assemble_dataset(train_data, config, train_flow_net);
      report.rows.push_back(baseline_mean(samples, mean_dynamic_vector(train_samples)));
    }
  }
  if (!checkpoint.empty()) {
    require_exists(checkpoint, "checkpoint");
    MotionNet<double> net = build_net<double>(config.net, 0);
    load_net(net, checkpoint);
    report.rows.push_back(evaluate_model(net, samples, model_name));
  }
  if (report.rows.empty()) {
    fail(ErrorCategory::config, "eval: nothing to do (pass --checkpoint or --baselines)");
  }

  const std::string table = render_report(report);
  std::fputs(table.c_str(), stdout);
  if (!json_out.empty()) {
    std::ofstream out(json_out);
    if (!out) fail(ErrorCategory::io, "cannot open for writing: " + json_out);
    out << report_to_json(report);
  }
  if (!table_out.empty()) {
    std::ofstream out(table_out);
    if (!out) fail(ErrorCategory::io, "cannot open for writing: " + table_out);
    out << table;
  }
  return 0;
}

int cmd_render(const CommonOpts& common, const std::string& input,
               const std::string& output) {
  const RunConfig config = common.load();
  require_exists(input, "motion map");
  const MotionMap map = load_motion_map(input);
  write_ppm(flow_color_encode(map, config.render.max_magnitude), output);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lidar-only vehicle motion estimation pipeline"};
  app.require_subcommand(1);

  CommonOpts common;
  std::string out_dir, data_dir, scan, out_file, index_path;
  std::string velodyne_dir, label_file, pose_file, calib_file, flow_dir;
  std::string checkpoint, loss_curve, model_name = "model", train_data;
  std::string json_out, table_out;
  bool baselines = false;

  auto* synth = app.add_subcommand(
      "synth", "Generate random synthetic scene-pair directories (synth.* config keys)");
  add_common(synth, common);
  synth->add_option("--out", out_dir, "output dataset directory")->required();

  auto* ingest = app.add_subcommand(
      "ingest-kitti", "Convert a Kitti tracking sequence into the canonical scene format");
  add_common(ingest, common);
  ingest->add_option("--velodyne", velodyne_dir, "directory of %06d.bin scans")->required();
  ingest->add_option("--labels", label_file, "Kitti tracking label file")->required();
  ingest->add_option("--poses", pose_file, "pose file: 'frame tx tz yaw' lines")->required();
  ingest->add_option("--calib", calib_file, "Kitti calib file (P2, R_rect, Tr_velo_cam)")
      ->required();
  ingest->add_option("--flow-dir", flow_dir, "optional directory of %06d.lfl camera flow");
  ingest->add_option("--out", out_dir, "output scene directory")->required();

  auto* project_cmd = app.add_subcommand(
      "project", "Project a velodyne scan onto the range-image grid (STK1 output)");
  add_common(project_cmd, common);
  project_cmd->add_option("--scan", scan, "velodyne .bin file")->required();
  project_cmd->add_option("--out", out_file, "output .stk range image")->required();

  auto* gen_gt = app.add_subcommand(
      "gen-gt", "Rasterize motion ground truth for every pair and write the dataset index");
  add_common(gen_gt, common);
  gen_gt->add_option("--data", data_dir, "dataset root of scene directories")->required();
  gen_gt->add_option("--index", index_path, "output index.json")->required();

  auto* gen_flow = app.add_subcommand(
      "gen-flowprior", "Sample camera flow at lidar cells into lidar-flow maps");
  add_common(gen_flow, common);
  gen_flow->add_option("--data", data_dir, "dataset root of scene directories")->required();

  auto* assemble = app.add_subcommand(
      "assemble", "Assemble PriorStack/MotionMap files for the configured mode");
  add_common(assemble, common);
  assemble->add_option("--data", data_dir, "dataset root of scene directories")->required();
  assemble->add_option("--out", out_dir, "output directory for .stk/.mot samples")->required();

  auto* train = app.add_subcommand(
      "train", "Train the motion network (or the lidar-flow predictor with train.target=flow)");
  add_common(train, common);
  train->add_option("--data", data_dir, "training dataset root")->required();
  train->add_option("--checkpoint", checkpoint, "output checkpoint path")->required();
  train->add_option("--loss-curve", loss_curve, "optional 'iter loss' text output");

  auto* eval = app.add_subcommand(
      "eval", "Evaluate a checkpoint and/or the error@zero / error@mean baselines");
  add_common(eval, common);
  eval->add_option("--data", data_dir, "evaluation dataset root")->required();
  eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate");
  eval->add_option("--name", model_name, "row name for the evaluated model");
  eval->add_option("--train-data", train_data,
                   "training dataset root (enables the error@mean baseline)");
  eval->add_flag("--baselines", baselines, "include baseline rows");
  eval->add_option("--json", json_out, "machine-readable report path");
  eval->add_option("--table", table_out, "text table path");

  auto* render = app.add_subcommand("render",
                                    "Color-code a motion map into a P6 PPM image");
  add_common(render, common);
  render->add_option("--input", out_file, "motion map (.mot)")->required();
  render->add_option("--out", out_dir, "output .ppm path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(common, out_dir);
    if (ingest->parsed()) {
      return cmd_ingest_kitti(common, velodyne_dir, label_file, pose_file, calib_file,
                              flow_dir, out_dir);
    }
    if (project_cmd->parsed()) return cmd_project(common, scan, out_file);
    if (gen_gt->parsed()) return cmd_gen_gt(common, data_dir, index_path);
    if (gen_flow->parsed()) return cmd_gen_flowprior(common, data_dir);
    if (assemble->parsed()) return cmd_assemble(common, data_dir, out_dir);
    if (train->parsed()) return cmd_train(common, data_dir, checkpoint, loss_curve);
    if (eval->parsed()) {
      return cmd_eval(common, data_dir, checkpoint, model_name, train_data, baselines,
                      json_out, table_out);
    }
    if (render->parsed()) return cmd_render(common, out_file, out_dir);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", to_string(e.category()), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
