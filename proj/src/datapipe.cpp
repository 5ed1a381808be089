#include "lidarmotion/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "lidarmotion/error.hpp"
#include "lidarmotion/kitti.hpp"

namespace fs = std::filesystem;

namespace lidarmotion {

int mode_channels(Mode mode) {
  switch (mode) {
    case Mode::D: return 4;
    case Mode::DF: return 6;
    case Mode::DFS: return 8;
    case Mode::DFSO: return 11;
  }
  fail(ErrorCategory::internal, "unknown mode");
}

std::string mode_name(Mode mode) {
  switch (mode) {
    case Mode::D: return "D";
    case Mode::DF: return "D&F";
    case Mode::DFS: return "D&F&S";
    case Mode::DFSO: return "D&F&S&O";
  }
  fail(ErrorCategory::internal, "unknown mode");
}

Mode mode_from_name(const std::string& name) {
  if (name == "D") return Mode::D;
  if (name == "D&F") return Mode::DF;
  if (name == "D&F&S") return Mode::DFS;
  if (name == "D&F&S&O") return Mode::DFSO;
  fail(ErrorCategory::config, "unknown mode '" + name +
                                  "' (expected D, D&F, D&F&S or D&F&S&O)");
}

std::vector<ChannelRole> mode_layout(Mode mode) {
  std::vector<ChannelRole> roles = {ChannelRole::range_t, ChannelRole::refl_t,
                                    ChannelRole::range_tn, ChannelRole::refl_tn};
  if (mode == Mode::D) return roles;
  roles.push_back(ChannelRole::flow_u);
  roles.push_back(ChannelRole::flow_v);
  if (mode == Mode::DF) return roles;
  roles.push_back(ChannelRole::veh_t);
  roles.push_back(ChannelRole::veh_tn);
  if (mode == Mode::DFS) return roles;
  roles.push_back(ChannelRole::odo_dz);
  roles.push_back(ChannelRole::odo_dx);
  roles.push_back(ChannelRole::odo_dyaw);
  return roles;
}

bool flips_sign(ChannelRole role) {
  return role == ChannelRole::flow_u || role == ChannelRole::odo_dx ||
         role == ChannelRole::odo_dyaw;
}

namespace {

void copy_plane(PriorStack& stack, int channel, const std::vector<double>& src) {
  std::copy(src.begin(), src.end(), stack.channel(channel));
}

// Frame-(t+n) boxes keyed by track id; a box without a successor is treated
// as static (its motion never passes the dynamic filter).
std::vector<Vec2> pair_motions(const ScenePair& pair) {
  std::vector<Vec2> motions(pair.boxes_t.size(), Vec2{0.0, 0.0});
  const RelativeTransform transform = relative_transform(pair.pose_t, pair.pose_tn);
  for (size_t i = 0; i < pair.boxes_t.size(); ++i) {
    const int id = pair.boxes_t[i].track_id;
    for (const TrackedBox& next : pair.boxes_tn) {
      if (next.track_id != id) continue;
      motions[i] = motion_vector(pair.boxes_t[i].centroid, next.centroid, transform);
      break;
    }
  }
  return motions;
}

}  // namespace

AssembledSample assemble_input(const ScenePair& pair, const AssembleOptions& options,
                               const SensorModel& sensor, const IntervalSpec& spec) {
  const Mode mode = options.mode;
  const RangeImage img_t = project(pair.scan_t, sensor);
  const RangeImage img_tn = project(pair.scan_tn, sensor);

  AssembledSample sample;
  sample.stack.mode = mode;
  sample.stack.rows = sensor.n_rows;
  sample.stack.cols = sensor.n_cols;
  sample.stack.data.assign(static_cast<size_t>(mode_channels(mode)) * sensor.cell_count(), 0.0);

  copy_plane(sample.stack, 0, img_t.range);
  copy_plane(sample.stack, 1, img_t.reflectivity);
  copy_plane(sample.stack, 2, img_tn.range);
  copy_plane(sample.stack, 3, img_tn.reflectivity);
  int next_channel = 4;

  if (mode != Mode::D) {
    LidarFlowMap flow_map;
    if (options.flow_source == FlowSource::ground_truth) {
      if (!pair.flow.has_value() || !pair.calib.has_value()) {
        fail(ErrorCategory::mode_prerequisite_missing,
             "mode " + mode_name(mode) + " with ground-truth flow needs a camera "
             "flow image and calibration");
      }
      flow_map = lidar_flow_gt(img_t, sensor, *pair.calib, *pair.flow);
    } else if (options.flow_source == FlowSource::predicted) {
      if (!options.flow_predictor) {
        fail(ErrorCategory::mode_prerequisite_missing,
             "mode " + mode_name(mode) + " with predicted flow needs a flow network");
      }
      PriorStack data_stack;
      data_stack.mode = Mode::D;
      data_stack.rows = sample.stack.rows;
      data_stack.cols = sample.stack.cols;
      data_stack.data.assign(sample.stack.data.begin(),
                             sample.stack.data.begin() + 4 * sample.stack.plane());
      flow_map = options.flow_predictor(data_stack);
    } else {
      fail(ErrorCategory::mode_prerequisite_missing,
           "mode " + mode_name(mode) + " needs a flow source (gt or pred)");
    }
    double* u = sample.stack.channel(next_channel);
    double* v = sample.stack.channel(next_channel + 1);
    for (size_t i = 0; i < flow_map.u.size(); ++i) {
      if (!flow_map.valid[i]) continue;
      u[i] = flow_map.u[i];
      v[i] = flow_map.v[i];
    }
    next_channel += 2;
  }

  if (mode == Mode::DFS || mode == Mode::DFSO) {
    const VehiclenessMap vt = pair.veh_t.has_value()
                                  ? *pair.veh_t
                                  : oracle_vehicle_mask(img_t, sensor, pair.boxes_t);
    const VehiclenessMap vtn = pair.veh_tn.has_value()
                                   ? *pair.veh_tn
                                   : oracle_vehicle_mask(img_tn, sensor, pair.boxes_tn);
    if (vt.rows != sensor.n_rows || vt.cols != sensor.n_cols ||
        vtn.rows != sensor.n_rows || vtn.cols != sensor.n_cols) {
      fail(ErrorCategory::shape, "vehicleness maps do not match the sensor grid");
    }
    copy_plane(sample.stack, next_channel, vt.p);
    copy_plane(sample.stack, next_channel + 1, vtn.p);
    next_channel += 2;
  }

  if (mode == Mode::DFSO) {
    const RelativeTransform transform = relative_transform(pair.pose_t, pair.pose_tn);
    const OdometryPlanes planes = odometry_planes(transform, sensor.n_rows, sensor.n_cols);
    std::fill_n(sample.stack.channel(next_channel), sample.stack.plane(), planes.dz);
    std::fill_n(sample.stack.channel(next_channel + 1), sample.stack.plane(), planes.dx);
    std::fill_n(sample.stack.channel(next_channel + 2), sample.stack.plane(), planes.dyaw);
    next_channel += 3;
  }

  sample.gt = rasterize_gt(img_t, sensor, pair.boxes_t, pair_motions(pair), spec);
  sample.has_motion =
      std::any_of(sample.gt.dynamic.begin(), sample.gt.dynamic.end(),
                  [](std::uint8_t d) { return d != 0; });
  return sample;
}

std::pair<PriorStack, MotionMap> hflip(const PriorStack& stack, const MotionMap& gt) {
  PriorStack out = stack;
  const auto roles = mode_layout(stack.mode);
  const int W = stack.cols;
  for (int c = 0; c < stack.channels(); ++c) {
    const double sign = flips_sign(roles[c]) ? -1.0 : 1.0;
    const double* src = stack.channel(c);
    double* dst = out.channel(c);
    for (int r = 0; r < stack.rows; ++r) {
      for (int col = 0; col < W; ++col) {
        dst[static_cast<size_t>(r) * W + col] =
            sign * src[static_cast<size_t>(r) * W + (W - 1 - col)];
      }
    }
  }
  MotionMap gout(gt.rows, gt.cols);
  for (int r = 0; r < gt.rows; ++r) {
    for (int col = 0; col < W; ++col) {
      const size_t d = gout.idx(r, col);
      const size_t s = gt.idx(r, W - 1 - col);
      gout.dz[d] = gt.dz[s];
      gout.dx[d] = -gt.dx[s];
      gout.dynamic[d] = gt.dynamic[s];
    }
  }
  return {std::move(out), gout};
}

BatchSampler::BatchSampler(const std::vector<std::uint8_t>& has_motion,
                           std::uint64_t seed)
    : rng_(seed) {
  for (size_t i = 0; i < has_motion.size(); ++i) {
    (has_motion[i] ? motion_ : static_).push_back(static_cast<int>(i));
  }
  if (motion_.empty() && static_.empty()) {
    fail(ErrorCategory::state, "batch sampler: empty index");
  }
}

std::vector<int> BatchSampler::next_batch(int batch_size) {
  const int motion_slots = batch_size * 8 / 10;
  std::vector<int> batch;
  batch.reserve(static_cast<size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) {
    const bool want_motion = i < motion_slots;
    const auto& primary = want_motion ? motion_ : static_;
    const auto& fallback = want_motion ? static_ : motion_;
    const auto& stratum = primary.empty() ? fallback : primary;
    batch.push_back(stratum[rng_.below(stratum.size())]);
  }
  return batch;
}

// ---- canonical scene directories ----

namespace {

std::string frame_name(int frame, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d%s", frame, ext);
  return buf;
}

double kv_double(const std::string& kv, const std::string& where) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) {
    fail(ErrorCategory::format, where + ": expected key=value, found '" + kv + "'");
  }
  try {
    size_t pos = 0;
    const double v = std::stod(kv.substr(eq + 1), &pos);
    if (pos != kv.size() - eq - 1) throw std::invalid_argument(kv);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCategory::format, where + ": bad number in '" + kv + "'");
  }
}

std::string kv_key(const std::string& kv) {
  const auto eq = kv.find('=');
  return eq == std::string::npos ? kv : kv.substr(0, eq);
}

}  // namespace

std::vector<int> SceneDir::frames() const {
  std::vector<int> out;
  out.reserve(poses.size());
  for (const auto& [frame, pose] : poses) out.push_back(frame);
  return out;
}

SceneDir open_scene_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) fail(ErrorCategory::io, "not a scene directory: " + dir);
  SceneDir scene;
  scene.dir = dir;
  scene.poses = read_pose_file((fs::path(dir) / "poses.txt").string());

  const fs::path objects = fs::path(dir) / "objects.txt";
  if (fs::exists(objects)) {
    std::ifstream in(objects);
    if (!in) fail(ErrorCategory::io, "cannot open: " + objects.string());
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      std::string record;
      ss >> record;
      const std::string where = objects.string() + ":" + std::to_string(line_no);
      if (record != "box") {
        fail(ErrorCategory::format, where + ": unknown record '" + record + "'");
      }
      TrackedBox box;
      int frame = 0;
      std::string kv;
      while (ss >> kv) {
        const std::string key = kv_key(kv);
        const double v = kv_double(kv, where);
        if (key == "frame") frame = static_cast<int>(v);
        else if (key == "track") box.track_id = static_cast<int>(v);
        else if (key == "cz") box.centroid.z = v;
        else if (key == "cx") box.centroid.x = v;
        else if (key == "yaw") box.yaw = v;
        else if (key == "length") box.length = v;
        else if (key == "width") box.width = v;
        else if (key == "height") box.height = v;
        else if (key == "center_height") box.center_height = v;
        else fail(ErrorCategory::format, where + ": unknown key '" + key + "'");
      }
      scene.boxes[frame].push_back(box);
    }
  }

  const fs::path calib = fs::path(dir) / "calib.txt";
  if (fs::exists(calib)) scene.calib = read_calib_file(calib.string());
  return scene;
}

ScenePair load_scene_pair(const SceneDir& scene, int frame_t, const IntervalSpec& spec,
                          const SensorModel& sensor) {
  const int frame_tn = frame_t + spec.n;
  const auto pose_t = scene.poses.find(frame_t);
  const auto pose_tn = scene.poses.find(frame_tn);
  if (pose_t == scene.poses.end() || pose_tn == scene.poses.end()) {
    fail(ErrorCategory::io, scene.dir + ": no pose pair for frames " +
                                std::to_string(frame_t) + "," + std::to_string(frame_tn));
  }
  ScenePair pair;
  pair.pose_t = pose_t->second;
  pair.pose_tn = pose_tn->second;
  pair.scan_t = read_velodyne_bin(
      (fs::path(scene.dir) / "velodyne" / frame_name(frame_t, ".bin")).string());
  pair.scan_tn = read_velodyne_bin(
      (fs::path(scene.dir) / "velodyne" / frame_name(frame_tn, ".bin")).string());
  if (auto it = scene.boxes.find(frame_t); it != scene.boxes.end()) pair.boxes_t = it->second;
  if (auto it = scene.boxes.find(frame_tn); it != scene.boxes.end()) pair.boxes_tn = it->second;
  pair.calib = scene.calib;

  const fs::path flow = fs::path(scene.dir) / "flow" / frame_name(frame_t, ".lfl");
  if (fs::exists(flow)) pair.flow = load_flow_image(flow.string());
  const fs::path veh_t = fs::path(scene.dir) / "vehicleness" / frame_name(frame_t, ".veh");
  const fs::path veh_tn = fs::path(scene.dir) / "vehicleness" / frame_name(frame_tn, ".veh");
  if (fs::exists(veh_t)) {
    pair.veh_t = load_vehicleness(veh_t.string(), sensor.n_rows, sensor.n_cols);
  }
  if (fs::exists(veh_tn)) {
    pair.veh_tn = load_vehicleness(veh_tn.string(), sensor.n_rows, sensor.n_cols);
  }
  return pair;
}

void write_scene_dir(const std::string& dir, const std::map<int, EgoPose>& poses,
                     const std::map<int, std::vector<TrackedBox>>& boxes,
                     const std::map<int, PointCloud>& clouds,
                     const std::optional<CameraCalib>& calib,
                     const std::map<int, FlowImage>& flows,
                     const std::map<int, VehiclenessMap>& vehicleness) {
  fs::create_directories(fs::path(dir) / "velodyne");
  write_pose_file(poses, (fs::path(dir) / "poses.txt").string());

  std::ofstream obj(fs::path(dir) / "objects.txt");
  if (!obj) fail(ErrorCategory::io, "cannot open for writing: " + dir + "/objects.txt");
  char buf[512];
  for (const auto& [frame, frame_boxes] : boxes) {
    for (const TrackedBox& b : frame_boxes) {
      std::snprintf(buf, sizeof(buf),
                    "box frame=%d track=%d cz=%.17g cx=%.17g yaw=%.17g length=%.17g "
                    "width=%.17g height=%.17g center_height=%.17g\n",
                    frame, b.track_id, b.centroid.z, b.centroid.x, b.yaw, b.length,
                    b.width, b.height, b.center_height);
      obj << buf;
    }
  }
  obj.close();

  for (const auto& [frame, cloud] : clouds) {
    write_velodyne_bin(cloud,
                       (fs::path(dir) / "velodyne" / frame_name(frame, ".bin")).string());
  }
  if (calib.has_value()) {
    write_calib_file(*calib, (fs::path(dir) / "calib.txt").string());
  }
  if (!flows.empty()) {
    fs::create_directories(fs::path(dir) / "flow");
    for (const auto& [frame, flow] : flows) {
      save_flow_image(flow, (fs::path(dir) / "flow" / frame_name(frame, ".lfl")).string());
    }
  }
  if (!vehicleness.empty()) {
    fs::create_directories(fs::path(dir) / "vehicleness");
    for (const auto& [frame, veh] : vehicleness) {
      save_vehicleness(veh,
                       (fs::path(dir) / "vehicleness" / frame_name(frame, ".veh")).string());
    }
  }
}

void save_dataset_index(const DatasetIndex& index, const std::string& path) {
  nlohmann::ordered_json j;
  j["pairs"] = nlohmann::ordered_json::array();
  for (const DatasetEntry& e : index.entries) {
    j["pairs"].push_back({{"dir", e.dir}, {"frame", e.frame}, {"has_motion", e.has_motion}});
  }
  std::ofstream out(path);
  if (!out) fail(ErrorCategory::io, "cannot open for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) fail(ErrorCategory::io, "write failed: " + path);
}

DatasetIndex load_dataset_index(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::io, "cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::format, path + ": " + e.what());
  }
  DatasetIndex index;
  for (const auto& e : j.at("pairs")) {
    index.entries.push_back(
        {e.at("dir").get<std::string>(), e.at("frame").get<int>(), e.at("has_motion").get<bool>()});
  }
  return index;
}

std::vector<std::string> list_pair_dirs(const std::string& root) {
  if (!fs::is_directory(root)) fail(ErrorCategory::io, "not a directory: " + root);
  std::vector<std::string> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "poses.txt")) {
      dirs.push_back(entry.path().string());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

// ---- STK1 container ----

namespace {

void save_planes(const std::string& path, int channels, int rows, int cols,
                 const std::function<double(int, size_t)>& plane_value) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCategory::io, "cannot open for writing: " + path);
  out.write("STK1\n", 5);
  const std::uint32_t dims[3] = {static_cast<std::uint32_t>(channels),
                                 static_cast<std::uint32_t>(rows),
                                 static_cast<std::uint32_t>(cols)};
  out.write(reinterpret_cast<const char*>(dims), 12);
  const size_t plane = static_cast<size_t>(rows) * cols;
  for (int c = 0; c < channels; ++c) {
    for (size_t i = 0; i < plane; ++i) {
      const float v = static_cast<float>(plane_value(c, i));
      out.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
  if (!out) fail(ErrorCategory::io, "write failed: " + path);
}

struct StackData {
  int channels = 0, rows = 0, cols = 0;
  std::vector<double> data;
};

StackData load_planes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCategory::io, "cannot open: " + path);
  char head[5];
  in.read(head, 5);
  if (!in || std::memcmp(head, "STK1\n", 5) != 0) {
    fail(ErrorCategory::format, "missing STK1 header: " + path);
  }
  std::uint32_t dims[3];
  in.read(reinterpret_cast<char*>(dims), 12);
  if (!in) fail(ErrorCategory::format, "truncated header: " + path);
  StackData sd;
  sd.channels = static_cast<int>(dims[0]);
  sd.rows = static_cast<int>(dims[1]);
  sd.cols = static_cast<int>(dims[2]);
  sd.data.resize(static_cast<size_t>(sd.channels) * sd.rows * sd.cols);
  for (auto& v : sd.data) {
    float f;
    in.read(reinterpret_cast<char*>(&f), 4);
    if (!in) fail(ErrorCategory::format, "truncated payload: " + path);
    v = f;
  }
  return sd;
}

}  // namespace

void save_stack(const PriorStack& stack, const std::string& path) {
  const size_t plane = stack.plane();
  save_planes(path, stack.channels(), stack.rows, stack.cols,
              [&](int c, size_t i) { return stack.data[c * plane + i]; });
}

PriorStack load_stack(const std::string& path) {
  const StackData sd = load_planes(path);
  PriorStack stack;
  switch (sd.channels) {
    case 4: stack.mode = Mode::D; break;
    case 6: stack.mode = Mode::DF; break;
    case 8: stack.mode = Mode::DFS; break;
    case 11: stack.mode = Mode::DFSO; break;
    default:
      fail(ErrorCategory::format, path + ": " + std::to_string(sd.channels) +
                                      " channels is not a valid stack depth");
  }
  stack.rows = sd.rows;
  stack.cols = sd.cols;
  stack.data = sd.data;
  return stack;
}

void save_motion_map(const MotionMap& map, const std::string& path) {
  save_planes(path, 3, map.rows, map.cols, [&](int c, size_t i) {
    return c == 0 ? map.dz[i] : c == 1 ? map.dx[i] : double(map.dynamic[i]);
  });
}

MotionMap load_motion_map(const std::string& path) {
  const StackData sd = load_planes(path);
  if (sd.channels != 3) {
    fail(ErrorCategory::format, path + ": motion maps carry 3 planes, found " +
                                    std::to_string(sd.channels));
  }
  MotionMap map(sd.rows, sd.cols);
  const size_t plane = static_cast<size_t>(sd.rows) * sd.cols;
  for (size_t i = 0; i < plane; ++i) {
    map.dz[i] = sd.data[i];
    map.dx[i] = sd.data[plane + i];
    map.dynamic[i] = sd.data[2 * plane + i] != 0.0 ? 1 : 0;
  }
  return map;
}

void save_range_image(const RangeImage& image, const std::string& path) {
  save_planes(path, 3, image.rows, image.cols, [&](int c, size_t i) {
    return c == 0 ? image.range[i] : c == 1 ? image.reflectivity[i] : double(image.valid[i]);
  });
}

RangeImage load_range_image(const std::string& path) {
  const StackData sd = load_planes(path);
  if (sd.channels != 3) {
    fail(ErrorCategory::format, path + ": range images carry 3 planes, found " +
                                    std::to_string(sd.channels));
  }
  RangeImage image(sd.rows, sd.cols);
  const size_t plane = static_cast<size_t>(sd.rows) * sd.cols;
  for (size_t i = 0; i < plane; ++i) {
    image.range[i] = sd.data[i];
    image.reflectivity[i] = sd.data[plane + i];
    image.valid[i] = sd.data[2 * plane + i] != 0.0 ? 1 : 0;
  }
  return image;
}

}  // namespace lidarmotion
