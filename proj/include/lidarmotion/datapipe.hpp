#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lidarmotion/lidar_geom.hpp"
#include "lidarmotion/motion_gt.hpp"
#include "lidarmotion/priors.hpp"
#include "lidarmotion/rng.hpp"

namespace lidarmotion {

// Input composition: lidar Data, +lidar-Flow, +Semantics, +Odometry.
enum class Mode { D, DF, DFS, DFSO };

int mode_channels(Mode mode);  // 4, 6, 8, 11
std::string mode_name(Mode mode);
Mode mode_from_name(const std::string& name);

enum class ChannelRole : std::uint8_t {
  range_t, refl_t, range_tn, refl_tn,
  flow_u, flow_v,
  veh_t, veh_tn,
  odo_dz, odo_dx, odo_dyaw,
};

std::vector<ChannelRole> mode_layout(Mode mode);

// Channels whose sign flips under a horizontal scene mirror.
bool flips_sign(ChannelRole role);

// Two temporally close scans with everything needed to build training data.
struct ScenePair {
  PointCloud scan_t, scan_tn;
  EgoPose pose_t, pose_tn;  // world frame
  std::vector<TrackedBox> boxes_t, boxes_tn;  // ego frame of their own scan
  std::optional<CameraCalib> calib;
  std::optional<FlowImage> flow;  // camera flow at t
  std::optional<VehiclenessMap> veh_t, veh_tn;  // external segmentation
};

// Assembled network input, channel-major (C x 64 x 448).
struct PriorStack {
  Mode mode = Mode::D;
  int rows = 0, cols = 0;
  std::vector<double> data;

  int channels() const { return mode_channels(mode); }
  size_t plane() const { return static_cast<size_t>(rows) * cols; }
  double* channel(int c) { return data.data() + c * plane(); }
  const double* channel(int c) const { return data.data() + c * plane(); }
};

enum class FlowSource { none, ground_truth, predicted };

// Produces the lidar-flow channels from the 4-channel data stack; wired to
// a trained 2-output network by the caller (Pred.F).
using FlowPredictor = std::function<LidarFlowMap(const PriorStack& data_stack)>;

struct AssembleOptions {
  Mode mode = Mode::D;
  FlowSource flow_source = FlowSource::none;
  FlowPredictor flow_predictor;
};

struct AssembledSample {
  PriorStack stack;
  MotionMap gt;
  bool has_motion = false;
};

// Projects both scans, builds the motion ground truth (tracks paired by id)
// and stacks the channels requested by the mode. Missing prerequisites
// (flow source, odometry poses, vehicleness) are reported as
// mode-prerequisite errors.
AssembledSample assemble_input(const ScenePair& pair, const AssembleOptions& options,
                               const SensorModel& sensor, const IntervalSpec& spec);

// Horizontal mirror: reverses columns everywhere, negating the channels
// (and the GT dX) whose sign is odd under the mirror.
std::pair<PriorStack, MotionMap> hflip(const PriorStack& stack, const MotionMap& gt);

// Balanced batches: 8 motion + 2 static per batch of 10, uniformly with
// replacement per stratum. A missing stratum falls back to the other one.
class BatchSampler {
 public:
  BatchSampler(const std::vector<std::uint8_t>& has_motion, std::uint64_t seed);

  std::vector<int> next_batch(int batch_size = 10);

 private:
  std::vector<int> motion_, static_;
  SplitMix64 rng_;
};

// ---- canonical scene directories ----
// One directory per sequence: poses.txt ("frame tx tz yaw"), objects.txt
// (key=value box records), velodyne/%06d.bin point clouds, and optional
// calib.txt, flow/%06d.lfl, vehicleness/%06d.veh.

struct SceneDir {
  std::string dir;
  std::map<int, EgoPose> poses;
  std::map<int, std::vector<TrackedBox>> boxes;
  std::optional<CameraCalib> calib;

  std::vector<int> frames() const;
};

SceneDir open_scene_dir(const std::string& dir);
ScenePair load_scene_pair(const SceneDir& scene, int frame_t, const IntervalSpec& spec,
                          const SensorModel& sensor);

// Writes one frame of a scene directory (cloud now; flow/vehicleness when
// provided). Poses/boxes/calib are rewritten for the whole sequence.
void write_scene_dir(const std::string& dir, const std::map<int, EgoPose>& poses,
                     const std::map<int, std::vector<TrackedBox>>& boxes,
                     const std::map<int, PointCloud>& clouds,
                     const std::optional<CameraCalib>& calib = std::nullopt,
                     const std::map<int, FlowImage>& flows = {},
                     const std::map<int, VehiclenessMap>& vehicleness = {});

// ---- dataset index ----

struct DatasetEntry {
  std::string dir;   // scene directory
  int frame = 0;     // frame t of the pair
  bool has_motion = false;
};

struct DatasetIndex {
  std::vector<DatasetEntry> entries;
};

void save_dataset_index(const DatasetIndex& index, const std::string& path);
DatasetIndex load_dataset_index(const std::string& path);

// Scene-pair directories found directly underneath a dataset root, sorted.
std::vector<std::string> list_pair_dirs(const std::string& root);

// ---- STK1 container: magic, u32 C/H/W, C*H*W little-endian f32 planes ----
// PriorStack uses its channel count; MotionMap is stored as 3 planes
// (dz, dx, dynamic flag).

void save_stack(const PriorStack& stack, const std::string& path);
PriorStack load_stack(const std::string& path);
void save_motion_map(const MotionMap& map, const std::string& path);
MotionMap load_motion_map(const std::string& path);
void save_range_image(const RangeImage& image, const std::string& path);
RangeImage load_range_image(const std::string& path);

}  // namespace lidarmotion
