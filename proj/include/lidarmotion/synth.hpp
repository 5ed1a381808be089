#pragma once

#include <cstdint>
#include <vector>

#include "lidarmotion/datapipe.hpp"

namespace lidarmotion {

// A box moving over the ground plane, specified in the world frame.
struct SynthBox {
  int track_id = 0;
  Vec2 center = {0.0, 0.0};  // ground position of the box center at frame t
  double yaw = 0.0;
  Vec2 velocity = {0.0, 0.0};  // world displacement per interval
  double dyaw = 0.0;
  double length = 4.2, width = 1.8, height = 1.6;
};

struct SynthSpec {
  SensorModel sensor = SensorModel::hdl64();
  EgoPose ego_t, ego_tn;        // world poses at the two scan times
  double sensor_height = 1.73;  // sensor origin above the ground plane
  double ground_reflectivity = 0.2;
  double box_reflectivity = 0.6;
  double max_range = 120.0;
  std::vector<SynthBox> boxes;
};

struct SynthScene {
  ScenePair pair;
  // Eq.-style exact ground truth, aligned with pair.boxes_t.
  std::vector<Vec2> analytic_motions;
};

// Casts every sensor ray against the ground plane and the oriented boxes at
// both timestamps. Deterministic; throws when a box contains the sensor
// origin.
SynthScene render_scene(const SynthSpec& spec);

// Scene mirrored across the X=0 plane (negated transversal coordinates,
// yaws and transversal velocities).
SynthSpec mirror_spec(const SynthSpec& spec);

// Depth-from-raycast camera flow: for each pixel, the hit point at t is
// advected by its carrier (box or static world) and reprojected at t+n.
// Pixels whose ray escapes the scene are invalid.
FlowImage synth_camera_flow(const SynthSpec& spec, const CameraCalib& calib,
                            int rows, int cols);

// Axis-aligned virtual camera centered on the sensor.
CameraCalib default_synth_calib(int rows, int cols);

struct SynthParams {
  int min_boxes = 1;
  int max_boxes = 3;
  double min_speed = 0.4;   // meters per interval for moving boxes
  double max_speed = 1.5;
  double min_dist = 6.0;    // forward placement band
  double max_dist = 26.0;
  double max_abs_x = 10.0;
  double ego_speed_max = 1.4;
  double ego_yaw_max = 0.03;  // radians per interval
  int camera_rows = 128;
  int camera_cols = 416;
};

// Randomized scene around the defaults; force_static makes every box (and
// optionally the ego) sub-threshold so the pair lands in the static stratum.
SynthSpec random_spec(std::uint64_t seed, const SynthParams& params, bool force_static);

// Renders a full scene-pair directory (clouds, poses, boxes, calib, camera
// flow) under dir.
void write_synth_pair_dir(const std::string& dir, const SynthSpec& spec,
                          const SynthParams& params);

}  // namespace lidarmotion
