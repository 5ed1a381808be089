#include "lidarmotion/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lidarmotion/error.hpp"

namespace lidarmotion {

namespace {

// Slab intersection of a ray with an upright oriented box; returns the
// nearest positive hit distance or +inf.
double ray_box(const Vec3& origin, const Vec3& dir, const TrackedBox& box) {
  // Into the box frame: translate then rotate by -yaw about Y.
  const Vec2 o2 = rotate({origin.z - box.centroid.z, origin.x - box.centroid.x}, -box.yaw);
  const Vec2 d2 = rotate({dir.z, dir.x}, -box.yaw);
  const double o[3] = {o2.z, origin.y - box.center_height, o2.x};
  const double d[3] = {d2.z, dir.y, d2.x};
  const double half[3] = {0.5 * box.length, 0.5 * box.height, 0.5 * box.width};

  double tmin = 0.0;
  double tmax = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (std::abs(o[a]) > half[a]) return std::numeric_limits<double>::infinity();
      continue;
    }
    double t0 = (-half[a] - o[a]) / d[a];
    double t1 = (half[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return std::numeric_limits<double>::infinity();
  }
  return tmin > 0.0 ? tmin : std::numeric_limits<double>::infinity();
}

struct FrameScene {
  std::vector<TrackedBox> boxes;  // ego frame
  double sensor_height;
  double max_range;
};

struct Hit {
  double range = std::numeric_limits<double>::infinity();
  int box = -1;  // -1 ground
};

Hit cast_ray(const Vec3& origin, const Vec3& dir, const FrameScene& scene) {
  Hit hit;
  if (dir.y < 0.0) {
    const double t = (-scene.sensor_height - origin.y) / dir.y;
    if (t > 0.0 && t <= scene.max_range) {
      hit.range = t;
      hit.box = -1;
    }
  }
  for (size_t b = 0; b < scene.boxes.size(); ++b) {
    const double t = ray_box(origin, dir, scene.boxes[b]);
    if (t < hit.range && t <= scene.max_range) {
      hit.range = t;
      hit.box = static_cast<int>(b);
    }
  }
  return hit;
}

TrackedBox box_in_ego_frame(const SynthBox& box, const EgoPose& ego, Vec2 center_w,
                            double yaw_w, double sensor_height) {
  const SE2 ego_from_world = ego.inverse();
  TrackedBox out;
  out.track_id = box.track_id;
  out.centroid = ego_from_world.apply(center_w);
  out.yaw = wrap_angle(yaw_w - ego.yaw);
  out.length = box.length;
  out.width = box.width;
  out.height = box.height;
  out.center_height = 0.5 * box.height - sensor_height;  // resting on the ground
  return out;
}

PointCloud render_frame(const SynthSpec& spec, const FrameScene& scene) {
  PointCloud cloud;
  cloud.reserve(static_cast<size_t>(spec.sensor.cell_count()));
  const Vec3 origin{0.0, 0.0, 0.0};
  for (int r = 0; r < spec.sensor.n_rows; ++r) {
    for (int c = 0; c < spec.sensor.n_cols; ++c) {
      const Vec3 dir = spec.sensor.cell_direction(r, c);
      const Hit hit = cast_ray(origin, dir, scene);
      if (!std::isfinite(hit.range)) continue;
      LidarPoint p;
      const Vec3 pos = dir * hit.range;
      p.x = pos.x;
      p.y = pos.y;
      p.z = pos.z;
      p.reflectivity = hit.box < 0 ? spec.ground_reflectivity : spec.box_reflectivity;
      cloud.push_back(p);
    }
  }
  return cloud;
}

FrameScene scene_at(const SynthSpec& spec, bool second_frame) {
  const EgoPose& ego = second_frame ? spec.ego_tn : spec.ego_t;
  FrameScene scene;
  scene.sensor_height = spec.sensor_height;
  scene.max_range = spec.max_range;
  for (const SynthBox& box : spec.boxes) {
    const Vec2 center_w = second_frame ? box.center + box.velocity : box.center;
    const double yaw_w = second_frame ? box.yaw + box.dyaw : box.yaw;
    const TrackedBox ego_box =
        box_in_ego_frame(box, ego, center_w, yaw_w, spec.sensor_height);
    if (box_contains(ego_box, {0.0, 0.0, 0.0}, 0.0)) {
      fail(ErrorCategory::config, "synthetic box " + std::to_string(box.track_id) +
                                      " contains the sensor origin");
    }
    scene.boxes.push_back(ego_box);
  }
  return scene;
}

}  // namespace

SynthScene render_scene(const SynthSpec& spec) {
  spec.sensor.validate();
  SynthScene out;
  const FrameScene scene_t = scene_at(spec, false);
  const FrameScene scene_tn = scene_at(spec, true);

  out.pair.scan_t = render_frame(spec, scene_t);
  out.pair.scan_tn = render_frame(spec, scene_tn);
  out.pair.pose_t = spec.ego_t;
  out.pair.pose_tn = spec.ego_tn;
  out.pair.boxes_t = scene_t.boxes;
  out.pair.boxes_tn = scene_tn.boxes;

  const RelativeTransform transform = relative_transform(spec.ego_t, spec.ego_tn);
  out.analytic_motions.reserve(spec.boxes.size());
  for (size_t b = 0; b < spec.boxes.size(); ++b) {
    out.analytic_motions.push_back(motion_vector(
        scene_t.boxes[b].centroid, scene_tn.boxes[b].centroid, transform));
  }
  return out;
}

SynthSpec mirror_spec(const SynthSpec& spec) {
  SynthSpec m = spec;
  m.ego_t = EgoPose(spec.ego_t.tz, -spec.ego_t.tx, -spec.ego_t.yaw);
  m.ego_tn = EgoPose(spec.ego_tn.tz, -spec.ego_tn.tx, -spec.ego_tn.yaw);
  for (SynthBox& box : m.boxes) {
    box.center.x = -box.center.x;
    box.yaw = -box.yaw;
    box.velocity.x = -box.velocity.x;
    box.dyaw = -box.dyaw;
  }
  return m;
}

CameraCalib default_synth_calib(int rows, int cols) {
  CameraCalib calib;
  calib.fx = 0.6 * cols;
  calib.fy = 0.6 * cols;
  calib.cx = 0.5 * (cols - 1);
  calib.cy = 0.5 * (rows - 1) - 0.15 * rows;  // look a little below the horizon
  // Internal axes to camera axes: x right, y down, z forward.
  calib.rotation = {1, 0, 0, 0, -1, 0, 0, 0, 1};
  calib.translation = {0, 0, 0};
  return calib;
}

FlowImage synth_camera_flow(const SynthSpec& spec, const CameraCalib& calib,
                            int rows, int cols) {
  calib.validate();
  const FrameScene scene_t = scene_at(spec, false);

  // Camera rays live in the camera frame; pull them back into the ego frame.
  const auto& r = calib.rotation;
  auto cam_to_ego = [&](const Vec3& v) -> Vec3 {
    return {r[0] * v.x + r[3] * v.y + r[6] * v.z,
            r[1] * v.x + r[4] * v.y + r[7] * v.z,
            r[2] * v.x + r[5] * v.y + r[8] * v.z};
  };
  const Vec3 t{calib.translation[0], calib.translation[1], calib.translation[2]};
  const Vec3 cam_center = cam_to_ego({-t.x, -t.y, -t.z});

  const SE2 world_from_t = spec.ego_t;
  const SE2 tn_from_world = spec.ego_tn.inverse();

  FlowImage flow(rows, cols);
  for (int py = 0; py < rows; ++py) {
    for (int px = 0; px < cols; ++px) {
      const Vec3 dir_cam{(px - calib.cx) / calib.fx, (py - calib.cy) / calib.fy, 1.0};
      Vec3 dir = cam_to_ego(dir_cam);
      dir = dir * (1.0 / dir.norm());
      const Hit hit = cast_ray(cam_center, dir, scene_t);
      if (!std::isfinite(hit.range)) continue;
      const Vec3 p_t = cam_center + dir * hit.range;  // ego frame at t

      // Advect the hit point: boxes carry their points, the ground stays
      // world-fixed. Heights ride along unchanged (planar motion).
      const Vec2 ground_t{p_t.z, p_t.x};
      Vec2 moved;
      if (hit.box < 0) {
        moved = tn_from_world.apply(world_from_t.apply(ground_t));
      } else {
        const SynthBox& box = spec.boxes[static_cast<size_t>(hit.box)];
        const Vec2 world = world_from_t.apply(ground_t);
        const Vec2 local = SE2(box.center.z, box.center.x, box.yaw).inverse().apply(world);
        const Vec2 world_tn = SE2(box.center.z + box.velocity.z,
                                  box.center.x + box.velocity.x,
                                  box.yaw + box.dyaw)
                                  .apply(local);
        moved = tn_from_world.apply(world_tn);
      }
      const Vec3 p_tn{moved.x, p_t.y, moved.z};

      const Vec3 pc_t = calib.to_camera(p_t);
      const Vec3 pc_tn = calib.to_camera(p_tn);
      if (pc_t.z <= kCameraNearPlane || pc_tn.z <= kCameraNearPlane) continue;
      const double u_t = calib.fx * pc_t.x / pc_t.z + calib.cx;
      const double v_t = calib.fy * pc_t.y / pc_t.z + calib.cy;
      const double u_tn = calib.fx * pc_tn.x / pc_tn.z + calib.cx;
      const double v_tn = calib.fy * pc_tn.y / pc_tn.z + calib.cy;
      const size_t i = flow.idx(py, px);
      flow.u[i] = u_tn - u_t;
      flow.v[i] = v_tn - v_t;
      flow.valid[i] = 1;
    }
  }
  return flow;
}

SynthSpec random_spec(std::uint64_t seed, const SynthParams& params, bool force_static) {
  SplitMix64 rng(seed);
  SynthSpec spec;
  spec.ego_t = EgoPose(0.0, 0.0, 0.0);
  if (force_static) {
    spec.ego_tn = EgoPose(0.0, 0.0, 0.0);
  } else {
    spec.ego_tn = EgoPose(rng.uniform(0.0, params.ego_speed_max),
                          rng.uniform(-0.05, 0.05),
                          rng.uniform(-params.ego_yaw_max, params.ego_yaw_max));
  }
  const int n_boxes =
      params.min_boxes + static_cast<int>(rng.below(
                             static_cast<std::uint64_t>(params.max_boxes - params.min_boxes + 1)));
  for (int b = 0; b < n_boxes; ++b) {
    SynthBox box;
    box.track_id = b + 1;
    box.center = {rng.uniform(params.min_dist, params.max_dist),
                  rng.uniform(-params.max_abs_x, params.max_abs_x)};
    box.yaw = rng.uniform(-kPi, kPi);
    box.length = rng.uniform(3.6, 4.8);
    box.width = rng.uniform(1.6, 2.0);
    box.height = rng.uniform(1.4, 1.8);
    const bool moving = !force_static && (b == 0 || rng.uniform01() < 0.7);
    if (moving) {
      const double speed = rng.uniform(params.min_speed, params.max_speed);
      const double heading = rng.uniform(-kPi, kPi);
      box.velocity = {speed * std::cos(heading), speed * std::sin(heading)};
      box.dyaw = rng.uniform(-0.02, 0.02);
    }
    spec.boxes.push_back(box);
  }
  return spec;
}

void write_synth_pair_dir(const std::string& dir, const SynthSpec& spec,
                          const SynthParams& params) {
  const SynthScene scene = render_scene(spec);
  const CameraCalib calib = default_synth_calib(params.camera_rows, params.camera_cols);
  const FlowImage flow =
      synth_camera_flow(spec, calib, params.camera_rows, params.camera_cols);
  write_scene_dir(dir, {{0, spec.ego_t}, {1, spec.ego_tn}},
                  {{0, scene.pair.boxes_t}, {1, scene.pair.boxes_tn}},
                  {{0, scene.pair.scan_t}, {1, scene.pair.scan_tn}}, calib,
                  {{0, flow}}, {});
}

}  // namespace lidarmotion
