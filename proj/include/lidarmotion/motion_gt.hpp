#pragma once

#include <cstdint>
#include <vector>

#include "lidarmotion/geometry.hpp"
#include "lidarmotion/lidar_geom.hpp"

namespace lidarmotion {

// World pose of the ego vehicle on the ground plane.
using EgoPose = SE2;

// Pose of the ego at time t+n expressed in the frame at time t. Applying it
// as a transform maps frame-(t+n) coordinates back into frame t, which is
// the compensation step of the centroid-motion equation.
using RelativeTransform = SE2;

RelativeTransform relative_transform(const EgoPose& pose_t, const EgoPose& pose_tn);

// Ego-compensated ground-plane displacement of a tracked centroid observed
// at (frame t, frame t+n).
Vec2 motion_vector(Vec2 c_t, Vec2 c_tn, const RelativeTransform& transform);

struct IntervalSpec {
  int n = 1;                   // frame step
  double frame_rate_hz = 10.0;
  double v_min_kmh = 10.0;     // minimum speed considered dynamic

  // Displacement a vehicle at exactly v_min covers in the interval.
  double displacement_threshold_m() const {
    return v_min_kmh * n / (3.6 * frame_rate_hz);
  }

  void validate() const;
};

// Strictly greater than the interval displacement threshold.
bool dynamic_filter(Vec2 v, const IntervalSpec& spec);

// Oriented 3D box of a tracked vehicle in the observing ego frame. Length
// spans the heading direction, width the transversal one.
struct TrackedBox {
  int track_id = 0;
  Vec2 centroid;               // ground-plane (Z, X) of the box center
  double yaw = 0.0;            // heading about Y
  double length = 0.0;
  double width = 0.0;
  double height = 0.0;
  double center_height = 0.0;  // Y of the box center
};

// Annotation jitter allowance applied before point-in-box tests.
inline constexpr double kBoxInflation = 0.1;

bool box_contains(const TrackedBox& box, const Vec3& p, double inflation);

// Per-cell ground-plane motion target on the range-image grid.
struct MotionMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> dz;  // meters per interval
  std::vector<double> dx;
  std::vector<std::uint8_t> dynamic;

  MotionMap() = default;
  MotionMap(int r, int c)
      : rows(r), cols(c),
        dz(static_cast<size_t>(r) * c, 0.0),
        dx(static_cast<size_t>(r) * c, 0.0),
        dynamic(static_cast<size_t>(r) * c, 0) {}

  size_t idx(int r, int c) const { return static_cast<size_t>(r) * cols + c; }
};

// Paints each box's motion vector onto the cells whose unprojected points
// fall inside the (inflated) box, zeroing sub-threshold vehicles. On box
// overlap the box with the nearest centroid wins.
MotionMap rasterize_gt(const RangeImage& image, const SensorModel& sensor,
                       const std::vector<TrackedBox>& boxes_t,
                       const std::vector<Vec2>& motions,
                       const IntervalSpec& spec);

}  // namespace lidarmotion
