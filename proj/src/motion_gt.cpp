#include "lidarmotion/motion_gt.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "lidarmotion/error.hpp"

namespace lidarmotion {

RelativeTransform relative_transform(const EgoPose& pose_t, const EgoPose& pose_tn) {
  return compose(pose_t.inverse(), pose_tn);
}

Vec2 motion_vector(Vec2 c_t, Vec2 c_tn, const RelativeTransform& transform) {
  return transform.apply(c_tn) - c_t;
}

void IntervalSpec::validate() const {
  std::string problems;
  auto add = [&](const std::string& p) {
    if (!problems.empty()) problems += "; ";
    problems += p;
  };
  if (n < 1) add("n must be >= 1");
  if (!(frame_rate_hz > 0.0)) add("frame_rate_hz must be positive");
  if (v_min_kmh < 0.0) add("v_min_kmh must be >= 0");
  if (!problems.empty()) fail(ErrorCategory::config, "interval spec: " + problems);
}

bool dynamic_filter(Vec2 v, const IntervalSpec& spec) {
  return v.norm() > spec.displacement_threshold_m();
}

bool box_contains(const TrackedBox& box, const Vec3& p, double inflation) {
  const Vec2 local = rotate({p.z - box.centroid.z, p.x - box.centroid.x}, -box.yaw);
  return std::abs(local.z) <= 0.5 * box.length + inflation &&
         std::abs(local.x) <= 0.5 * box.width + inflation &&
         std::abs(p.y - box.center_height) <= 0.5 * box.height + inflation;
}

MotionMap rasterize_gt(const RangeImage& image, const SensorModel& sensor,
                       const std::vector<TrackedBox>& boxes_t,
                       const std::vector<Vec2>& motions,
                       const IntervalSpec& spec) {
  if (boxes_t.size() != motions.size()) {
    fail(ErrorCategory::shape,
         "rasterize_gt: " + std::to_string(boxes_t.size()) + " boxes vs " +
             std::to_string(motions.size()) + " motions");
  }
  MotionMap map(image.rows, image.cols);
  for (int r = 0; r < image.rows; ++r) {
    for (int c = 0; c < image.cols; ++c) {
      const size_t i = map.idx(r, c);
      if (!image.valid[i]) continue;
      const Vec3 p = sensor.cell_direction(r, c) * image.range[i];
      int best = -1;
      double best_dist = std::numeric_limits<double>::infinity();
      for (size_t b = 0; b < boxes_t.size(); ++b) {
        if (!box_contains(boxes_t[b], p, kBoxInflation)) continue;
        const Vec3 centroid{boxes_t[b].centroid.x, boxes_t[b].center_height,
                            boxes_t[b].centroid.z};
        const double d = (p - centroid).norm();
        if (d < best_dist) {
          best_dist = d;
          best = static_cast<int>(b);
        }
      }
      if (best < 0) continue;
      if (!dynamic_filter(motions[best], spec)) continue;
      map.dz[i] = motions[best].z;
      map.dx[i] = motions[best].x;
      map.dynamic[i] = 1;
    }
  }
  return map;
}

}  // namespace lidarmotion
