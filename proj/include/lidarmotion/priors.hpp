#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lidarmotion/lidar_geom.hpp"
#include "lidarmotion/motion_gt.hpp"

namespace lidarmotion {

// Pinhole camera synchronized with the scanner. The extrinsic transform
// maps internal lidar coordinates into the camera frame (x right, y down,
// z along the optical axis).
struct CameraCalib {
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  std::array<double, 3> translation{0, 0, 0};                 // meters

  void validate() const;  // fx,fy > 0; rotation orthonormal within 1e-9
  Vec3 to_camera(const Vec3& p) const;
};

// Points closer than this to the camera plane are treated as unprojectable.
inline constexpr double kCameraNearPlane = 0.1;

// Dense image-plane optical flow with a per-pixel validity mask.
struct FlowImage {
  int rows = 0;
  int cols = 0;
  std::vector<double> u, v;
  std::vector<std::uint8_t> valid;

  FlowImage() = default;
  FlowImage(int r, int c)
      : rows(r), cols(c),
        u(static_cast<size_t>(r) * c, 0.0),
        v(static_cast<size_t>(r) * c, 0.0),
        valid(static_cast<size_t>(r) * c, 0) {}

  size_t idx(int r, int c) const { return static_cast<size_t>(r) * cols + c; }
};

// Image-plane flow sampled at the camera projections of the range-image
// cells, stored on the range-image grid.
struct LidarFlowMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> u, v;
  std::vector<std::uint8_t> valid;

  LidarFlowMap() = default;
  LidarFlowMap(int r, int c)
      : rows(r), cols(c),
        u(static_cast<size_t>(r) * c, 0.0),
        v(static_cast<size_t>(r) * c, 0.0),
        valid(static_cast<size_t>(r) * c, 0) {}

  size_t idx(int r, int c) const { return static_cast<size_t>(r) * cols + c; }
};

struct VehiclenessMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> p;  // probability in [0,1]

  VehiclenessMap() = default;
  VehiclenessMap(int r, int c)
      : rows(r), cols(c), p(static_cast<size_t>(r) * c, 0.0) {}

  size_t idx(int r, int c) const { return static_cast<size_t>(r) * cols + c; }
};

// Spatially constant ego-motion channels (dZ, dX, dYaw).
struct OdometryPlanes {
  int rows = 0;
  int cols = 0;
  double dz = 0.0;
  double dx = 0.0;
  double dyaw = 0.0;
};

// Projects every valid cell into the camera and bilinearly samples the flow
// image; cells behind the near plane, outside the image, or over invalid
// flow pixels come back invalid.
LidarFlowMap lidar_flow_gt(const RangeImage& image_t, const SensorModel& sensor,
                           const CameraCalib& calib, const FlowImage& flow);

// Probability-1 stand-in for a learned vehicle segmentation: valid cells
// whose points fall inside any (inflated) box.
VehiclenessMap oracle_vehicle_mask(const RangeImage& image, const SensorModel& sensor,
                                   const std::vector<TrackedBox>& boxes);

OdometryPlanes odometry_planes(const RelativeTransform& transform, int rows, int cols);

// "LFL1" binary layout: magic line, u32 H, u32 W, H*W little-endian f32
// (u, v) pairs, NaN marking invalid pixels. "VEH1" is the one-float-per-pixel
// sibling.
void save_flow_image(const FlowImage& flow, const std::string& path);
FlowImage load_flow_image(const std::string& path);
void save_lidar_flow(const LidarFlowMap& map, const std::string& path);
LidarFlowMap load_lidar_flow(const std::string& path);
void save_vehicleness(const VehiclenessMap& map, const std::string& path);
VehiclenessMap load_vehicleness(const std::string& path, int expected_rows,
                                int expected_cols);

}  // namespace lidarmotion
