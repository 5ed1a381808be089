#pragma once

#include <map>
#include <string>
#include <vector>

#include "lidarmotion/lidar_geom.hpp"
#include "lidarmotion/motion_gt.hpp"
#include "lidarmotion/priors.hpp"

namespace lidarmotion {

// Kitti velodyne frame (x forward, y left, z up) <-> internal frame
// (X right, Y up, Z forward).
LidarPoint from_velodyne_axes(float x, float y, float z, float reflectance);

// Little-endian f32 quadruples (x, y, z, reflectance); reflectivity is
// clamped into [0,1] on ingestion.
PointCloud read_velodyne_bin(const std::string& path);
void write_velodyne_bin(const PointCloud& cloud, const std::string& path);

// Kitti tracking label text (17 columns); camera-frame boxes are converted
// into the internal lidar ego frame through the calibration transform and
// non-vehicle classes are dropped.
std::map<int, std::vector<TrackedBox>> read_kitti_tracking_labels(
    const std::string& path, const CameraCalib& calib);

// "frame tx tz yaw" per line, printed at full double precision.
std::map<int, EgoPose> read_pose_file(const std::string& path);
void write_pose_file(const std::map<int, EgoPose>& poses, const std::string& path);

// Kitti calib.txt (P2, R_rect, Tr_velo_cam): intrinsics from P2 and the
// lidar->rectified-camera extrinsic, re-expressed for the internal frame.
CameraCalib read_kitti_calib(const std::string& path);

// Canonical key=value camera calibration file.
void write_calib_file(const CameraCalib& calib, const std::string& path);
CameraCalib read_calib_file(const std::string& path);

}  // namespace lidarmotion
