#include "lidarmotion/priors.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "lidarmotion/error.hpp"

namespace lidarmotion {

namespace {

constexpr double kQuietNaNf = std::numeric_limits<float>::quiet_NaN();

void write_magic(std::ofstream& out, const char* magic) {
  out.write(magic, 4);
  out.put('\n');
}

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

void write_f32(std::ofstream& out, float v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

struct GridReader {
  std::ifstream in;
  std::string path;
  int rows = 0, cols = 0;

  GridReader(const std::string& p, const char* magic) : in(p, std::ios::binary), path(p) {
    if (!in) fail(ErrorCategory::io, "cannot open: " + p);
    char head[5];
    in.read(head, 5);
    if (!in || std::memcmp(head, magic, 4) != 0 || head[4] != '\n') {
      fail(ErrorCategory::format, std::string("missing ") + magic + " header: " + p);
    }
    std::uint32_t h = 0, w = 0;
    in.read(reinterpret_cast<char*>(&h), 4);
    in.read(reinterpret_cast<char*>(&w), 4);
    if (!in) fail(ErrorCategory::format, "truncated header: " + p);
    rows = static_cast<int>(h);
    cols = static_cast<int>(w);
  }

  float next_f32() {
    float v;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) fail(ErrorCategory::format, "truncated payload: " + path);
    return v;
  }
};

}  // namespace

void CameraCalib::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    fail(ErrorCategory::config, "camera calib: fx and fy must be positive");
  }
  const auto& r = rotation;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += r[i * 3 + k] * r[j * 3 + k];
      const double want = i == j ? 1.0 : 0.0;
      if (std::abs(dot - want) > 1e-9) {
        fail(ErrorCategory::config, "camera calib: rotation is not orthonormal");
      }
    }
  }
}

Vec3 CameraCalib::to_camera(const Vec3& p) const {
  const auto& r = rotation;
  return {r[0] * p.x + r[1] * p.y + r[2] * p.z + translation[0],
          r[3] * p.x + r[4] * p.y + r[5] * p.z + translation[1],
          r[6] * p.x + r[7] * p.y + r[8] * p.z + translation[2]};
}

LidarFlowMap lidar_flow_gt(const RangeImage& image_t, const SensorModel& sensor,
                           const CameraCalib& calib, const FlowImage& flow) {
  calib.validate();
  LidarFlowMap map(image_t.rows, image_t.cols);
  for (int r = 0; r < image_t.rows; ++r) {
    for (int c = 0; c < image_t.cols; ++c) {
      const size_t i = map.idx(r, c);
      if (!image_t.valid[i]) continue;
      const Vec3 p = sensor.cell_direction(r, c) * image_t.range[i];
      const Vec3 pc = calib.to_camera(p);
      if (pc.z <= kCameraNearPlane) continue;
      const double u = calib.fx * pc.x / pc.z + calib.cx;
      const double v = calib.fy * pc.y / pc.z + calib.cy;
      if (u < 0.0 || u > flow.cols - 1.0 || v < 0.0 || v > flow.rows - 1.0) continue;
      int x0 = static_cast<int>(std::floor(u));
      int y0 = static_cast<int>(std::floor(v));
      x0 = std::min(x0, flow.cols - 2 >= 0 ? flow.cols - 2 : 0);
      y0 = std::min(y0, flow.rows - 2 >= 0 ? flow.rows - 2 : 0);
      const double fx_ = u - x0;
      const double fy_ = v - y0;
      const int x1 = std::min(x0 + 1, flow.cols - 1);
      const int y1 = std::min(y0 + 1, flow.rows - 1);
      const size_t i00 = flow.idx(y0, x0), i01 = flow.idx(y0, x1);
      const size_t i10 = flow.idx(y1, x0), i11 = flow.idx(y1, x1);
      if (!(flow.valid[i00] && flow.valid[i01] && flow.valid[i10] && flow.valid[i11])) {
        continue;
      }
      const double w00 = (1 - fx_) * (1 - fy_), w01 = fx_ * (1 - fy_);
      const double w10 = (1 - fx_) * fy_, w11 = fx_ * fy_;
      map.u[i] = w00 * flow.u[i00] + w01 * flow.u[i01] + w10 * flow.u[i10] +
                 w11 * flow.u[i11];
      map.v[i] = w00 * flow.v[i00] + w01 * flow.v[i01] + w10 * flow.v[i10] +
                 w11 * flow.v[i11];
      map.valid[i] = 1;
    }
  }
  return map;
}

VehiclenessMap oracle_vehicle_mask(const RangeImage& image, const SensorModel& sensor,
                                   const std::vector<TrackedBox>& boxes) {
  VehiclenessMap map(image.rows, image.cols);
  for (int r = 0; r < image.rows; ++r) {
    for (int c = 0; c < image.cols; ++c) {
      const size_t i = map.idx(r, c);
      if (!image.valid[i]) continue;
      const Vec3 p = sensor.cell_direction(r, c) * image.range[i];
      for (const TrackedBox& box : boxes) {
        if (box_contains(box, p, kBoxInflation)) {
          map.p[i] = 1.0;
          break;
        }
      }
    }
  }
  return map;
}

OdometryPlanes odometry_planes(const RelativeTransform& transform, int rows, int cols) {
  return {rows, cols, transform.tz, transform.tx, transform.yaw};
}

void save_flow_image(const FlowImage& flow, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCategory::io, "cannot open for writing: " + path);
  write_magic(out, "LFL1");
  write_u32(out, static_cast<std::uint32_t>(flow.rows));
  write_u32(out, static_cast<std::uint32_t>(flow.cols));
  for (size_t i = 0; i < flow.u.size(); ++i) {
    if (flow.valid[i]) {
      write_f32(out, static_cast<float>(flow.u[i]));
      write_f32(out, static_cast<float>(flow.v[i]));
    } else {
      write_f32(out, kQuietNaNf);
      write_f32(out, kQuietNaNf);
    }
  }
  if (!out) fail(ErrorCategory::io, "write failed: " + path);
}

FlowImage load_flow_image(const std::string& path) {
  GridReader reader(path, "LFL1");
  FlowImage flow(reader.rows, reader.cols);
  for (size_t i = 0; i < flow.u.size(); ++i) {
    const float u = reader.next_f32();
    const float v = reader.next_f32();
    if (std::isnan(u) || std::isnan(v)) continue;
    flow.u[i] = u;
    flow.v[i] = v;
    flow.valid[i] = 1;
  }
  return flow;
}

void save_lidar_flow(const LidarFlowMap& map, const std::string& path) {
  FlowImage as_flow(map.rows, map.cols);
  as_flow.u = map.u;
  as_flow.v = map.v;
  as_flow.valid = map.valid;
  save_flow_image(as_flow, path);
}

LidarFlowMap load_lidar_flow(const std::string& path) {
  const FlowImage flow = load_flow_image(path);
  LidarFlowMap map(flow.rows, flow.cols);
  map.u = flow.u;
  map.v = flow.v;
  map.valid = flow.valid;
  return map;
}

void save_vehicleness(const VehiclenessMap& map, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCategory::io, "cannot open for writing: " + path);
  write_magic(out, "VEH1");
  write_u32(out, static_cast<std::uint32_t>(map.rows));
  write_u32(out, static_cast<std::uint32_t>(map.cols));
  for (double p : map.p) write_f32(out, static_cast<float>(p));
  if (!out) fail(ErrorCategory::io, "write failed: " + path);
}

VehiclenessMap load_vehicleness(const std::string& path, int expected_rows,
                                int expected_cols) {
  GridReader reader(path, "VEH1");
  if (reader.rows != expected_rows || reader.cols != expected_cols) {
    fail(ErrorCategory::shape,
         "vehicleness map " + path + ": expected " + std::to_string(expected_rows) +
             "x" + std::to_string(expected_cols) + ", found " +
             std::to_string(reader.rows) + "x" + std::to_string(reader.cols));
  }
  VehiclenessMap map(reader.rows, reader.cols);
  for (size_t i = 0; i < map.p.size(); ++i) {
    const float v = reader.next_f32();
    if (std::isnan(v) || v < 0.0f || v > 1.0f) {
      fail(ErrorCategory::range,
           "vehicleness map " + path + ": value " + std::to_string(v) +
               " at index " + std::to_string(i) + " outside [0,1]");
    }
    map.p[i] = v;
  }
  return map;
}

}  // namespace lidarmotion
