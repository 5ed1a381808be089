#include "lidarmotion/kitti.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lidarmotion/error.hpp"

namespace lidarmotion {

namespace {

double parse_double(const std::string& tok, const std::string& where) {
  try {
    size_t pos = 0;
    const double v = std::stod(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCategory::format, where + ": bad number '" + tok + "'");
  }
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

bool is_vehicle_class(const std::string& type) {
  return type == "Car" || type == "Van" || type == "Truck";
}

// 3x3 row-major helpers for the calib math.
struct Mat3 {
  std::array<double, 9> m{};

  Vec3 mul(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Mat3 mul(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += m[i * 3 + k] * o.m[k * 3 + j];
        r.m[i * 3 + j] = s;
      }
    }
    return r;
  }
  Mat3 transpose() const {
    return Mat3{{m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]}};
  }
};

// Internal (X right, Y up, Z fwd) -> velodyne (x fwd, y left, z up).
const Mat3 kInternalToVelodyne{{0, 0, 1, -1, 0, 0, 0, 1, 0}};

}  // namespace

LidarPoint from_velodyne_axes(float x, float y, float z, float reflectance) {
  LidarPoint p;
  p.x = -double(y);
  p.y = double(z);
  p.z = double(x);
  p.reflectivity = std::clamp(double(reflectance), 0.0, 1.0);
  return p;
}

PointCloud read_velodyne_bin(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) fail(ErrorCategory::io, "cannot open: " + path);
  const std::streamoff size = in.tellg();
  if (size % 16 != 0) {
    fail(ErrorCategory::format, "velodyne bin " + path + ": truncated at offset " +
                                    std::to_string(size - size % 16) + " (" +
                                    std::to_string(size % 16) + " trailing bytes)");
  }
  in.seekg(0);
  PointCloud cloud;
  cloud.reserve(static_cast<size_t>(size / 16));
  float quad[4];
  while (in.read(reinterpret_cast<char*>(quad), 16)) {
    if (std::isnan(quad[0]) || std::isnan(quad[1]) || std::isnan(quad[2])) {
      fail(ErrorCategory::format,
           "velodyne bin " + path + ": NaN coordinate at point " +
               std::to_string(cloud.size()));
    }
    cloud.push_back(from_velodyne_axes(quad[0], quad[1], quad[2], quad[3]));
  }
  return cloud;
}

void write_velodyne_bin(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCategory::io, "cannot open for writing: " + path);
  for (const LidarPoint& p : cloud) {
    const float quad[4] = {static_cast<float>(p.z), static_cast<float>(-p.x),
                           static_cast<float>(p.y), static_cast<float>(p.reflectivity)};
    out.write(reinterpret_cast<const char*>(quad), 16);
  }
  if (!out) fail(ErrorCategory::io, "write failed: " + path);
}

std::map<int, std::vector<TrackedBox>> read_kitti_tracking_labels(
    const std::string& path, const CameraCalib& calib) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::io, "cannot open: " + path);
  calib.validate();

  // Inverse of the lidar->camera rigid transform.
  Mat3 r;
  std::copy(calib.rotation.begin(), calib.rotation.end(), r.m.begin());
  const Mat3 rt = r.transpose();
  const Vec3 t{calib.translation[0], calib.translation[1], calib.translation[2]};

  std::map<int, std::vector<TrackedBox>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tok = split_ws(line);
    if (tok.size() != 17) {
      fail(ErrorCategory::format, path + ":" + std::to_string(line_no) + ": expected 17 columns, found " +
                                      std::to_string(tok.size()));
    }
    const std::string& type = tok[2];
    if (!is_vehicle_class(type)) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    const int frame = static_cast<int>(parse_double(tok[0], where));
    const int track = static_cast<int>(parse_double(tok[1], where));
    const double h = parse_double(tok[10], where);
    const double w = parse_double(tok[11], where);
    const double l = parse_double(tok[12], where);
    const Vec3 loc_cam{parse_double(tok[13], where), parse_double(tok[14], where),
                       parse_double(tok[15], where)};
    const double ry = parse_double(tok[16], where);

    // Bottom-center of the box into the internal frame.
    const Vec3 bottom = rt.mul(loc_cam - t);
    // Heading: camera-frame direction (cos ry, 0, -sin ry) pulled back.
    const Vec3 dir = rt.mul(Vec3{std::cos(ry), 0.0, -std::sin(ry)});

    TrackedBox box;
    box.track_id = track;
    box.centroid = {bottom.z, bottom.x};
    box.center_height = bottom.y + 0.5 * h;
    box.yaw = std::atan2(dir.x, dir.z);
    box.length = l;
    box.width = w;
    box.height = h;
    out[frame].push_back(box);
  }
  return out;
}

std::map<int, EgoPose> read_pose_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::io, "cannot open: " + path);
  std::map<int, EgoPose> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto tok = split_ws(line);
    if (tok.size() != 4) {
      fail(ErrorCategory::format, path + ":" + std::to_string(line_no) +
                                      ": expected 'frame tx tz yaw', found " +
                                      std::to_string(tok.size()) + " fields");
    }
    const std::string where = path + ":" + std::to_string(line_no);
    const int frame = static_cast<int>(parse_double(tok[0], where));
    const double tx = parse_double(tok[1], where);
    const double tz = parse_double(tok[2], where);
    const double yaw = parse_double(tok[3], where);
    out[frame] = EgoPose(tz, tx, yaw);
  }
  return out;
}

void write_pose_file(const std::map<int, EgoPose>& poses, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCategory::io, "cannot open for writing: " + path);
  char buf[128];
  for (const auto& [frame, pose] : poses) {
    std::snprintf(buf, sizeof(buf), "%d %.17g %.17g %.17g\n", frame, pose.tx,
                  pose.tz, pose.yaw);
    out << buf;
  }
  if (!out) fail(ErrorCategory::io, "write failed: " + path);
}

CameraCalib read_kitti_calib(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::io, "cannot open: " + path);
  std::map<std::string, std::vector<double>> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (!key.empty() && key.back() == ':') key.pop_back();
    std::vector<double> vals;
    std::string tok;
    while (ss >> tok) {
      vals.push_back(parse_double(tok, path + ":" + std::to_string(line_no)));
    }
    entries[key] = vals;
  }
  auto need = [&](const std::string& a, const std::string& b, size_t n) -> const std::vector<double>& {
    auto it = entries.find(a);
    if (it == entries.end()) it = entries.find(b);
    if (it == entries.end() || it->second.size() != n) {
      fail(ErrorCategory::format, path + ": missing " + a + " (" + std::to_string(n) + " values)");
    }
    return it->second;
  };
  const auto& p2 = need("P2", "P2", 12);
  const auto& rect = need("R_rect", "R0_rect", 9);
  const auto& tr = need("Tr_velo_cam", "Tr_velo_to_cam", 12);

  Mat3 r0;
  std::copy(rect.begin(), rect.end(), r0.m.begin());
  Mat3 rtr{{tr[0], tr[1], tr[2], tr[4], tr[5], tr[6], tr[8], tr[9], tr[10]}};
  const Vec3 ttr{tr[3], tr[7], tr[11]};

  CameraCalib calib;
  calib.fx = p2[0];
  calib.fy = p2[5];
  calib.cx = p2[2];
  calib.cy = p2[6];
  // P2 = K [I | K^-1 p2_t]; fold its translation into the extrinsic.
  const Vec3 extra{(p2[3] - calib.cx * p2[11]) / calib.fx,
                   (p2[7] - calib.cy * p2[11]) / calib.fy, p2[11]};
  const Mat3 rot = r0.mul(rtr).mul(kInternalToVelodyne);
  Vec3 trans = r0.mul(ttr) + extra;
  std::copy(rot.m.begin(), rot.m.end(), calib.rotation.begin());
  calib.translation = {trans.x, trans.y, trans.z};
  calib.validate();
  return calib;
}

void write_calib_file(const CameraCalib& calib, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCategory::io, "cannot open for writing: " + path);
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  out << "fx=" << num(calib.fx) << "\nfy=" << num(calib.fy) << "\ncx=" << num(calib.cx)
      << "\ncy=" << num(calib.cy) << "\nR=";
  for (int i = 0; i < 9; ++i) out << (i ? " " : "") << num(calib.rotation[i]);
  out << "\nt=";
  for (int i = 0; i < 3; ++i) out << (i ? " " : "") << num(calib.translation[i]);
  out << "\n";
  if (!out) fail(ErrorCategory::io, "write failed: " + path);
}

CameraCalib read_calib_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::io, "cannot open: " + path);
  CameraCalib calib;
  bool saw_fx = false, saw_fy = false, saw_cx = false, saw_cy = false, saw_r = false,
       saw_t = false;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    const std::string where = path + ":" + std::to_string(line_no);
    if (eq == std::string::npos) fail(ErrorCategory::format, where + ": expected key=value");
    const std::string key = line.substr(0, eq);
    const auto vals = split_ws(line.substr(eq + 1));
    auto one = [&]() {
      if (vals.size() != 1) fail(ErrorCategory::format, where + ": expected one value");
      return parse_double(vals[0], where);
    };
    if (key == "fx") { calib.fx = one(); saw_fx = true; }
    else if (key == "fy") { calib.fy = one(); saw_fy = true; }
    else if (key == "cx") { calib.cx = one(); saw_cx = true; }
    else if (key == "cy") { calib.cy = one(); saw_cy = true; }
    else if (key == "R") {
      if (vals.size() != 9) fail(ErrorCategory::format, where + ": R needs 9 values");
      for (int i = 0; i < 9; ++i) calib.rotation[i] = parse_double(vals[i], where);
      saw_r = true;
    } else if (key == "t") {
      if (vals.size() != 3) fail(ErrorCategory::format, where + ": t needs 3 values");
      for (int i = 0; i < 3; ++i) calib.translation[i] = parse_double(vals[i], where);
      saw_t = true;
    } else {
      fail(ErrorCategory::format, where + ": unknown key '" + key + "'");
    }
  }
  if (!(saw_fx && saw_fy && saw_cx && saw_cy && saw_r && saw_t)) {
    fail(ErrorCategory::format, path + ": incomplete calibration");
  }
  calib.validate();
  return calib;
}

}  // namespace lidarmotion
