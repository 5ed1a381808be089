#include "lidarmotion/lidar_geom.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lidarmotion/error.hpp"

namespace lidarmotion {

SensorModel SensorModel::hdl64() {
  SensorModel s;
  s.vertical_angles_deg.resize(64);
  const double top = 2.0;
  const double bottom = -24.8;
  for (int i = 0; i < 64; ++i) {
    s.vertical_angles_deg[i] = top + (bottom - top) * i / 63.0;
  }
  return s;
}

void SensorModel::validate() const {
  std::string problems;
  auto add = [&](const std::string& p) {
    if (!problems.empty()) problems += "; ";
    problems += p;
  };
  if (n_rows <= 0) add("n_rows must be positive");
  if (n_cols <= 0) add("n_cols must be positive");
  if (!(azimuth_min_deg < azimuth_max_deg))
    add("azimuth_min_deg must be < azimuth_max_deg");
  if (static_cast<int>(vertical_angles_deg.size()) != n_rows)
    add("vertical_angles_deg size " + std::to_string(vertical_angles_deg.size()) +
        " != n_rows " + std::to_string(n_rows));
  for (size_t i = 0; i + 1 < vertical_angles_deg.size(); ++i) {
    if (!(vertical_angles_deg[i] > vertical_angles_deg[i + 1])) {
      add("vertical_angles_deg not strictly decreasing at index " +
          std::to_string(i));
      break;
    }
  }
  if (!problems.empty()) fail(ErrorCategory::config, "sensor model: " + problems);
}

double SensorModel::col_azimuth_deg(int col) const {
  return azimuth_min_deg + (col + 0.5) * azimuth_width_deg() / n_cols;
}

int SensorModel::row_for_elevation(double elev_deg) const {
  const auto& v = vertical_angles_deg;
  const int n = n_rows;
  if (n == 1) return 0;  // degenerate single-beam model: no span to test
  const double top_pitch = v[0] - v[1];
  const double bottom_pitch = v[n - 2] - v[n - 1];
  if (elev_deg > v[0] + 0.5 * top_pitch) return -1;
  if (elev_deg < v[n - 1] - 0.5 * bottom_pitch) return -1;
  // Midpoints between consecutive angles are decreasing; the row is the
  // number of midpoints >= elevation.
  int lo = 0, hi = n - 1;  // row index range
  while (lo < hi) {
    int mid = (lo + hi) / 2;
    double boundary = 0.5 * (v[mid] + v[mid + 1]);
    if (elev_deg >= boundary) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return lo;
}

int SensorModel::col_for_azimuth(double az_deg) const {
  const double t = (az_deg - azimuth_min_deg) / azimuth_width_deg();
  const double c = std::floor(t * n_cols);
  if (c < 0.0 || c >= static_cast<double>(n_cols)) return -1;
  return static_cast<int>(c);
}

Vec3 SensorModel::cell_direction(int row, int col) const {
  const double el = deg2rad(row_angle_deg(row));
  const double az = deg2rad(col_azimuth_deg(col));
  const double ce = std::cos(el);
  return {ce * std::sin(az), std::sin(el), ce * std::cos(az)};
}

RangeImage project(const PointCloud& cloud, const SensorModel& sensor) {
  RangeImage img(sensor.n_rows, sensor.n_cols);
  for (const LidarPoint& p : cloud) {
    const double horiz = std::hypot(p.x, p.z);
    const double r = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
    if (r <= 0.0) continue;  // degenerate return at the origin
    const double az = rad2deg(std::atan2(p.x, p.z));
    const int col = sensor.col_for_azimuth(az);
    if (col < 0) continue;
    const double elev = rad2deg(std::atan2(p.y, horiz));
    const int row = sensor.row_for_elevation(elev);
    if (row < 0) continue;
    const size_t i = img.idx(row, col);
    if (!img.valid[i] || r < img.range[i]) {
      img.valid[i] = 1;
      img.range[i] = r;
      img.reflectivity[i] = p.reflectivity;
    }
  }
  return img;
}

std::optional<Vec3> unproject(const RangeImage& image, const SensorModel& sensor,
                              int row, int col) {
  if (row < 0 || row >= image.rows || col < 0 || col >= image.cols) {
    fail(ErrorCategory::shape,
         "unproject: cell (" + std::to_string(row) + ", " + std::to_string(col) +
             ") out of bounds for " + std::to_string(image.rows) + "x" +
             std::to_string(image.cols));
  }
  const size_t i = image.idx(row, col);
  if (!image.valid[i]) return std::nullopt;
  return sensor.cell_direction(row, col) * image.range[i];
}

}  // namespace lidarmotion
