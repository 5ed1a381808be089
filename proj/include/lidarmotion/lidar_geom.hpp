#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "lidarmotion/geometry.hpp"

namespace lidarmotion {

struct LidarPoint {
  double x = 0.0;  // meters right
  double y = 0.0;  // meters up
  double z = 0.0;  // meters forward
  double reflectivity = 0.0;  // [0, 1]
};

using PointCloud = std::vector<LidarPoint>;

// Spherical projection model of the scanner: one row per vertical laser,
// columns spanning the horizontal field of view.
struct SensorModel {
  int n_rows = 64;
  int n_cols = 448;
  double azimuth_min_deg = -40.5;  // column 0, scene left
  double azimuth_max_deg = 40.5;
  std::vector<double> vertical_angles_deg;  // strictly decreasing, row 0 on top

  // Nominal HDL-64E span: 64 uniformly spaced angles from +2.0 down to -24.8.
  static SensorModel hdl64();

  void validate() const;  // throws Error(config) listing all violations

  double row_angle_deg(int row) const { return vertical_angles_deg[row]; }
  double col_azimuth_deg(int col) const;  // column center
  double azimuth_width_deg() const { return azimuth_max_deg - azimuth_min_deg; }

  // Nearest-row assignment; -1 when the elevation lies outside the table
  // span extended by half a row pitch at each end.
  int row_for_elevation(double elev_deg) const;
  // Bin assignment; -1 outside [azimuth_min, azimuth_max).
  int col_for_azimuth(double az_deg) const;

  // Unit ray through the center of a cell.
  Vec3 cell_direction(int row, int col) const;

  long cell_count() const { return static_cast<long>(n_rows) * n_cols; }
};

struct RangeImage {
  int rows = 0;
  int cols = 0;
  std::vector<double> range;         // meters, 0 where invalid
  std::vector<double> reflectivity;  // [0,1], 0 where invalid
  std::vector<std::uint8_t> valid;

  RangeImage() = default;
  RangeImage(int r, int c)
      : rows(r), cols(c),
        range(static_cast<size_t>(r) * c, 0.0),
        reflectivity(static_cast<size_t>(r) * c, 0.0),
        valid(static_cast<size_t>(r) * c, 0) {}

  size_t idx(int r, int c) const { return static_cast<size_t>(r) * cols + c; }
};

// Spherical projection. Points outside the azimuth FOV or beyond the
// vertical span are dropped; on cell collision the nearest range wins.
RangeImage project(const PointCloud& cloud, const SensorModel& sensor);

// Inverse of project up to cell quantization: the cell's center ray scaled
// by the stored range. Empty optional for cells without a return.
std::optional<Vec3> unproject(const RangeImage& image, const SensorModel& sensor,
                              int row, int col);

}  // namespace lidarmotion
