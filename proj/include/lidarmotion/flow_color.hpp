#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lidarmotion/motion_gt.hpp"

namespace lidarmotion {

struct RgbImage {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  RgbImage() = default;
  RgbImage(int r, int c) : rows(r), cols(c), rgb(static_cast<size_t>(r) * c * 3, 0) {}

  size_t idx(int r, int c) const { return (static_cast<size_t>(r) * cols + c) * 3; }
};

// Optical-flow color coding on the 55-color wheel: angle selects the hue,
// magnitude / max_magnitude (clamped to 1) the saturation; the zero vector
// is white.
RgbImage flow_color_encode(const MotionMap& map, double max_magnitude);

// Inverse of flow_color_encode up to 8-bit quantization. Cells decoding to
// a nonzero vector are marked dynamic.
MotionMap flow_color_decode(const RgbImage& image, double max_magnitude);

void write_ppm(const RgbImage& image, const std::string& path);
RgbImage read_ppm(const std::string& path);

}  // namespace lidarmotion
