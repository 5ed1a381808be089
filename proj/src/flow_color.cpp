#include "lidarmotion/flow_color.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "lidarmotion/error.hpp"

namespace lidarmotion {

namespace {

constexpr int kWheelSize = 55;

// Middlebury color wheel: transition lengths chosen for perceptual
// uniformity (more shades where the eye distinguishes them).
std::array<std::array<double, 3>, kWheelSize> make_wheel() {
  constexpr int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
  std::array<std::array<double, 3>, kWheelSize> w{};
  int k = 0;
  for (int i = 0; i < RY; ++i) w[k++] = {1.0, double(i) / RY, 0.0};
  for (int i = 0; i < YG; ++i) w[k++] = {1.0 - double(i) / YG, 1.0, 0.0};
  for (int i = 0; i < GC; ++i) w[k++] = {0.0, 1.0, double(i) / GC};
  for (int i = 0; i < CB; ++i) w[k++] = {0.0, 1.0 - double(i) / CB, 1.0};
  for (int i = 0; i < BM; ++i) w[k++] = {double(i) / BM, 0.0, 1.0};
  for (int i = 0; i < MR; ++i) w[k++] = {1.0, 0.0, 1.0 - double(i) / MR};
  return w;
}

const std::array<std::array<double, 3>, kWheelSize>& wheel() {
  static const auto w = make_wheel();
  return w;
}

// Hue position in [0, kWheelSize) for a motion angle; periodic so that the
// interpolation between the last and first wheel entries closes the circle.
double wheel_position(double angle) {
  double a = angle / kPi;                       // (-1, 1]
  double fk = (a + 1.0) * 0.5 * kWheelSize;     // (0, kWheelSize]
  if (fk >= kWheelSize) fk -= kWheelSize;
  return fk;
}

void encode_pixel(double dz, double dx, double max_magnitude, std::uint8_t* out) {
  const double mag = std::hypot(dz, dx);
  double rad = mag / max_magnitude;
  if (rad > 1.0) rad = 1.0;
  double color[3] = {1.0, 1.0, 1.0};
  if (mag > 0.0) {
    const double fk = wheel_position(std::atan2(dx, dz));
    const int k0 = static_cast<int>(fk);
    const int k1 = (k0 + 1) % kWheelSize;
    const double f = fk - k0;
    for (int c = 0; c < 3; ++c) {
      const double col = (1.0 - f) * wheel()[k0][c] + f * wheel()[k1][c];
      color[c] = 1.0 - rad * (1.0 - col);  // white center, saturated rim
    }
  }
  for (int c = 0; c < 3; ++c) {
    out[c] = static_cast<std::uint8_t>(std::lround(color[c] * 255.0));
  }
}

void decode_pixel(const std::uint8_t* px, double max_magnitude, double* dz,
                  double* dx) {
  double col[3];
  double min_col = 1.0;
  for (int c = 0; c < 3; ++c) {
    col[c] = px[c] / 255.0;
    min_col = std::min(min_col, col[c]);
  }
  const double rad = 1.0 - min_col;
  *dz = 0.0;
  *dx = 0.0;
  if (rad <= 1.0 / 255.0) return;  // hue carries no reliable information
  // Wheel color scaled out of the white blend.
  double w[3];
  for (int c = 0; c < 3; ++c) w[c] = 1.0 - (1.0 - col[c]) / rad;
  // Fit the (segment, fraction) pair by least squares over the 3 channels.
  double best_res = std::numeric_limits<double>::infinity();
  double best_fk = 0.0;
  for (int k = 0; k < kWheelSize; ++k) {
    const auto& a = wheel()[k];
    const auto& b = wheel()[(k + 1) % kWheelSize];
    double num = 0.0, den = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double d = b[c] - a[c];
      num += d * (w[c] - a[c]);
      den += d * d;
    }
    double f = den > 0.0 ? num / den : 0.0;
    f = std::min(1.0, std::max(0.0, f));
    double res = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double e = a[c] + f * (b[c] - a[c]) - w[c];
      res += e * e;
    }
    if (res < best_res) {
      best_res = res;
      best_fk = k + f;
    }
  }
  if (best_fk >= kWheelSize) best_fk -= kWheelSize;
  const double angle = (best_fk * 2.0 / kWheelSize - 1.0) * kPi;
  const double mag = rad * max_magnitude;
  *dz = mag * std::cos(angle);
  *dx = mag * std::sin(angle);
}

}  // namespace

RgbImage flow_color_encode(const MotionMap& map, double max_magnitude) {
  if (!(max_magnitude > 0.0)) {
    fail(ErrorCategory::range, "flow_color_encode: max_magnitude must be positive");
  }
  RgbImage img(map.rows, map.cols);
  for (int r = 0; r < map.rows; ++r) {
    for (int c = 0; c < map.cols; ++c) {
      const size_t i = map.idx(r, c);
      encode_pixel(map.dz[i], map.dx[i], max_magnitude, &img.rgb[img.idx(r, c)]);
    }
  }
  return img;
}

MotionMap flow_color_decode(const RgbImage& image, double max_magnitude) {
  if (!(max_magnitude > 0.0)) {
    fail(ErrorCategory::range, "flow_color_decode: max_magnitude must be positive");
  }
  MotionMap map(image.rows, image.cols);
  for (int r = 0; r < image.rows; ++r) {
    for (int c = 0; c < image.cols; ++c) {
      const size_t i = map.idx(r, c);
      decode_pixel(&image.rgb[image.idx(r, c)], max_magnitude, &map.dz[i],
                   &map.dx[i]);
      map.dynamic[i] = (map.dz[i] != 0.0 || map.dx[i] != 0.0) ? 1 : 0;
    }
  }
  return map;
}

void write_ppm(const RgbImage& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCategory::io, "cannot open for writing: " + path);
  out << "P6\n" << image.cols << " " << image.rows << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()),
            static_cast<std::streamsize>(image.rgb.size()));
  if (!out) fail(ErrorCategory::io, "write failed: " + path);
}

RgbImage read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCategory::io, "cannot open: " + path);
  std::string magic;
  int cols = 0, rows = 0, maxval = 0;
  in >> magic >> cols >> rows >> maxval;
  if (magic != "P6" || maxval != 255 || cols <= 0 || rows <= 0) {
    fail(ErrorCategory::format, "not a maxval-255 P6 PPM: " + path);
  }
  in.get();  // single whitespace after the header
  RgbImage img(rows, cols);
  in.read(reinterpret_cast<char*>(img.rgb.data()),
          static_cast<std::streamsize>(img.rgb.size()));
  if (!in) fail(ErrorCategory::format, "truncated PPM payload: " + path);
  return img;
}

}  // namespace lidarmotion
