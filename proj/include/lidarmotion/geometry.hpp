#pragma once

#include <cmath>

namespace lidarmotion {

inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * (kPi / 180.0); }
inline double rad2deg(double r) { return r * (180.0 / kPi); }

// Normalize an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a <= 0.0) a += 2.0 * kPi;
  return a - kPi;
}

// Ground-plane vector. Z (forward) comes first, X (transversal, to the
// right) second, matching the (dZ, dX) channel order used throughout.
struct Vec2 {
  double z = 0.0;
  double x = 0.0;

  Vec2 operator+(Vec2 o) const { return {z + o.z, x + o.x}; }
  Vec2 operator-(Vec2 o) const { return {z - o.z, x - o.x}; }
  Vec2 operator*(double s) const { return {z * s, x * s}; }
  double norm() const { return std::hypot(z, x); }
};

// 3D point in the internal frame: X right, Y up, Z forward.
struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

// Rotate a ground-plane vector about the Y axis. Positive yaw turns the
// forward direction (Z) toward the right (X).
inline Vec2 rotate(Vec2 v, double yaw) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  return {c * v.z - s * v.x, s * v.z + c * v.x};
}

// Planar rigid motion (ground-plane pose). As a transform it maps local
// coordinates into the parent frame: p_parent = R(yaw) * p_local + t.
struct SE2 {
  double tz = 0.0;
  double tx = 0.0;
  double yaw = 0.0;

  SE2() = default;
  SE2(double tz_, double tx_, double yaw_)
      : tz(tz_), tx(tx_), yaw(wrap_angle(yaw_)) {}

  Vec2 apply(Vec2 p) const {
    Vec2 r = rotate(p, yaw);
    return {r.z + tz, r.x + tx};
  }

  SE2 inverse() const {
    Vec2 t = rotate({-tz, -tx}, -yaw);
    return {t.z, t.x, -yaw};
  }

  Vec2 translation() const { return {tz, tx}; }
};

// a then b as poses: result maps b-local coordinates through b then a.
inline SE2 compose(const SE2& a, const SE2& b) {
  Vec2 t = a.apply({b.tz, b.tx});
  return {t.z, t.x, wrap_angle(a.yaw + b.yaw)};
}

}  // namespace lidarmotion
