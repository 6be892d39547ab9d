#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace rwiou {

namespace detail {

inline void require_finite(double v, const char* field) {
  if (!std::isfinite(v)) {
    throw std::invalid_argument(std::string("box field '") + field + "' is not finite");
  }
}

inline void require_positive(double v, const char* field) {
  require_finite(v, field);
  if (!(v > 0.0)) {
    throw std::invalid_argument(std::string("box field '") + field + "' must be positive");
  }
}

}  // namespace detail

// Oriented 3D box. Yaw `theta` is a rotation in the BEV (x-y) plane and is
// stored as given; nothing downstream depends on it being normalized.
struct Box3D {
  double x = 0.0, y = 0.0, z = 0.0;
  double l = 1.0, w = 1.0, h = 1.0;
  double theta = 0.0;

  Box3D() = default;
  Box3D(double x_, double y_, double z_, double l_, double w_, double h_, double theta_)
      : x(x_), y(y_), z(z_), l(l_), w(w_), h(h_), theta(theta_) {
    validate();
  }

  void validate() const {
    detail::require_finite(x, "x");
    detail::require_finite(y, "y");
    detail::require_finite(z, "z");
    detail::require_positive(l, "l");
    detail::require_positive(w, "w");
    detail::require_positive(h, "h");
    detail::require_finite(theta, "theta");
  }

  friend bool operator==(const Box3D&, const Box3D&) = default;
};

// Differentiable 8-channel box: center, sizes, and independent sine/cosine
// channels for yaw. s and c are not tied to the unit circle.
struct BoxParams8 {
  double x = 0.0, y = 0.0, z = 0.0;
  double l = 1.0, w = 1.0, h = 1.0;
  double s = 0.0, c = 1.0;

  static constexpr std::size_t kSize = 8;

  BoxParams8() = default;
  BoxParams8(double x_, double y_, double z_, double l_, double w_, double h_, double s_,
             double c_)
      : x(x_), y(y_), z(z_), l(l_), w(w_), h(h_), s(s_), c(c_) {
    validate();
  }

  static BoxParams8 from_box(const Box3D& b) {
    return {b.x, b.y, b.z, b.l, b.w, b.h, std::sin(b.theta), std::cos(b.theta)};
  }

  static BoxParams8 from_array(const std::array<double, kSize>& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
  }

  std::array<double, kSize> to_array() const { return {x, y, z, l, w, h, s, c}; }

  // Yaw recovered from the channels; atan2(0, 0) = 0.
  double yaw() const { return std::atan2(s, c); }

  Box3D to_box() const { return {x, y, z, l, w, h, yaw()}; }

  void validate() const {
    detail::require_finite(x, "x");
    detail::require_finite(y, "y");
    detail::require_finite(z, "z");
    detail::require_positive(l, "l");
    detail::require_positive(w, "w");
    detail::require_positive(h, "h");
    detail::require_finite(s, "s");
    detail::require_finite(c, "c");
  }

  friend bool operator==(const BoxParams8&, const BoxParams8&) = default;
};

// Per-axis [lo, hi] bounds of a box treated as axis-aligned.
struct AxisExtents {
  std::array<double, 3> lo;
  std::array<double, 3> hi;

  static AxisExtents of(double x, double y, double z, double l, double w, double h) {
    return {{x - l / 2, y - w / 2, z - h / 2}, {x + l / 2, y + w / 2, z + h / 2}};
  }
  static AxisExtents of(const Box3D& b) { return of(b.x, b.y, b.z, b.l, b.w, b.h); }
  static AxisExtents of(const BoxParams8& b) { return of(b.x, b.y, b.z, b.l, b.w, b.h); }

  // Volume from the bounds, so a box intersected with itself reproduces it
  // bit-for-bit.
  double volume() const { return (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]); }
};

}  // namespace rwiou
