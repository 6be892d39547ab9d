#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>

#include "rwiou/box.hpp"
#include "rwiou/rng.hpp"

namespace rwiou {

inline double volume(const Box3D& b) { return b.l * b.w * b.h; }

inline void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("alpha must lie in [0, 1]");
  }
}

// Overlap volume of two extents. Touching faces give exactly 0.
inline double intersection_volume(const AxisExtents& a, const AxisExtents& b) {
  double v = 1.0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double lo = std::max(a.lo[k], b.lo[k]);
    const double hi = std::min(a.hi[k], b.hi[k]);
    v *= std::max(hi - lo, 0.0);
  }
  return v;
}

// Yaw is ignored: both boxes are treated as axis-aligned.
inline double aabb_intersection_volume(const Box3D& b1, const Box3D& b2) {
  return intersection_volume(AxisExtents::of(b1), AxisExtents::of(b2));
}

inline double axis_aligned_iou(const Box3D& b1, const Box3D& b2) {
  const AxisExtents e1 = AxisExtents::of(b1);
  const AxisExtents e2 = AxisExtents::of(b2);
  const double inter = intersection_volume(e1, e2);
  return inter / (e1.volume() + e2.volume() - inter);
}

// One factor of the rotation weight, 1 - alpha * |delta| / 2, clamped to
// [0, 1] so unconstrained sine/cosine channels cannot push it negative.
inline double rotation_factor(double delta, double alpha) {
  return std::clamp(1.0 - alpha * std::abs(delta) / 2.0, 0.0, 1.0);
}

// Rotation weight from sine/cosine channels.
inline double rotation_weight_channels(double s1, double c1, double s2, double c2,
                                       double alpha) {
  check_alpha(alpha);
  return rotation_factor(s2 - s1, alpha) * rotation_factor(c2 - c1, alpha);
}

// omega = omega_s * omega_c, in [(1 - alpha)^2, 1] for true angles.
inline double rotation_weight(double theta1, double theta2, double alpha) {
  return rotation_weight_channels(std::sin(theta1), std::cos(theta1), std::sin(theta2),
                                  std::cos(theta2), alpha);
}

// Rotation-weighted IoU: the axis-aligned intersection scaled by the
// rotation weight, over the union formed with the weighted intersection.
inline double rwiou(const Box3D& b1, const Box3D& b2, double alpha) {
  const AxisExtents e1 = AxisExtents::of(b1);
  const AxisExtents e2 = AxisExtents::of(b2);
  const double weighted = rotation_weight(b1.theta, b2.theta, alpha) * intersection_volume(e1, e2);
  const double uni = e1.volume() + e2.volume() - weighted;
  return weighted / uni;
}

// (D / Diag)^2: squared center distance over the squared diagonal of the
// axis-aligned box enclosing both boxes.
inline double center_distance_term(const AxisExtents& e1, const AxisExtents& e2) {
  double dist2 = 0.0;
  double diag2 = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double d = (e1.lo[k] + e1.hi[k]) / 2 - (e2.lo[k] + e2.hi[k]) / 2;
    const double span = std::max(e1.hi[k], e2.hi[k]) - std::min(e1.lo[k], e2.lo[k]);
    dist2 += d * d;
    diag2 += span * span;
  }
  return dist2 / diag2;
}

inline double center_distance_term(const Box3D& b1, const Box3D& b2) {
  return center_distance_term(AxisExtents::of(b1), AxisExtents::of(b2));
}

// ---------------------------------------------------------------------------
// Exact rotated IoU (yaw only): BEV convex polygon clipping times the 1-D
// height overlap.

struct Point2 {
  double x = 0.0, y = 0.0;
};

// Small fixed-capacity convex polygon. Clipping a convex polygon by a
// quadrilateral adds at most one vertex per clip edge.
struct Polygon {
  static constexpr std::size_t kCapacity = 16;
  std::array<Point2, kCapacity> pts{};
  std::size_t n = 0;

  void push(Point2 p) {
    if (n < kCapacity) pts[n++] = p;
  }
};

// Counter-clockwise BEV corners.
inline Polygon bev_corners(const Box3D& b) {
  const double c = std::cos(b.theta);
  const double s = std::sin(b.theta);
  const double hl = b.l / 2;
  const double hw = b.w / 2;
  const std::array<Point2, 4> local{{{hl, -hw}, {hl, hw}, {-hl, hw}, {-hl, -hw}}};
  Polygon poly;
  for (const Point2& p : local) {
    poly.push({b.x + p.x * c - p.y * s, b.y + p.x * s + p.y * c});
  }
  return poly;
}

inline double polygon_area(const Polygon& poly) {
  if (poly.n < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0; i < poly.n; ++i) {
    const Point2& p = poly.pts[i];
    const Point2& q = poly.pts[(i + 1) % poly.n];
    twice += p.x * q.y - p.y * q.x;
  }
  return std::abs(twice) / 2;
}

// Sutherland-Hodgman clip of `subject` by the CCW convex polygon `clip`.
inline Polygon clip_convex(const Polygon& subject, const Polygon& clip) {
  constexpr double kCrossTol = 1e-12;
  Polygon out = subject;
  for (std::size_t e = 0; e < clip.n && out.n >= 3; ++e) {
    const Point2 a = clip.pts[e];
    const Point2 b = clip.pts[(e + 1) % clip.n];
    const auto side = [&](const Point2& p) {
      return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    };
    Polygon next;
    for (std::size_t i = 0; i < out.n; ++i) {
      const Point2 p = out.pts[i];
      const Point2 q = out.pts[(i + 1) % out.n];
      const double dp = side(p);
      const double dq = side(q);
      const bool p_in = dp >= -kCrossTol;
      const bool q_in = dq >= -kCrossTol;
      if (p_in) next.push(p);
      if (p_in != q_in && std::abs(dp - dq) > kCrossTol) {
        const double t = dp / (dp - dq);
        next.push({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
    out = next;
  }
  if (out.n < 3) out.n = 0;
  return out;
}

inline double bev_intersection_area(const Box3D& b1, const Box3D& b2) {
  const double dx = b1.x - b2.x;
  const double dy = b1.y - b2.y;
  const double r1 = std::hypot(b1.l, b1.w) / 2;
  const double r2 = std::hypot(b2.l, b2.w) / 2;
  if (dx * dx + dy * dy >= (r1 + r2) * (r1 + r2)) return 0.0;
  return polygon_area(clip_convex(bev_corners(b1), bev_corners(b2)));
}

inline double rotated_iou_exact(const Box3D& b1, const Box3D& b2) {
  if (b1 == b2) return 1.0;
  const double z_overlap =
      std::min(b1.z + b1.h / 2, b2.z + b2.h / 2) - std::max(b1.z - b1.h / 2, b2.z - b2.h / 2);
  if (z_overlap <= 0.0) return 0.0;
  const double inter = bev_intersection_area(b1, b2) * z_overlap;
  if (inter <= 0.0) return 0.0;
  const double uni = volume(b1) + volume(b2) - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Monte-Carlo IoU estimate, an independent brute-force reference.

struct McEstimate {
  double iou = 0.0;
  // Binomial standard error of the in-both fraction among union hits, using
  // the (hits + 1) / (n + 2) smoothed proportion so it never collapses to 0
  // for an interior estimate.
  double std_error = 0.0;
  std::uint64_t n_union = 0;
  std::uint64_t n_intersection = 0;
};

inline bool contains(const Box3D& b, double px, double py, double pz, double cos_t,
                     double sin_t) {
  const double dx = px - b.x;
  const double dy = py - b.y;
  const double u = dx * cos_t + dy * sin_t;
  const double v = -dx * sin_t + dy * cos_t;
  return std::abs(u) <= b.l / 2 && std::abs(v) <= b.w / 2 && std::abs(pz - b.z) <= b.h / 2;
}

inline McEstimate mc_iou_oracle(const Box3D& b1, const Box3D& b2, std::uint64_t n_samples,
                                std::uint64_t seed) {
  if (n_samples < 10'000) {
    throw std::invalid_argument("mc_iou_oracle needs at least 1e4 samples");
  }
  const Polygon p1 = bev_corners(b1);
  const Polygon p2 = bev_corners(b2);
  double x_lo = p1.pts[0].x, x_hi = x_lo, y_lo = p1.pts[0].y, y_hi = y_lo;
  for (const Polygon* poly : {&p1, &p2}) {
    for (std::size_t i = 0; i < poly->n; ++i) {
      x_lo = std::min(x_lo, poly->pts[i].x);
      x_hi = std::max(x_hi, poly->pts[i].x);
      y_lo = std::min(y_lo, poly->pts[i].y);
      y_hi = std::max(y_hi, poly->pts[i].y);
    }
  }
  const double z_lo = std::min(b1.z - b1.h / 2, b2.z - b2.h / 2);
  const double z_hi = std::max(b1.z + b1.h / 2, b2.z + b2.h / 2);
  const double c1 = std::cos(b1.theta), s1 = std::sin(b1.theta);
  const double c2 = std::cos(b2.theta), s2 = std::sin(b2.theta);

  Rng rng(seed);
  McEstimate est;
  for (std::uint64_t i = 0; i < n_samples; ++i) {
    const double px = rng.uniform(x_lo, x_hi);
    const double py = rng.uniform(y_lo, y_hi);
    const double pz = rng.uniform(z_lo, z_hi);
    const bool in1 = contains(b1, px, py, pz, c1, s1);
    const bool in2 = contains(b2, px, py, pz, c2, s2);
    est.n_union += (in1 || in2) ? 1 : 0;
    est.n_intersection += (in1 && in2) ? 1 : 0;
  }
  if (est.n_union == 0) return est;
  const double n = static_cast<double>(est.n_union);
  est.iou = static_cast<double>(est.n_intersection) / n;
  const double smoothed = (static_cast<double>(est.n_intersection) + 1.0) / (n + 2.0);
  est.std_error = std::sqrt(smoothed * (1.0 - smoothed) / n);
  return est;
}

}  // namespace rwiou
