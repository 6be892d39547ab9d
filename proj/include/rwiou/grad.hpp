#pragma once

#include <array>
#include <cmath>
#include <cstddef>

#include "rwiou/box.hpp"
#include "rwiou/geometry.hpp"

namespace rwiou {

// Partial derivatives of a scalar loss w.r.t. the BoxParams8 channels of
// the predicted box.
struct Grad8 {
  double d_x = 0.0, d_y = 0.0, d_z = 0.0;
  double d_l = 0.0, d_w = 0.0, d_h = 0.0;
  double d_s = 0.0, d_c = 0.0;

  static Grad8 from_array(const std::array<double, 8>& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
  }
  std::array<double, 8> to_array() const { return {d_x, d_y, d_z, d_l, d_w, d_h, d_s, d_c}; }

  Grad8& operator+=(const Grad8& o) {
    d_x += o.d_x; d_y += o.d_y; d_z += o.d_z;
    d_l += o.d_l; d_w += o.d_w; d_h += o.d_h;
    d_s += o.d_s; d_c += o.d_c;
    return *this;
  }
  friend Grad8 operator+(Grad8 a, const Grad8& b) { return a += b; }
  friend Grad8 operator*(double k, Grad8 g) {
    for (double* v : {&g.d_x, &g.d_y, &g.d_z, &g.d_l, &g.d_w, &g.d_h, &g.d_s, &g.d_c}) *v *= k;
    return g;
  }
  friend bool operator==(const Grad8&, const Grad8&) = default;
};

// RWIoU between a predicted box with free sine/cosine channels and a target.
inline double rwiou_params(const BoxParams8& pred, const BoxParams8& target, double alpha) {
  const AxisExtents ep = AxisExtents::of(pred);
  const AxisExtents et = AxisExtents::of(target);
  const double weighted =
      rotation_weight_channels(target.s, target.c, pred.s, pred.c, alpha) *
      intersection_volume(ep, et);
  return weighted / (ep.volume() + et.volume() - weighted);
}

inline double rwiou_loss(const BoxParams8& pred, const BoxParams8& target, double alpha) {
  pred.validate();
  target.validate();
  return 1.0 - rwiou_params(pred, target, alpha);
}

namespace detail {

// Derivative weight of min(p, t) w.r.t. p (or of max(p, t) for `max_side`):
// 1 when p is the active argument, 0 when t is, 1/2 on an exact tie.
inline double active_weight(double p, double t, bool max_side) {
  if (p == t) return 0.5;
  return (max_side ? p > t : p < t) ? 1.0 : 0.0;
}

// d omega_factor / d delta for omega_factor = clamp(1 - alpha |delta| / 2).
// delta == 0 takes the delta > 0 branch; inside the clamp region it is 0.
inline double rotation_factor_slope(double delta, double alpha) {
  if (1.0 - alpha * std::abs(delta) / 2.0 <= 0.0) return 0.0;
  return delta >= 0.0 ? -alpha / 2.0 : alpha / 2.0;
}

}  // namespace detail

// Gradient of 1 - RWIoU w.r.t. the predicted box.
//
// Exact ties between a predicted face and the target face split the
// derivative evenly between the two, which makes pred == target a zero for
// every location/size channel. Zero overlap (including touching faces)
// gives the zero gradient since the loss is locally constant at 1.
inline Grad8 rwiou_loss_grad(const BoxParams8& pred, const BoxParams8& target, double alpha) {
  pred.validate();
  target.validate();
  check_alpha(alpha);

  const AxisExtents ep = AxisExtents::of(pred);
  const AxisExtents et = AxisExtents::of(target);
  std::array<double, 3> overlap{};
  for (std::size_t k = 0; k < 3; ++k) {
    overlap[k] = std::min(ep.hi[k], et.hi[k]) - std::max(ep.lo[k], et.lo[k]);
    if (overlap[k] <= 0.0) return {};
  }
  const double inter = overlap[0] * overlap[1] * overlap[2];

  const double ds = pred.s - target.s;
  const double dc = pred.c - target.c;
  const double omega_s = rotation_factor(ds, alpha);
  const double omega_c = rotation_factor(dc, alpha);
  const double omega = omega_s * omega_c;

  const double v_pred = ep.volume();
  const double weighted = omega * inter;
  const double uni = v_pred + et.volume() - weighted;
  // dL = -(dVw (Vu + Vw) - Vw dVp) / Vu^2
  const double a = (uni + weighted) / (uni * uni);
  const double b = weighted / (uni * uni);
  const auto dloss = [&](double d_weighted, double d_vpred) {
    return -(d_weighted * a - d_vpred * b);
  };

  // Sizes from the extents so that identical boxes cancel exactly.
  const std::array<double, 3> size{ep.hi[0] - ep.lo[0], ep.hi[1] - ep.lo[1],
                                   ep.hi[2] - ep.lo[2]};
  std::array<double, 3> d_center{};
  std::array<double, 3> d_size{};
  for (std::size_t k = 0; k < 3; ++k) {
    const double w_hi = detail::active_weight(ep.hi[k], et.hi[k], false);
    const double w_lo = detail::active_weight(ep.lo[k], et.lo[k], true);
    const double other_overlap = overlap[(k + 1) % 3] * overlap[(k + 2) % 3];
    const double other_size = size[(k + 1) % 3] * size[(k + 2) % 3];
    d_center[k] = dloss(omega * other_overlap * (w_hi - w_lo), 0.0);
    d_size[k] = dloss(omega * other_overlap * (w_hi + w_lo) / 2.0, other_size);
  }

  Grad8 g;
  g.d_x = d_center[0];
  g.d_y = d_center[1];
  g.d_z = d_center[2];
  g.d_l = d_size[0];
  g.d_w = d_size[1];
  g.d_h = d_size[2];
  g.d_s = dloss(detail::rotation_factor_slope(ds, alpha) * omega_c * inter, 0.0);
  g.d_c = dloss(detail::rotation_factor_slope(dc, alpha) * omega_s * inter, 0.0);
  return g;
}

inline double center_distance_term(const BoxParams8& pred, const BoxParams8& target) {
  return center_distance_term(AxisExtents::of(pred), AxisExtents::of(target));
}

// Gradient of (D / Diag)^2 w.r.t. the predicted box. The enclosing-box
// bounds use the same even split on exact ties.
inline Grad8 center_distance_grad(const BoxParams8& pred, const BoxParams8& target) {
  const AxisExtents ep = AxisExtents::of(pred);
  const AxisExtents et = AxisExtents::of(target);
  const std::array<double, 3> offset{pred.x - target.x, pred.y - target.y, pred.z - target.z};
  std::array<double, 3> span{};
  double dist2 = 0.0;
  double diag2 = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    span[k] = std::max(ep.hi[k], et.hi[k]) - std::min(ep.lo[k], et.lo[k]);
    dist2 += offset[k] * offset[k];
    diag2 += span[k] * span[k];
  }
  std::array<double, 3> d_center{};
  std::array<double, 3> d_size{};
  for (std::size_t k = 0; k < 3; ++k) {
    const double v_hi = detail::active_weight(ep.hi[k], et.hi[k], true);
    const double v_lo = detail::active_weight(ep.lo[k], et.lo[k], false);
    const double d_diag2_d_span = 2.0 * span[k];
    d_center[k] = 2.0 * offset[k] / diag2 -
                  dist2 / (diag2 * diag2) * d_diag2_d_span * (v_hi - v_lo);
    d_size[k] = -dist2 / (diag2 * diag2) * d_diag2_d_span * (v_hi + v_lo) / 2.0;
  }
  Grad8 g;
  g.d_x = d_center[0];
  g.d_y = d_center[1];
  g.d_z = d_center[2];
  g.d_l = d_size[0];
  g.d_w = d_size[1];
  g.d_h = d_size[2];
  return g;
}

}  // namespace rwiou
