#pragma once

#include <algorithm>
#include <cmath>

#include "rwiou/grad.hpp"

namespace rwiou {

inline constexpr double kScoreEps = 1e-6;

// Quality-focal term for one score p against soft target q:
//   -|q - p|^gamma * (q log p + (1 - q) log(1 - p))
// The modulating factor uses the raw score; only the logs see the clamp,
// so p == q contributes exactly 0.
inline double focal_term(double p, double q, double gamma) {
  const double mod = std::pow(std::abs(q - p), gamma);
  if (mod == 0.0) return 0.0;
  const double pc = std::clamp(p, kScoreEps, 1.0 - kScoreEps);
  return -mod * (q * std::log(pc) + (1.0 - q) * std::log(1.0 - pc));
}

// d focal_term / dp. Where the clamp is active the log part has zero slope.
inline double focal_term_grad(double p, double q, double gamma) {
  const double diff = p - q;
  if (diff == 0.0) return 0.0;
  const double pc = std::clamp(p, kScoreEps, 1.0 - kScoreEps);
  const bool clamped = pc != p;
  const double ce = -(q * std::log(pc) + (1.0 - q) * std::log(1.0 - pc));
  const double d_ce = clamped ? 0.0 : -(q / pc - (1.0 - q) / (1.0 - pc));
  const double mod = std::pow(std::abs(diff), gamma);
  const double d_mod =
      gamma == 0.0 ? 0.0 : gamma * std::pow(std::abs(diff), gamma - 1.0) * (diff > 0 ? 1.0 : -1.0);
  return d_mod * ce + mod * d_ce;
}

// Smooth-L1 with beta = 1.
inline double smooth_l1(double residual) {
  const double a = std::abs(residual);
  return a < 1.0 ? 0.5 * a * a : a - 0.5;
}

inline double smooth_l1_grad(double residual) {
  return std::abs(residual) < 1.0 ? residual : (residual > 0 ? 1.0 : -1.0);
}

// Per-sample regression loss: 1 - RWIoU + (D / Diag)^2, in [0, 2).
inline double regression_loss_sample(const BoxParams8& pred, const BoxParams8& target,
                                     double alpha) {
  return rwiou_loss(pred, target, alpha) + center_distance_term(pred, target);
}

inline Grad8 regression_loss_sample_grad(const BoxParams8& pred, const BoxParams8& target,
                                         double alpha) {
  return rwiou_loss_grad(pred, target, alpha) + center_distance_grad(pred, target);
}

}  // namespace rwiou
