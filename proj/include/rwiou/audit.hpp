#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "rwiou/grad.hpp"
#include "rwiou/rng.hpp"

namespace rwiou {

struct BoundEntry {
  std::string regime;
  std::string quantity;  // e.g. "|d_x| * l_t"
  double bound = 0.0;
  double max_observed = 0.0;
  std::size_t n_samples = 0;
  std::size_t n_violations = 0;
  bool asserted = true;
};

struct Violation {
  std::string regime;
  std::string quantity;
  std::size_t sample = 0;
  double observed = 0.0;
  double bound = 0.0;
};

struct AuditReport {
  std::vector<BoundEntry> entries;
  std::vector<Violation> violations;  // first few only

  bool passed() const {
    return std::none_of(entries.begin(), entries.end(),
                        [](const BoundEntry& e) { return e.asserted && e.n_violations > 0; });
  }
};

struct FdReport {
  std::size_t n_checked = 0;
  std::size_t n_failed = 0;
  // Relative error with the absolute floor folded into the denominator, so
  // it is below rel_tol exactly when every component passes.
  double max_rel_error = 0.0;
  double rel_tol = 1e-5;
  double abs_floor = 1e-8;
  std::vector<Violation> failures;  // first few only

  bool passed() const { return n_failed == 0; }
};

namespace audit_detail {

inline constexpr std::size_t kMaxRecorded = 20;
inline constexpr double kSlack = 1e-9;

inline BoxParams8 random_target(Rng& rng) {
  const double yaw = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-2, 2), rng.uniform(0.3, 6.0),
          rng.uniform(0.3, 6.0), rng.uniform(0.3, 4.0), std::sin(yaw), std::cos(yaw)};
}

inline std::array<double, 3> sizes(const BoxParams8& b) { return {b.l, b.w, b.h}; }

inline BoxParams8 with(const std::array<double, 3>& center,
                       const std::array<double, 3>& size, double s, double c) {
  return {center[0], center[1], center[2], size[0], size[1], size[2], s, c};
}

// Overlapping pred in general position; channels may leave [-1, 1].
inline BoxParams8 random_overlapping_pred(Rng& rng, const BoxParams8& t) {
  const auto st = sizes(t);
  std::array<double, 3> sp{};
  std::array<double, 3> center{t.x, t.y, t.z};
  for (std::size_t k = 0; k < 3; ++k) {
    sp[k] = st[k] * std::exp(rng.uniform(-0.7, 0.7));
    center[k] += rng.uniform(-0.95, 0.95) * (st[k] + sp[k]) / 2;
  }
  return with(center, sp, t.s + rng.uniform(-1.2, 1.2), t.c + rng.uniform(-1.2, 1.2));
}

// Partial overlap on every axis: exactly one pred face inside the target.
inline BoxParams8 random_straddling_pred(Rng& rng, const BoxParams8& t) {
  const auto st = sizes(t);
  std::array<double, 3> sp{};
  std::array<double, 3> center{t.x, t.y, t.z};
  for (std::size_t k = 0; k < 3; ++k) {
    sp[k] = st[k] * std::exp(rng.uniform(-0.5, 0.5));
    const double lo = std::abs(st[k] - sp[k]) / 2;
    const double hi = (st[k] + sp[k]) / 2;
    const double mag = lo + (hi - lo) * rng.uniform(0.001, 0.999);
    center[k] += rng.uniform() < 0.5 ? -mag : mag;
  }
  return with(center, sp, t.s + rng.uniform(-0.5, 0.5), t.c + rng.uniform(-0.5, 0.5));
}

// Centers exactly aligned with the target.
inline BoxParams8 random_aligned_pred(Rng& rng, const BoxParams8& t) {
  const auto st = sizes(t);
  std::array<double, 3> sp{};
  for (std::size_t k = 0; k < 3; ++k) sp[k] = st[k] * std::exp(rng.uniform(-0.7, 0.7));
  return with({t.x, t.y, t.z}, sp, t.s + rng.uniform(-0.5, 0.5),
              t.c + rng.uniform(-0.5, 0.5));
}

class BoundTracker {
 public:
  BoundTracker(AuditReport& report, std::string regime, std::string quantity, double bound,
               bool asserted)
      : report_(report), index_(report.entries.size()) {
    report.entries.push_back({std::move(regime), std::move(quantity), bound, 0.0, 0, 0, asserted});
  }

  void observe(std::size_t sample, double value) {
    BoundEntry& e = report_.entries[index_];
    ++e.n_samples;
    e.max_observed = std::max(e.max_observed, value);
    if (e.asserted && value > e.bound + kSlack) {
      ++e.n_violations;
      if (report_.violations.size() < kMaxRecorded) {
        report_.violations.push_back({e.regime, e.quantity, sample, value, e.bound});
      }
    }
  }

 private:
  AuditReport& report_;
  std::size_t index_;
};

}  // namespace audit_detail

// Samples (pred, target) pairs in the regimes where closed-form gradient
// bounds hold and checks them. Location and size bounds are scaled by the
// target extent (|d_x| * l_t <= 2, |d_l| * l_t <= 1) so one bound covers
// every sample. Out-of-regime size gradients are reported, not asserted.
inline AuditReport gradient_bound_audit(std::size_t samples, std::uint64_t seed, double alpha) {
  using namespace audit_detail;
  if (samples < 1000) throw std::invalid_argument("gradient_bound_audit needs >= 1000 samples");
  check_alpha(alpha);

  AuditReport report;
  Rng rng(seed);

  BoundTracker bound_s(report, "general_overlap", "|d_s|", alpha, true);
  BoundTracker bound_c(report, "general_overlap", "|d_c|", alpha, true);
  for (std::size_t i = 0; i < samples; ++i) {
    const BoxParams8 t = random_target(rng);
    const Grad8 g = rwiou_loss_grad(random_overlapping_pred(rng, t), t, alpha);
    bound_s.observe(i, std::abs(g.d_s));
    bound_c.observe(i, std::abs(g.d_c));
  }

  BoundTracker bound_x(report, "partial_overlap", "|d_x| * l_t", 2.0, true);
  BoundTracker bound_y(report, "partial_overlap", "|d_y| * w_t", 2.0, true);
  BoundTracker bound_z(report, "partial_overlap", "|d_z| * h_t", 2.0, true);
  for (std::size_t i = 0; i < samples; ++i) {
    const BoxParams8 t = random_target(rng);
    const Grad8 g = rwiou_loss_grad(random_straddling_pred(rng, t), t, alpha);
    bound_x.observe(i, std::abs(g.d_x) * t.l);
    bound_y.observe(i, std::abs(g.d_y) * t.w);
    bound_z.observe(i, std::abs(g.d_z) * t.h);
  }

  BoundTracker bound_l(report, "center_aligned", "|d_l| * l_t", 1.0, true);
  BoundTracker bound_w(report, "center_aligned", "|d_w| * w_t", 1.0, true);
  BoundTracker bound_h(report, "center_aligned", "|d_h| * h_t", 1.0, true);
  for (std::size_t i = 0; i < samples; ++i) {
    const BoxParams8 t = random_target(rng);
    const Grad8 g = rwiou_loss_grad(random_aligned_pred(rng, t), t, alpha);
    bound_l.observe(i, std::abs(g.d_l) * t.l);
    bound_w.observe(i, std::abs(g.d_w) * t.w);
    bound_h.observe(i, std::abs(g.d_h) * t.h);
  }

  BoundTracker general_l(report, "general_overlap", "|d_l| * l_t", 1.0, false);
  for (std::size_t i = 0; i < samples; ++i) {
    const BoxParams8 t = random_target(rng);
    const Grad8 g = rwiou_loss_grad(random_overlapping_pred(rng, t), t, alpha);
    general_l.observe(i, std::abs(g.d_l) * t.l);
  }
  return report;
}

// True when every clamp/min/max argument of the loss sits at least
// `margin` away from its breakpoint.
inline bool away_from_breakpoints(const BoxParams8& pred, const BoxParams8& target, double alpha,
                                  double margin) {
  const AxisExtents ep = AxisExtents::of(pred);
  const AxisExtents et = AxisExtents::of(target);
  for (std::size_t k = 0; k < 3; ++k) {
    if (std::abs(ep.hi[k] - et.hi[k]) < margin || std::abs(ep.lo[k] - et.lo[k]) < margin) {
      return false;
    }
    if (std::min(ep.hi[k], et.hi[k]) - std::max(ep.lo[k], et.lo[k]) < margin) return false;
  }
  const double ds = pred.s - target.s;
  const double dc = pred.c - target.c;
  if (std::abs(ds) < margin || std::abs(dc) < margin) return false;
  if (std::abs(1.0 - alpha * std::abs(ds) / 2) < margin) return false;
  if (std::abs(1.0 - alpha * std::abs(dc) / 2) < margin) return false;
  return true;
}

// Analytic gradient vs central differences (step 1e-6 relative to each
// channel's magnitude, at least 1e-6) on overlapping pairs away from
// breakpoints.
inline FdReport finite_difference_audit(std::size_t samples, std::uint64_t seed, double alpha) {
  using namespace audit_detail;
  check_alpha(alpha);
  FdReport report;
  Rng rng(seed);
  static constexpr std::array<const char*, 8> kNames{"d_x", "d_y", "d_z", "d_l",
                                                      "d_w", "d_h", "d_s", "d_c"};
  std::size_t sample = 0;
  while (report.n_checked < samples) {
    const BoxParams8 t = random_target(rng);
    const BoxParams8 p = random_overlapping_pred(rng, t);
    if (!away_from_breakpoints(p, t, alpha, 1e-4)) continue;
    const auto analytic = rwiou_loss_grad(p, t, alpha).to_array();
    const auto base = p.to_array();
    bool failed = false;
    for (std::size_t k = 0; k < 8; ++k) {
      const double step = 1e-6 * std::max(std::abs(base[k]), 1.0);
      auto plus = base;
      auto minus = base;
      plus[k] += step;
      minus[k] -= step;
      const double numeric = (rwiou_loss(BoxParams8::from_array(plus), t, alpha) -
                              rwiou_loss(BoxParams8::from_array(minus), t, alpha)) /
                             (2 * step);
      const double err = std::abs(analytic[k] - numeric);
      const double scale = std::max(std::abs(analytic[k]), std::abs(numeric));
      const double denom = std::max(scale, report.abs_floor / report.rel_tol);
      report.max_rel_error = std::max(report.max_rel_error, err / denom);
      if (err > std::max(report.rel_tol * scale, report.abs_floor)) {
        failed = true;
        if (report.failures.size() < kMaxRecorded) {
          report.failures.push_back({"finite_difference", kNames[k], sample, analytic[k], numeric});
        }
      }
    }
    report.n_failed += failed ? 1 : 0;
    ++report.n_checked;
    ++sample;
  }
  return report;
}

}  // namespace rwiou
