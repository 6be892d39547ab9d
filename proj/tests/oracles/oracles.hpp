#pragma once

// Test-only reference implementations. They are deliberately naive: plain
// loops, no shared helpers beyond the per-candidate cost and IoU functions
// (which have their own unit tests).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "rwiou/assign.hpp"
#include "rwiou/box.hpp"

namespace oracle {

// Axis-aligned IoU straight from center/size form.
inline double naive_aabb_iou(const rwiou::Box3D& a, const rwiou::Box3D& b) {
  const double ca[3] = {a.x, a.y, a.z}, cb[3] = {b.x, b.y, b.z};
  const double sa[3] = {a.l, a.w, a.h}, sb[3] = {b.l, b.w, b.h};
  double inter = 1.0;
  for (int k = 0; k < 3; ++k) {
    const double lo = std::max(ca[k] - sa[k] / 2, cb[k] - sb[k] / 2);
    const double hi = std::min(ca[k] + sa[k] / 2, cb[k] + sb[k] / 2);
    inter *= hi > lo ? hi - lo : 0.0;
  }
  const double va = a.l * a.w * a.h;
  const double vb = b.l * b.w * b.h;
  return inter / (va + vb - inter);
}

// Closed-form RWIoU for the regression loss, from the definition.
inline double naive_rwiou(const rwiou::BoxParams8& p, const rwiou::BoxParams8& t, double alpha) {
  const double cp[3] = {p.x, p.y, p.z}, ct[3] = {t.x, t.y, t.z};
  const double sp[3] = {p.l, p.w, p.h}, st[3] = {t.l, t.w, t.h};
  double inter = 1.0;
  for (int k = 0; k < 3; ++k) {
    const double lo = std::max(cp[k] - sp[k] / 2, ct[k] - st[k] / 2);
    const double hi = std::min(cp[k] + sp[k] / 2, ct[k] + st[k] / 2);
    inter *= std::max(0.0, hi - lo);
  }
  const double ws = std::clamp(1.0 - alpha * std::abs(t.s - p.s) / 2, 0.0, 1.0);
  const double wc = std::clamp(1.0 - alpha * std::abs(t.c - p.c) / 2, 0.0, 1.0);
  const double vw = ws * wc * inter;
  return vw / (p.l * p.w * p.h + t.l * t.w * t.h - vw);
}

// Central finite-difference gradient of f at x.
inline std::array<double, 8> fd_gradient(const std::function<double(const std::array<double, 8>&)>& f,
                                         const std::array<double, 8>& x, double rel_step = 1e-6) {
  std::array<double, 8> g{};
  for (std::size_t i = 0; i < 8; ++i) {
    const double h = rel_step * std::max(std::abs(x[i]), 1.0);
    auto xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2 * h);
  }
  return g;
}

// k from a list of IoUs, summing in extended precision.
inline int count_k(std::span<const double> ious) {
  long double total = 0.0L;
  for (double v : ious) total += v;
  long double k = std::floor(total);
  if (k < 1) k = 1;
  if (!ious.empty() && k > static_cast<long double>(ious.size())) k = ious.size();
  return static_cast<int>(k);
}

// Exhaustive DCLA: scans every cell of the grid for every gt and picks the
// k cheapest claimed cells by repeated minimum search.
inline rwiou::AssignmentResult brute_force_assign(const rwiou::GridSpec& grid,
                                                  std::span<const rwiou::GroundTruth> gts,
                                                  const rwiou::PredictionMap& preds,
                                                  const rwiou::AssignConfig& cfg) {
  using rwiou::CellIndex;
  const int n_cls = preds.n_classes;
  const std::size_t n_cells = static_cast<std::size_t>(grid.n_rows) * grid.n_cols;
  const std::size_t n_gt = gts.size();

  std::vector<CellIndex> centers(n_gt);
  for (std::size_t i = 0; i < n_gt; ++i) {
    int col = static_cast<int>(std::floor((gts[i].box.x - grid.x_min) / grid.cell_size));
    int row = static_cast<int>(std::floor((gts[i].box.y - grid.y_min) / grid.cell_size));
    centers[i] = {std::min(std::max(row, 0), grid.n_rows - 1),
                  std::min(std::max(col, 0), grid.n_cols - 1)};
  }

  // in_region[i][cell], cost[i][cell], iou[i][cell]
  std::vector<std::vector<bool>> in_region(n_gt, std::vector<bool>(n_cells, false));
  std::vector<std::vector<double>> cost(n_gt, std::vector<double>(n_cells, 0.0));
  std::vector<std::vector<double>> iou(n_gt, std::vector<double>(n_cells, 0.0));
  for (std::size_t i = 0; i < n_gt; ++i) {
    for (int row = 0; row < grid.n_rows; ++row) {
      for (int col = 0; col < grid.n_cols; ++col) {
        if (std::abs(row - centers[i].row) + std::abs(col - centers[i].col) > cfg.r) continue;
        const std::size_t cell = static_cast<std::size_t>(row) * grid.n_cols + col;
        in_region[i][cell] = true;
        cost[i][cell] = rwiou::selection_cost(gts[i], preds.boxes[cell],
                                              preds.scores[cell * n_cls + gts[i].class_id],
                                              cfg.lambda_reg, cfg.alpha, cfg.gamma);
        iou[i][cell] = rwiou::candidate_iou(cfg.iou, gts[i].box, preds.boxes[cell], cfg.alpha);
      }
    }
  }

  std::vector<int> claimant(n_cells, -1);
  for (std::size_t cell = 0; cell < n_cells; ++cell) {
    for (std::size_t i = 0; i < n_gt; ++i) {
      if (!in_region[i][cell]) continue;
      if (claimant[cell] < 0 || cost[i][cell] < cost[claimant[cell]][cell]) {
        claimant[cell] = static_cast<int>(i);
      }
    }
  }

  rwiou::AssignmentResult out;
  out.grid = grid;
  out.n_classes = n_cls;
  out.owner.assign(n_cells, -1);
  out.heatmap.assign(n_cells * n_cls, 0.0);
  for (std::size_t i = 0; i < n_gt; ++i) {
    rwiou::GtAssignment ga;
    ga.center = centers[i];
    std::vector<double> region_ious;
    std::vector<std::size_t> claimed;
    for (std::size_t cell = 0; cell < n_cells; ++cell) {
      if (!in_region[i][cell]) continue;
      region_ious.push_back(iou[i][cell]);
      if (claimant[cell] == static_cast<int>(i)) claimed.push_back(cell);
    }
    ga.region_size = region_ious.size();
    ga.k_dynamic = count_k(region_ious);
    ga.unassigned = claimed.empty();
    const std::size_t k = std::min<std::size_t>(ga.k_dynamic, claimed.size());
    std::vector<bool> taken(claimed.size(), false);
    for (std::size_t pick = 0; pick < k; ++pick) {
      std::size_t best = claimed.size();
      for (std::size_t j = 0; j < claimed.size(); ++j) {
        if (taken[j]) continue;
        if (best == claimed.size() || cost[i][claimed[j]] < cost[i][claimed[best]]) best = j;
      }
      taken[best] = true;
      const std::size_t cell = claimed[best];
      ga.positives.push_back(CellIndex::from_flat(grid, cell));
      out.owner[cell] = static_cast<int>(i);
    }
    out.per_gt.push_back(ga);
  }

  for (std::size_t cell = 0; cell < n_cells; ++cell) {
    for (int cls = 0; cls < n_cls; ++cls) {
      double w = 0.0;
      if (out.owner[cell] >= 0 && gts[out.owner[cell]].class_id == cls) {
        w = 1.0;
      } else {
        for (std::size_t i = 0; i < n_gt; ++i) {
          if (in_region[i][cell] && gts[i].class_id == cls) w = std::max(w, iou[i][cell]);
        }
      }
      out.heatmap[cell * n_cls + cls] = w;
    }
  }
  return out;
}

}  // namespace oracle
