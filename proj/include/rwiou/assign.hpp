#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rwiou/box.hpp"
#include "rwiou/geometry.hpp"
#include "rwiou/grid.hpp"
#include "rwiou/reduce.hpp"
#include "rwiou/sample_loss.hpp"

namespace rwiou {

struct GroundTruth {
  Box3D box;
  int class_id = 0;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

// Dense per-cell predictions: class-agnostic boxes, per-class scores and an
// IoU-confidence channel. All vectors are row-major over the grid.
struct PredictionMap {
  GridSpec grid;
  int n_classes = 1;
  std::vector<BoxParams8> boxes;
  std::vector<double> scores;    // n_cells * n_classes
  std::vector<double> iou_conf;  // n_cells

  static PredictionMap filled(const GridSpec& grid, int n_classes, const BoxParams8& box,
                              double score) {
    grid.validate();
    if (n_classes < 1) throw std::invalid_argument("prediction map needs >= 1 class");
    PredictionMap m;
    m.grid = grid;
    m.n_classes = n_classes;
    m.boxes.assign(grid.n_cells(), box);
    m.scores.assign(grid.n_cells() * n_classes, score);
    m.iou_conf.assign(grid.n_cells(), 0.0);
    return m;
  }

  double score(std::size_t cell, int cls) const { return scores[cell * n_classes + cls]; }
  double& score(std::size_t cell, int cls) { return scores[cell * n_classes + cls]; }

  void validate() const {
    grid.validate();
    if (n_classes < 1) throw std::invalid_argument("prediction map needs >= 1 class");
    if (boxes.size() != grid.n_cells() || iou_conf.size() != grid.n_cells() ||
        scores.size() != grid.n_cells() * n_classes) {
      throw std::invalid_argument("prediction map dimensions do not match the grid");
    }
    for (double s : scores) {
      if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("scores must lie in [0, 1]");
    }
  }
};

enum class IouKind { kRotatedExact, kRwiou, kAxisAligned };

// IoU between a ground truth and a predicted box, under the chosen variant.
inline double candidate_iou(IouKind kind, const Box3D& gt, const BoxParams8& pred, double alpha) {
  switch (kind) {
    case IouKind::kRotatedExact:
      return rotated_iou_exact(gt, pred.to_box());
    case IouKind::kRwiou:
      return rwiou_params(pred, BoxParams8::from_box(gt), alpha);
    case IouKind::kAxisAligned:
      return axis_aligned_iou(gt, pred.to_box());
  }
  return 0.0;
}

struct AssignConfig {
  int r = 1;
  double lambda_reg = 3.0;
  double alpha = 0.5;
  double gamma = 2.0;
  IouKind iou = IouKind::kRotatedExact;

  void validate() const {
    if (r < 0) throw std::invalid_argument("r must be nonnegative");
    if (!(lambda_reg > 0.0)) throw std::invalid_argument("lambda_reg must be positive");
    check_alpha(alpha);
    if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be nonnegative");
  }
};

// c_j = L_cls + lambda_reg * L_reg for one candidate cell. The
// classification part scores the gt's class channel against target 1, the
// weight the cell receives if it is selected.
inline double selection_cost(const GroundTruth& gt, const BoxParams8& pred_box, double pred_score,
                             double lambda_reg, double alpha, double gamma = 2.0) {
  if (!(lambda_reg > 0.0)) throw std::invalid_argument("lambda_reg must be positive");
  const double cls = focal_term(pred_score, 1.0, gamma);
  const double reg = regression_loss_sample(pred_box, BoxParams8::from_box(gt.box), alpha);
  return cls + lambda_reg * reg;
}

// k = max(floor(sum IoU), 1), capped at the candidate count.
inline int dynamic_k_from_ious(std::span<const double> ious) {
  const double total = pairwise_sum(ious);
  int k = std::max(static_cast<int>(std::floor(total)), 1);
  if (!ious.empty()) k = std::min(k, static_cast<int>(ious.size()));
  return k;
}

inline int dynamic_k(const GroundTruth& gt, std::span<const BoxParams8> candidates,
                     IouKind kind = IouKind::kRotatedExact, double alpha = 0.5) {
  std::vector<double> ious;
  ious.reserve(candidates.size());
  for (const BoxParams8& b : candidates) ious.push_back(candidate_iou(kind, gt.box, b, alpha));
  return dynamic_k_from_ious(ious);
}

struct GtAssignment {
  CellIndex center;
  std::size_t region_size = 0;
  int k_dynamic = 0;                // from the whole cross region, before conflicts
  std::vector<CellIndex> positives;  // ascending cost
  bool unassigned = false;           // every region cell claimed by other gts

  int k() const { return static_cast<int>(positives.size()); }

  friend bool operator==(const GtAssignment&, const GtAssignment&) = default;
};

struct AssignmentResult {
  GridSpec grid;
  int n_classes = 1;
  std::vector<GtAssignment> per_gt;
  std::vector<int> owner;       // per cell; -1 when negative
  std::vector<double> heatmap;  // n_cells * n_classes

  static constexpr int kNoOwner = -1;

  std::size_t num_positives() const {
    std::size_t n = 0;
    for (const GtAssignment& g : per_gt) n += g.positives.size();
    return n;
  }

  double weight(std::size_t cell, int cls) const { return heatmap[cell * n_classes + cls]; }

  friend bool operator==(const AssignmentResult&, const AssignmentResult&) = default;
};

inline void check_gts(const GridSpec& grid, std::span<const GroundTruth> gts, int n_classes) {
  for (std::size_t i = 0; i < gts.size(); ++i) {
    gts[i].box.validate();
    if (!grid.contains(gts[i].box.x, gts[i].box.y)) {
      throw std::out_of_range("ground truth " + std::to_string(i) + " has its center off-grid");
    }
    if (gts[i].class_id < 0 || gts[i].class_id >= n_classes) {
      throw std::out_of_range("ground truth " + std::to_string(i) + " has an unknown class id");
    }
  }
}

// Dynamic cross label assignment.
//
// Per gt: cross region of radius r around the center cell, selection cost
// and IoU for every region cell, and dynamic k from the region's IoUs.
// A cell inside several regions is claimed by the gt with the lowest cost
// there (lower index on ties). Each gt then takes its k cheapest claimed
// cells (row-major order on ties); k is capped at the claimed count and a
// gt never backfills cells it lost.
//
// Heatmap: 1 on the owner's class at positives; elsewhere inside a cross
// region, the IoU with that region's gt on its class (max over gts);
// 0 outside all regions.
inline AssignmentResult assign_dcla(const GridSpec& grid, std::span<const GroundTruth> gts,
                                    const PredictionMap& preds, const AssignConfig& cfg) {
  cfg.validate();
  preds.validate();
  if (!(preds.grid == grid)) throw std::invalid_argument("prediction map grid mismatch");
  check_gts(grid, gts, preds.n_classes);

  struct Candidate {
    std::size_t cell;
    double cost;
    double iou;
  };

  const std::size_t n_cells = grid.n_cells();
  AssignmentResult out;
  out.grid = grid;
  out.n_classes = preds.n_classes;
  out.per_gt.resize(gts.size());
  out.owner.assign(n_cells, AssignmentResult::kNoOwner);
  out.heatmap.assign(n_cells * preds.n_classes, 0.0);

  std::vector<std::vector<Candidate>> candidates(gts.size());
  std::vector<double> claim_cost(n_cells, std::numeric_limits<double>::infinity());
  std::vector<int> claim_gt(n_cells, AssignmentResult::kNoOwner);

  for (std::size_t i = 0; i < gts.size(); ++i) {
    const GroundTruth& gt = gts[i];
    GtAssignment& ga = out.per_gt[i];
    ga.center = world_to_cell(grid, gt.box.x, gt.box.y);
    const std::vector<CellIndex> region = cross_region(grid, ga.center, cfg.r);
    ga.region_size = region.size();
    std::vector<double> ious;
    ious.reserve(region.size());
    for (const CellIndex& c : region) {
      const std::size_t cell = c.flat(grid);
      const BoxParams8& box = preds.boxes[cell];
      const double cost = selection_cost(gt, box, preds.score(cell, gt.class_id), cfg.lambda_reg,
                                         cfg.alpha, cfg.gamma);
      const double iou = candidate_iou(cfg.iou, gt.box, box, cfg.alpha);
      candidates[i].push_back({cell, cost, iou});
      ious.push_back(iou);
      if (cost < claim_cost[cell]) {
        claim_cost[cell] = cost;
        claim_gt[cell] = static_cast<int>(i);
      }
    }
    ga.k_dynamic = dynamic_k_from_ious(ious);
  }

  for (std::size_t i = 0; i < gts.size(); ++i) {
    std::vector<Candidate> claimed;
    for (const Candidate& c : candidates[i]) {
      if (claim_gt[c.cell] == static_cast<int>(i)) claimed.push_back(c);
    }
    GtAssignment& ga = out.per_gt[i];
    if (claimed.empty()) {
      ga.unassigned = true;
      continue;
    }
    // Region cells are already row-major, so a stable sort breaks ties by it.
    std::stable_sort(claimed.begin(), claimed.end(),
                     [](const Candidate& a, const Candidate& b) { return a.cost < b.cost; });
    const std::size_t k = std::min<std::size_t>(ga.k_dynamic, claimed.size());
    for (std::size_t j = 0; j < k; ++j) {
      ga.positives.push_back(CellIndex::from_flat(grid, claimed[j].cell));
      out.owner[claimed[j].cell] = static_cast<int>(i);
    }
  }

  for (std::size_t i = 0; i < gts.size(); ++i) {
    const int cls = gts[i].class_id;
    for (const Candidate& c : candidates[i]) {
      double& w = out.heatmap[c.cell * preds.n_classes + cls];
      w = std::max(w, c.iou);
    }
  }
  for (std::size_t cell = 0; cell < n_cells; ++cell) {
    if (out.owner[cell] != AssignmentResult::kNoOwner) {
      out.heatmap[cell * preds.n_classes + gts[out.owner[cell]].class_id] = 1.0;
    }
  }
  return out;
}

// Center-based baseline: only the center cell can be positive.
inline AssignmentResult assign_center(const GridSpec& grid, std::span<const GroundTruth> gts,
                                      const PredictionMap& preds, AssignConfig cfg = {}) {
  cfg.r = 0;
  return assign_dcla(grid, gts, preds, cfg);
}

}  // namespace rwiou
