#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rwiou/assign.hpp"
#include "rwiou/grad.hpp"
#include "rwiou/reduce.hpp"
#include "rwiou/sample_loss.hpp"

namespace rwiou {

struct LossWeights {
  double lambda_cls = 1.0;
  double lambda_reg = 3.0;
  double lambda_iou = 1.0;
  double alpha = 0.5;

  void validate() const {
    if (!(lambda_cls >= 0.0) || !(lambda_reg >= 0.0) || !(lambda_iou >= 0.0)) {
      throw std::invalid_argument("loss weights must be nonnegative");
    }
    check_alpha(alpha);
  }
};

struct GtLossBreakdown {
  std::size_t gt_index = 0;
  int k = 0;
  double mean_regression = 0.0;

  friend bool operator==(const GtLossBreakdown&, const GtLossBreakdown&) = default;
};

struct LossReport {
  double l_cls = 0.0;
  double l_reg = 0.0;
  double l_iou = 0.0;
  double total = 0.0;
  std::size_t n_positives = 0;
  std::vector<GtLossBreakdown> per_gt_breakdown;

  friend bool operator==(const LossReport&, const LossReport&) = default;
};

// Scalar loss plus its gradient w.r.t. a dense per-cell (or per-cell,
// per-class) channel.
struct ScalarLoss {
  double value = 0.0;
  std::vector<double> grad;
};

struct RegressionLoss {
  double value = 0.0;
  std::size_t n_positives = 0;
  bool degenerate = false;    // no positives at all; value defined as 0
  std::vector<Grad8> grad;    // per cell, already scaled by 1 / N
  std::vector<GtLossBreakdown> per_gt;
};

namespace loss_detail {

inline double normalizer(const AssignmentResult& a) {
  return static_cast<double>(std::max<std::size_t>(a.num_positives(), 1));
}

inline void check_shapes(const AssignmentResult& a, const PredictionMap& preds) {
  if (!(a.grid == preds.grid) || a.n_classes != preds.n_classes) {
    throw std::invalid_argument("assignment and prediction map shapes differ");
  }
}

}  // namespace loss_detail

// Mean of an arbitrary per-sample loss over every (gt, positive cell) pair. `sample` returns {value, Grad8} for one pair.
template <typename SampleFn>
RegressionLoss regression_loss_scene(const AssignmentResult& assignment,
                                     const PredictionMap& preds, std::span<const GroundTruth> gts,
                                     SampleFn&& sample) {
  loss_detail::check_shapes(assignment, preds);
  if (gts.size() != assignment.per_gt.size()) {
    throw std::invalid_argument("assignment was computed for a different gt list");
  }
  RegressionLoss out;
  out.grad.assign(preds.grid.n_cells(), Grad8{});
  out.n_positives = assignment.num_positives();
  out.degenerate = out.n_positives == 0;

  std::vector<double> values;
  values.reserve(out.n_positives);
  std::vector<std::pair<std::size_t, Grad8>> raw;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const BoxParams8 target = BoxParams8::from_box(gts[i].box);
    const auto& positives = assignment.per_gt[i].positives;
    std::vector<double> per_gt;
    for (const CellIndex& c : positives) {
      const std::size_t cell = c.flat(preds.grid);
      const auto [value, grad] = sample(preds.boxes[cell], target);
      values.push_back(value);
      per_gt.push_back(value);
      raw.emplace_back(cell, grad);
    }
    const double mean = per_gt.empty() ? 0.0 : pairwise_sum(per_gt) / per_gt.size();
    out.per_gt.push_back({i, static_cast<int>(positives.size()), mean});
  }
  if (out.degenerate) return out;
  const double n = static_cast<double>(out.n_positives);
  out.value = pairwise_sum(values) / n;
  for (const auto& [cell, grad] : raw) out.grad[cell] += (1.0 / n) * grad;
  return out;
}

inline RegressionLoss regression_loss_scene(const AssignmentResult& assignment,
                                            const PredictionMap& preds,
                                            std::span<const GroundTruth> gts, double alpha) {
  check_alpha(alpha);
  return regression_loss_scene(assignment, preds, gts,
                               [alpha](const BoxParams8& p, const BoxParams8& t) {
                                 return std::pair{regression_loss_sample(p, t, alpha),
                                                  regression_loss_sample_grad(p, t, alpha)};
                               });
}

// Quality-focal loss of every cell and class against the heatmap target,
// divided by max(N, 1). Gradient is w.r.t. the scores.
inline ScalarLoss classification_loss(const AssignmentResult& assignment,
                                      const PredictionMap& preds, double gamma = 2.0) {
  loss_detail::check_shapes(assignment, preds);
  if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be nonnegative");
  const double n = loss_detail::normalizer(assignment);
  std::vector<double> terms(preds.scores.size());
  ScalarLoss out;
  out.grad.resize(preds.scores.size());
  for (std::size_t j = 0; j < preds.scores.size(); ++j) {
    const double p = preds.scores[j];
    const double q = assignment.heatmap[j];
    terms[j] = focal_term(p, q, gamma);
    out.grad[j] = focal_term_grad(p, q, gamma) / n;
  }
  out.value = pairwise_sum(terms) / n;
  return out;
}

// Smooth-L1 between each positive's IoU confidence and 2 * IoU - 1, where
// IoU is the exact rotated IoU of its box with its gt (treated as a
// constant). Divided by max(N, 1); gradient is w.r.t. the confidences.
inline ScalarLoss iou_prediction_loss(const AssignmentResult& assignment,
                                      const PredictionMap& preds,
                                      std::span<const GroundTruth> gts) {
  loss_detail::check_shapes(assignment, preds);
  if (gts.size() != assignment.per_gt.size()) {
    throw std::invalid_argument("assignment was computed for a different gt list");
  }
  const double n = loss_detail::normalizer(assignment);
  ScalarLoss out;
  out.grad.assign(preds.grid.n_cells(), 0.0);
  std::vector<double> terms;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    for (const CellIndex& c : assignment.per_gt[i].positives) {
      const std::size_t cell = c.flat(preds.grid);
      const double target = 2.0 * rotated_iou_exact(gts[i].box, preds.boxes[cell].to_box()) - 1.0;
      const double residual = preds.iou_conf[cell] - target;
      terms.push_back(smooth_l1(residual));
      out.grad[cell] = smooth_l1_grad(residual) / n;
    }
  }
  out.value = pairwise_sum(terms) / n;
  return out;
}

inline LossReport total_loss(double l_cls, double l_reg, double l_iou, const LossWeights& weights,
                             std::size_t n_positives = 0,
                             std::vector<GtLossBreakdown> breakdown = {}) {
  weights.validate();
  LossReport r;
  r.l_cls = l_cls;
  r.l_reg = l_reg;
  r.l_iou = l_iou;
  r.total = weights.lambda_cls * l_cls + weights.lambda_reg * l_reg + weights.lambda_iou * l_iou;
  r.n_positives = n_positives;
  r.per_gt_breakdown = std::move(breakdown);
  return r;
}

}  // namespace rwiou
