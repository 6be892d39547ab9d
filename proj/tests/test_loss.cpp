#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "oracles/oracles.hpp"
#include "oracles/scenes.hpp"
#include "rwiou/audit.hpp"
#include "rwiou/loss.hpp"

namespace rwiou {
namespace {

// Single-cell scene with one gt and a perfect box prediction.
struct OneCell {
  GridSpec grid{0, 0, 4, 1, 1};
  std::vector<GroundTruth> gts{{Box3D(2, 2, 0, 2, 1, 1, 0.2), 0}};
  PredictionMap preds = PredictionMap::filled(grid, 1, BoxParams8::from_box(gts[0].box), 0.5);
  AssignmentResult assign() const { return assign_dcla(grid, gts, preds, AssignConfig{}); }
};

TEST(FocalTest, Values) {
  EXPECT_EQ(focal_term(0.3, 0.3, 2.0), 0.0);
  EXPECT_EQ(focal_term(1.0, 1.0, 2.0), 0.0);
  EXPECT_EQ(focal_term(0.0, 0.0, 2.0), 0.0);
  EXPECT_NEAR(focal_term(0.5, 1.0, 2.0), 0.25 * std::log(2.0), 1e-15);
  EXPECT_NEAR(focal_term(0.5, 1.0, 2.0), 0.17329, 1e-5);
  // gamma = 0 is weighted binary cross-entropy.
  EXPECT_NEAR(focal_term(0.3, 0.6, 0.0), -(0.6 * std::log(0.3) + 0.4 * std::log(0.7)), 1e-15);
  // The clamp keeps p = 0 against q = 1 finite.
  EXPECT_NEAR(focal_term(0.0, 1.0, 2.0), -std::log(kScoreEps), 1e-9);
}

TEST(FocalTest, GradientMatchesFiniteDifferences) {
  Rng rng(41);
  for (int i = 0; i < 5000; ++i) {
    const double p = rng.uniform(0.01, 0.99);
    const double q = rng.uniform() < 0.3 ? 1.0 : rng.uniform();
    const double gamma = rng.uniform() < 0.2 ? 0.0 : rng.uniform(0.5, 3.0);
    if (std::abs(p - q) < 1e-3) continue;
    const double h = 1e-7;
    const double numeric = (focal_term(p + h, q, gamma) - focal_term(p - h, q, gamma)) / (2 * h);
    const double analytic = focal_term_grad(p, q, gamma);
    ASSERT_NEAR(analytic, numeric, 1e-5 * std::max(1.0, std::abs(numeric)));
  }
}

TEST(SmoothL1Test, Values) {
  EXPECT_EQ(smooth_l1(0.0), 0.0);
  EXPECT_EQ(smooth_l1(-1.0), 0.5);
  EXPECT_EQ(smooth_l1(0.5), 0.125);
  EXPECT_EQ(smooth_l1(3.0), 2.5);
  EXPECT_EQ(smooth_l1_grad(0.5), 0.5);
  EXPECT_EQ(smooth_l1_grad(-3.0), -1.0);
}

TEST(ClassificationLossTest, SinglePositiveHalfScore) {
  const OneCell s;
  const AssignmentResult a = s.assign();
  ASSERT_EQ(a.num_positives(), 1u);
  const ScalarLoss l = classification_loss(a, s.preds);
  EXPECT_NEAR(l.value, 0.25 * std::log(2.0), 1e-15);
}

TEST(ClassificationLossTest, ZeroWhenScoresEqualTargets) {
  Rng rng(42);
  const oracle::AssignCase c = oracle::random_assign_case(rng, 12, 4);
  const AssignmentResult a = assign_dcla(c.grid, c.gts, c.preds, AssignConfig{});
  PredictionMap preds = c.preds;
  preds.scores = a.heatmap;
  EXPECT_EQ(classification_loss(a, preds).value, 0.0);
}

TEST(ClassificationLossTest, GradientMatchesFiniteDifferences) {
  Rng rng(43);
  for (int trial = 0; trial < 5; ++trial) {
    oracle::AssignCase c = oracle::random_assign_case(rng, 8, 3);
    for (double& s : c.preds.scores) s = rng.uniform(0.02, 0.98);
    const AssignmentResult a = assign_dcla(c.grid, c.gts, c.preds, AssignConfig{});
    const ScalarLoss l = classification_loss(a, c.preds);
    for (std::size_t j = 0; j < c.preds.scores.size(); j += 3) {
      if (std::abs(c.preds.scores[j] - a.heatmap[j]) < 1e-3) continue;
      PredictionMap plus = c.preds, minus = c.preds;
      const double h = 1e-7;
      plus.scores[j] += h;
      minus.scores[j] -= h;
      const double numeric =
          (classification_loss(a, plus).value - classification_loss(a, minus).value) / (2 * h);
      ASSERT_NEAR(l.grad[j], numeric, 1e-5 * std::max(1.0, std::abs(numeric)));
    }
  }
}

TEST(IouPredictionLossTest, Values) {
  OneCell s;
  s.preds.iou_conf[0] = 0.0;
  const AssignmentResult a = s.assign();
  EXPECT_EQ(iou_prediction_loss(a, s.preds, s.gts).value, 0.5);
  s.preds.iou_conf[0] = 1.0;
  EXPECT_EQ(iou_prediction_loss(a, s.preds, s.gts).value, 0.0);
  // IoU 0.5 maps to target 0: a nested box with half the length.
  s.preds.boxes[0].l = 1.0;
  s.preds.iou_conf[0] = 0.0;
  EXPECT_NEAR(iou_prediction_loss(a, s.preds, s.gts).value, 0.0, 1e-24);
}

TEST(RegressionLossTest, OnePerfectPositive) {
  const OneCell s;
  const RegressionLoss l = regression_loss_scene(s.assign(), s.preds, s.gts, 0.5);
  EXPECT_EQ(l.value, 0.0);
  EXPECT_EQ(l.n_positives, 1u);
  EXPECT_FALSE(l.degenerate);
}

AssignmentResult manual_assignment(const GridSpec& g, std::vector<std::vector<CellIndex>> pos) {
  AssignmentResult a;
  a.grid = g;
  a.n_classes = 1;
  a.owner.assign(g.n_cells(), AssignmentResult::kNoOwner);
  a.heatmap.assign(g.n_cells(), 0.0);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    GtAssignment ga;
    ga.positives = pos[i];
    ga.k_dynamic = static_cast<int>(pos[i].size());
    for (const CellIndex& c : pos[i]) a.owner[c.flat(g)] = static_cast<int>(i);
    a.per_gt.push_back(ga);
  }
  return a;
}

TEST(RegressionLossTest, MeanOverAllPositives) {
  const GridSpec g{0, 0, 1, 1, 4};
  const std::vector<GroundTruth> gts{{Box3D(0.5, 0.5, 0, 1, 1, 1, 0), 0},
                                     {Box3D(2.5, 0.5, 0, 1, 1, 1, 0), 0}};
  const AssignmentResult a = manual_assignment(g, {{{0, 0}}, {{0, 1}, {0, 2}, {0, 3}}});
  PredictionMap preds = PredictionMap::filled(g, 1, BoxParams8{}, 0.5);
  for (int col = 0; col < 4; ++col) preds.boxes[col].x = col;  // tag each cell
  const std::map<double, double> per_sample{{0, 0.4}, {1, 0.2}, {2, 0.2}, {3, 0.2}};
  const auto fixed = [&](const BoxParams8& p, const BoxParams8&) {
    return std::pair{per_sample.at(p.x), Grad8{}};
  };
  const auto doubled = [&](const BoxParams8& p, const BoxParams8&) {
    return std::pair{2 * per_sample.at(p.x), Grad8{}};
  };
  const RegressionLoss l = regression_loss_scene(a, preds, gts, fixed);
  EXPECT_NEAR(l.value, 0.25, 1e-15);
  EXPECT_EQ(l.n_positives, 4u);
  ASSERT_EQ(l.per_gt.size(), 2u);
  EXPECT_EQ(l.per_gt[0].k, 1);
  EXPECT_EQ(l.per_gt[1].k, 3);
  EXPECT_NEAR(l.per_gt[0].mean_regression, 0.4, 1e-15);
  EXPECT_NEAR(l.per_gt[1].mean_regression, 0.2, 1e-15);
  EXPECT_NEAR(regression_loss_scene(a, preds, gts, doubled).value, 0.5, 1e-15);
}

TEST(RegressionLossTest, NoPositivesIsDegenerate) {
  const GridSpec g{0, 0, 1, 2, 2};
  const RegressionLoss l = regression_loss_scene(
      manual_assignment(g, {}), PredictionMap::filled(g, 1, BoxParams8{}, 0.5), {}, 0.5);
  EXPECT_TRUE(l.degenerate);
  EXPECT_EQ(l.value, 0.0);
}

TEST(RegressionLossTest, RejectsMismatchedInputs) {
  const OneCell s;
  const AssignmentResult a = s.assign();
  EXPECT_THROW(regression_loss_scene(a, s.preds, {}, 0.5), std::invalid_argument);
  const PredictionMap other = PredictionMap::filled(GridSpec{0, 0, 1, 2, 2}, 1, BoxParams8{}, 0.5);
  EXPECT_THROW(regression_loss_scene(a, other, s.gts, 0.5), std::invalid_argument);
  EXPECT_THROW(classification_loss(a, other), std::invalid_argument);
  EXPECT_THROW(iou_prediction_loss(a, other, s.gts), std::invalid_argument);
}

TEST(RegressionLossTest, GradientMatchesFiniteDifferencesWithFixedAssignment) {
  Rng rng(44);
  int checked = 0;
  for (int trial = 0; trial < 40 && checked < 200; ++trial) {
    const oracle::AssignCase c = oracle::random_assign_case(rng, 10, 4);
    const AssignmentResult a = assign_dcla(c.grid, c.gts, c.preds, AssignConfig{});
    if (a.num_positives() == 0) continue;
    const RegressionLoss base = regression_loss_scene(a, c.preds, c.gts, 0.5);
    for (std::size_t i = 0; i < c.gts.size(); ++i) {
      for (const CellIndex& cell : a.per_gt[i].positives) {
        const std::size_t f = cell.flat(c.grid);
        if (!away_from_breakpoints(c.preds.boxes[f], BoxParams8::from_box(c.gts[i].box), 0.5,
                                   1e-4)) {
          continue;
        }
        ++checked;
        const auto numeric = oracle::fd_gradient(
            [&](const std::array<double, 8>& v) {
              PredictionMap p = c.preds;
              p.boxes[f] = BoxParams8::from_array(v);
              return regression_loss_scene(a, p, c.gts, 0.5).value;
            },
            c.preds.boxes[f].to_array());
        const auto analytic = base.grad[f].to_array();
        for (std::size_t k = 0; k < 8; ++k) {
          const double scale = std::max(std::abs(numeric[k]), std::abs(analytic[k]));
          ASSERT_LE(std::abs(numeric[k] - analytic[k]), std::max(1e-5 * scale, 1e-8)) << k;
        }
      }
    }
  }
  EXPECT_GT(checked, 50);
}

TEST(RegressionLossTest, InvariantUnderSceneDuplication) {
  Rng rng(45);
  int compared = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const oracle::AssignCase c = oracle::random_assign_case(rng, 16, 6);
    std::vector<GroundTruth> kept;
    const oracle::Duplicated d = oracle::duplicate(c, kept, 1);
    if (kept.empty()) continue;
    const AssignmentResult a1 = assign_dcla(c.grid, kept, c.preds, AssignConfig{});
    const AssignmentResult a2 = assign_dcla(d.grid, d.gts, d.preds, AssignConfig{});
    ASSERT_EQ(a2.num_positives(), 2 * a1.num_positives());
    const double l1 = regression_loss_scene(a1, c.preds, kept, 0.5).value;
    const double l2 = regression_loss_scene(a2, d.preds, d.gts, 0.5).value;
    ASSERT_NEAR(l2, l1, 1e-12);
    ASSERT_NEAR(iou_prediction_loss(a2, d.preds, d.gts).value,
                iou_prediction_loss(a1, c.preds, kept).value, 1e-12);
    ++compared;
  }
  EXPECT_GT(compared, 20);
}

TEST(TotalLossTest, Examples) {
  const LossWeights w;
  EXPECT_EQ(total_loss(0, 0, 0, w).total, 0.0);
  EXPECT_NEAR(total_loss(0.1, 0.2, 0.05, w).total, 0.75, 1e-15);
  LossWeights zero{0, 0, 0, 0.5};
  EXPECT_EQ(total_loss(0.1, 0.2, 0.05, zero).total, 0.0);
  LossWeights bad;
  bad.lambda_reg = -1;
  EXPECT_THROW(total_loss(0, 0, 0, bad), std::invalid_argument);
}

TEST(TotalLossTest, RecomposesFromComponents) {
  Rng rng(46);
  for (int i = 0; i < 10000; ++i) {
    const LossWeights w{rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform()};
    const LossReport r = total_loss(rng.uniform(0, 3), rng.uniform(0, 2), rng.uniform(0, 2), w);
    ASSERT_NEAR(r.total, w.lambda_cls * r.l_cls + w.lambda_reg * r.l_reg + w.lambda_iou * r.l_iou,
                1e-12);
  }
}

TEST(AllLossesTest, NonNegativeOnRandomScenes) {
  Rng rng(47);
  for (int trial = 0; trial < 40; ++trial) {
    const oracle::AssignCase c = oracle::random_assign_case(rng, 12, 5);
    const AssignmentResult a = assign_dcla(c.grid, c.gts, c.preds, AssignConfig{});
    ASSERT_GE(classification_loss(a, c.preds).value, 0.0);
    ASSERT_GE(regression_loss_scene(a, c.preds, c.gts, 0.5).value, 0.0);
    ASSERT_GE(iou_prediction_loss(a, c.preds, c.gts).value, 0.0);
  }
}

}  // namespace
}  // namespace rwiou
