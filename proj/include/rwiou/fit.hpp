#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rwiou/assign.hpp"
#include "rwiou/geometry.hpp"
#include "rwiou/grid.hpp"
#include "rwiou/loss.hpp"
#include "rwiou/reduce.hpp"
#include "rwiou/rng.hpp"
#include "rwiou/sample_loss.hpp"

namespace rwiou {

struct SizeClass {
  std::string name;
  std::array<double, 3> mean{1.0, 1.0, 1.0};    // l, w, h
  std::array<double, 3> spread{0.0, 0.0, 0.0};  // uniform half-width per axis
};

// Vehicle / pedestrian / cyclist scales.
inline std::vector<SizeClass> default_size_classes() {
  return {{"vehicle", {4.7, 2.1, 1.7}, {0.4, 0.15, 0.15}},
          {"pedestrian", {0.9, 0.85, 1.75}, {0.1, 0.08, 0.1}},
          {"cyclist", {1.8, 0.85, 1.75}, {0.15, 0.08, 0.1}}};
}

struct SceneConfig {
  GridSpec grid{-16.0, -16.0, 0.5, 64, 64};
  int n_objects = 8;
  std::vector<SizeClass> size_classes = default_size_classes();
  std::uint64_t seed = 0;
  double margin = 2.0;  // keep centers this far inside the grid edge
};

struct Scene {
  GridSpec grid;
  int n_classes = 1;
  std::vector<std::string> class_names;
  std::vector<GroundTruth> gts;
};

class SceneError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace fit_detail {

// Iterates x -> f(x) until it is a bit-exact fixed point. Scene values are
// snapped this way so the harness's encodings (sin/cos -> atan2 for yaw,
// log -> exp for sizes) decode a gt back to the identical box.
template <typename F>
bool snap_to_fixed_point(double raw, F&& f, double& out) {
  double v = f(raw);
  for (int i = 0; i < 4; ++i) {
    const double next = f(v);
    if (next == v) {
      out = v;
      return true;
    }
    v = next;
  }
  return false;
}

inline double yaw_round_trip(double yaw) { return std::atan2(std::sin(yaw), std::cos(yaw)); }
inline double size_round_trip(double size) { return std::exp(std::log(size)); }

inline std::string describe(const SceneConfig& cfg) {
  std::ostringstream os;
  os << "n_objects=" << cfg.n_objects << " grid=" << cfg.grid.n_rows << "x" << cfg.grid.n_cols
     << " cell_size=" << cfg.grid.cell_size << " margin=" << cfg.margin << " seed=" << cfg.seed;
  return os.str();
}

}  // namespace fit_detail

// Rejection-samples non-overlapping boxes (zero BEV intersection, distinct
// center cells). Deterministic in cfg.seed.
inline Scene generate_scene(const SceneConfig& cfg) {
  constexpr int kMaxAttempts = 10'000;
  cfg.grid.validate();
  if (cfg.n_objects < 0) throw std::invalid_argument("n_objects must be nonnegative");
  if (cfg.n_objects > 0 && cfg.size_classes.empty()) {
    throw std::invalid_argument("scene needs at least one size class");
  }
  const double x_lo = cfg.grid.x_min + cfg.margin;
  const double x_hi = cfg.grid.x_max() - cfg.margin;
  const double y_lo = cfg.grid.y_min + cfg.margin;
  const double y_hi = cfg.grid.y_max() - cfg.margin;
  if (cfg.n_objects > 0 && (x_lo >= x_hi || y_lo >= y_hi)) {
    throw SceneError("placement infeasible (margin exceeds grid): " + fit_detail::describe(cfg));
  }

  Scene scene;
  scene.grid = cfg.grid;
  scene.n_classes = std::max<int>(1, static_cast<int>(cfg.size_classes.size()));
  for (const SizeClass& sc : cfg.size_classes) scene.class_names.push_back(sc.name);

  Rng rng(cfg.seed);
  std::vector<CellIndex> used_cells;
  int attempts = 0;
  while (static_cast<int>(scene.gts.size()) < cfg.n_objects) {
    if (++attempts > kMaxAttempts) {
      throw SceneError("placement infeasible after 10000 attempts: " + fit_detail::describe(cfg));
    }
    const int cls = static_cast<int>(rng.below(cfg.size_classes.size()));
    const SizeClass& sc = cfg.size_classes[cls];
    std::array<double, 3> size{};
    bool snapped = true;
    for (std::size_t k = 0; k < 3; ++k) {
      const double raw = std::max(0.05, sc.mean[k] + sc.spread[k] * rng.uniform(-1.0, 1.0));
      snapped = fit_detail::snap_to_fixed_point(raw, fit_detail::size_round_trip, size[k]) &&
                snapped;
    }
    const double x = rng.uniform(x_lo, x_hi);
    const double y = rng.uniform(y_lo, y_hi);
    double yaw = 0.0;
    snapped = fit_detail::snap_to_fixed_point(rng.uniform(0.0, 2.0 * std::numbers::pi),
                                              fit_detail::yaw_round_trip, yaw) &&
              snapped;
    if (!snapped) continue;
    const Box3D box(x, y, size[2] / 2, size[0], size[1], size[2], yaw);
    const CellIndex cell = world_to_cell(cfg.grid, x, y);
    bool ok = std::find(used_cells.begin(), used_cells.end(), cell) == used_cells.end();
    for (std::size_t i = 0; ok && i < scene.gts.size(); ++i) {
      ok = bev_intersection_area(box, scene.gts[i].box) == 0.0;
    }
    if (!ok) continue;
    used_cells.push_back(cell);
    scene.gts.push_back({box, cls});
  }
  return scene;
}

// ---------------------------------------------------------------------------

enum class InitKind { kNoisy, kExact, kRandom };
enum class AssignerKind { kDcla, kCenter };
enum class RegressionKind { kRwiou, kSmoothL1 };

struct InitConfig {
  InitKind kind = InitKind::kNoisy;
  double sigma_pos = 0.3;       // meters
  double sigma_yaw = 0.2;       // radians
  double sigma_log_size = 0.1;  // log-space size noise
  double score_logit = -2.0;
};

struct FitConfig {
  LossWeights weights;
  AssignerKind assigner = AssignerKind::kDcla;
  int r = 1;
  IouKind iou = IouKind::kRotatedExact;
  double gamma = 2.0;
  RegressionKind regression = RegressionKind::kRwiou;
  double step_size = 0.05;
  int n_steps = 500;
  InitConfig init;
  double divergence_threshold = 1e3;

  AssignConfig assign_config() const {
    AssignConfig a;
    a.r = assigner == AssignerKind::kCenter ? 0 : r;
    a.lambda_reg = weights.lambda_reg > 0.0 ? weights.lambda_reg : 3.0;
    a.alpha = weights.alpha;
    a.gamma = gamma;
    a.iou = iou;
    return a;
  }

  void validate() const {
    weights.validate();
    assign_config().validate();
    if (!(step_size > 0.0)) throw std::invalid_argument("step_size must be positive");
    if (n_steps < 0) throw std::invalid_argument("n_steps must be nonnegative");
  }
};

// Per-cell optimization variables. Sizes are stored as logs so decoded
// sizes stay positive; scores are logits.
struct TrainState {
  GridSpec grid;
  int n_classes = 1;
  std::vector<std::array<double, 8>> params;  // x, y, z, log l, log w, log h, s, c
  std::vector<double> logits;                 // n_cells * n_classes
  std::vector<double> iou_conf;
  int step = 0;
  std::uint64_t seed = 0;

  static double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

  BoxParams8 box(std::size_t cell) const {
    const auto& p = params[cell];
    return {p[0], p[1], p[2], std::exp(p[3]), std::exp(p[4]), std::exp(p[5]), p[6], p[7]};
  }

  PredictionMap decode() const {
    PredictionMap m;
    m.grid = grid;
    m.n_classes = n_classes;
    m.boxes.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) m.boxes.push_back(box(i));
    m.scores.reserve(logits.size());
    for (double z : logits) m.scores.push_back(sigmoid(z));
    m.iou_conf = iou_conf;
    return m;
  }

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

namespace fit_detail {

inline std::array<double, 8> encode(const BoxParams8& b) {
  return {b.x, b.y, b.z, std::log(b.l), std::log(b.w), std::log(b.h), b.s, b.c};
}

inline std::size_t nearest_gt(const Scene& scene, double x, double y) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scene.gts.size(); ++i) {
    const double dx = scene.gts[i].box.x - x;
    const double dy = scene.gts[i].box.y - y;
    const double d = dx * dx + dy * dy;
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

// First cell whose parameters no longer decode to a valid box.
inline std::optional<std::size_t> first_invalid_cell(const TrainState& st) {
  for (std::size_t cell = 0; cell < st.params.size(); ++cell) {
    const auto& p = st.params[cell];
    bool ok = std::all_of(p.begin(), p.end(), [](double x) { return std::isfinite(x); });
    for (std::size_t k = 3; ok && k < 6; ++k) {
      const double size = std::exp(p[k]);
      ok = std::isfinite(size) && size > 0.0;
    }
    if (!ok) return cell;
  }
  return std::nullopt;
}

inline double logit_of(double q) {
  if (q <= 0.0) return -std::numeric_limits<double>::infinity();
  if (q >= 1.0) return std::numeric_limits<double>::infinity();
  return std::log(q / (1.0 - q));
}

}  // namespace fit_detail

// Every cell starts from the box of its nearest gt (plus noise for
// kNoisy). kExact additionally sets scores to the heatmap targets
// (+-infinite logits for 0/1) and IoU confidences to 1, so the whole loss
// is exactly 0 at step 0.
inline TrainState init_state(const Scene& scene, const FitConfig& cfg, std::uint64_t seed) {
  TrainState st;
  st.grid = scene.grid;
  st.n_classes = scene.n_classes;
  st.seed = seed;
  const std::size_t n_cells = scene.grid.n_cells();
  st.params.resize(n_cells);
  st.logits.assign(n_cells * scene.n_classes, cfg.init.score_logit);
  st.iou_conf.assign(n_cells, 0.0);

  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t cell = 0; cell < n_cells; ++cell) {
    const CellIndex ci = CellIndex::from_flat(scene.grid, cell);
    const double cx = cell_center_x(scene.grid, ci);
    const double cy = cell_center_y(scene.grid, ci);
    if (scene.gts.empty() || cfg.init.kind == InitKind::kRandom) {
      const double yaw = rng.uniform(0.0, 2.0 * std::numbers::pi);
      st.params[cell] = {cx, cy, 0.8, std::log(rng.uniform(0.8, 4.0)),
                         std::log(rng.uniform(0.6, 2.0)), std::log(rng.uniform(1.0, 2.0)),
                         std::sin(yaw), std::cos(yaw)};
      continue;
    }
    const Box3D& gt = scene.gts[fit_detail::nearest_gt(scene, cx, cy)].box;
    auto p = fit_detail::encode(BoxParams8::from_box(gt));
    if (cfg.init.kind == InitKind::kNoisy) {
      p[0] += rng.normal(0.0, cfg.init.sigma_pos);
      p[1] += rng.normal(0.0, cfg.init.sigma_pos);
      p[2] += rng.normal(0.0, cfg.init.sigma_pos);
      for (std::size_t k = 3; k < 6; ++k) p[k] += rng.normal(0.0, cfg.init.sigma_log_size);
      const double yaw = gt.theta + rng.normal(0.0, cfg.init.sigma_yaw);
      p[6] = std::sin(yaw);
      p[7] = std::cos(yaw);
    }
    st.params[cell] = p;
  }

  if (cfg.init.kind == InitKind::kExact) {
    PredictionMap provisional = st.decode();
    std::fill(provisional.scores.begin(), provisional.scores.end(), 1.0);
    const AssignmentResult a = assign_dcla(scene.grid, scene.gts, provisional, cfg.assign_config());
    for (std::size_t j = 0; j < st.logits.size(); ++j) {
      st.logits[j] = fit_detail::logit_of(a.heatmap[j]);
    }
    std::fill(st.iou_conf.begin(), st.iou_conf.end(), 1.0);
  }
  return st;
}

// Smooth-L1 over parameter residuals (dx, dy, dz, log size ratios, ds, dc).
inline std::pair<double, Grad8> smooth_l1_param_loss(const BoxParams8& pred,
                                                     const BoxParams8& target) {
  const std::array<double, 8> r{pred.x - target.x,           pred.y - target.y,
                                pred.z - target.z,           std::log(pred.l / target.l),
                                std::log(pred.w / target.w), std::log(pred.h / target.h),
                                pred.s - target.s,           pred.c - target.c};
  std::array<double, 8> terms{};
  std::array<double, 8> g{};
  for (std::size_t k = 0; k < 8; ++k) {
    terms[k] = smooth_l1(r[k]);
    g[k] = smooth_l1_grad(r[k]);
  }
  g[3] /= pred.l;
  g[4] /= pred.w;
  g[5] /= pred.h;
  return {pairwise_sum(terms), Grad8::from_array(g)};
}

// ---------------------------------------------------------------------------

struct TrajectoryRow {
  int step = 0;
  double l_cls = 0.0;
  double l_reg = 0.0;
  double l_iou = 0.0;
  double total = 0.0;
  double mean_true_iou = 0.0;

  friend bool operator==(const TrajectoryRow&, const TrajectoryRow&) = default;
};

struct ClassStats {
  int class_id = 0;
  std::string name;
  std::size_t n_gts = 0;
  double mean_k = 0.0;

  friend bool operator==(const ClassStats&, const ClassStats&) = default;
};

struct ExperimentReport {
  std::uint64_t seed = 0;
  std::vector<TrajectoryRow> trajectory;
  std::vector<double> per_gt_iou;
  double mean_true_iou = 0.0;
  double min_true_iou = 0.0;
  std::vector<ClassStats> per_class;
  LossReport final_loss;
  bool diverged = false;
  std::string diagnostic;
  double wall_clock_s = 0.0;  // excluded from equality

  // Everything except wall-clock time.
  bool same_result(const ExperimentReport& o) const {
    return seed == o.seed && trajectory == o.trajectory && per_gt_iou == o.per_gt_iou &&
           mean_true_iou == o.mean_true_iou && min_true_iou == o.min_true_iou &&
           per_class == o.per_class && final_loss == o.final_loss && diverged == o.diverged &&
           diagnostic == o.diagnostic;
  }
};

struct StepEvaluation {
  AssignmentResult assignment;
  LossReport loss;
  ScalarLoss cls;
  RegressionLoss reg;
  ScalarLoss iou;
  std::vector<double> per_gt_iou;
};

// Per gt: mean exact IoU over its positives, or of its center-cell
// prediction when it has none.
inline std::vector<double> per_gt_true_iou(const Scene& scene, const PredictionMap& preds,
                                           const AssignmentResult& a) {
  std::vector<double> out;
  for (std::size_t i = 0; i < scene.gts.size(); ++i) {
    const Box3D& gt = scene.gts[i].box;
    const GtAssignment& ga = a.per_gt[i];
    std::vector<double> ious;
    if (ga.positives.empty()) {
      ious.push_back(rotated_iou_exact(gt, preds.boxes[ga.center.flat(scene.grid)].to_box()));
    }
    for (const CellIndex& c : ga.positives) {
      ious.push_back(rotated_iou_exact(gt, preds.boxes[c.flat(scene.grid)].to_box()));
    }
    out.push_back(pairwise_sum(ious) / static_cast<double>(ious.size()));
  }
  return out;
}

inline StepEvaluation evaluate_step(const Scene& scene, const PredictionMap& preds,
                                    const FitConfig& cfg) {
  StepEvaluation ev;
  ev.assignment = assign_dcla(scene.grid, scene.gts, preds, cfg.assign_config());
  ev.cls = classification_loss(ev.assignment, preds, cfg.gamma);
  const double alpha = cfg.weights.alpha;
  if (cfg.regression == RegressionKind::kRwiou) {
    // Exact s/c equality sits on the |.| kink; the harness uses 0 there.
    ev.reg = regression_loss_scene(
        ev.assignment, preds, scene.gts, [alpha](const BoxParams8& p, const BoxParams8& t) {
          Grad8 g = regression_loss_sample_grad(p, t, alpha);
          if (p.s == t.s) g.d_s = 0.0;
          if (p.c == t.c) g.d_c = 0.0;
          return std::pair{regression_loss_sample(p, t, alpha), g};
        });
  } else {
    ev.reg = regression_loss_scene(ev.assignment, preds, scene.gts,
                                   [](const BoxParams8& p, const BoxParams8& t) {
                                     return smooth_l1_param_loss(p, t);
                                   });
  }
  ev.iou = iou_prediction_loss(ev.assignment, preds, scene.gts);
  ev.loss = total_loss(ev.cls.value, ev.reg.value, ev.iou.value, cfg.weights,
                       ev.reg.n_positives, ev.reg.per_gt);
  ev.per_gt_iou = per_gt_true_iou(scene, preds, ev.assignment);
  return ev;
}

inline void apply_gradients(TrainState& st, const PredictionMap& preds, const StepEvaluation& ev,
                            const FitConfig& cfg) {
  const double lr = cfg.step_size;
  const LossWeights& w = cfg.weights;
  for (std::size_t cell = 0; cell < st.params.size(); ++cell) {
    const Grad8& g = ev.reg.grad[cell];
    if (g == Grad8{}) continue;
    const BoxParams8& b = preds.boxes[cell];
    auto& p = st.params[cell];
    const std::array<double, 8> d{g.d_x, g.d_y, g.d_z, g.d_l * b.l, g.d_w * b.w,
                                  g.d_h * b.h, g.d_s, g.d_c};
    for (std::size_t k = 0; k < 8; ++k) p[k] -= lr * w.lambda_reg * d[k];
  }
  for (std::size_t j = 0; j < st.logits.size(); ++j) {
    const double p = preds.scores[j];
    const double d = ev.cls.grad[j] * p * (1.0 - p);
    if (d != 0.0) st.logits[j] -= lr * w.lambda_cls * d;
  }
  for (std::size_t cell = 0; cell < st.iou_conf.size(); ++cell) {
    if (ev.iou.grad[cell] == 0.0) continue;
    st.iou_conf[cell] =
        std::clamp(st.iou_conf[cell] - lr * w.lambda_iou * ev.iou.grad[cell], -1.0, 1.0);
  }
  ++st.step;
}

inline std::vector<ClassStats> class_stats(const Scene& scene, const AssignmentResult& a) {
  std::vector<ClassStats> out;
  for (int c = 0; c < scene.n_classes; ++c) {
    ClassStats cs;
    cs.class_id = c;
    cs.name = c < static_cast<int>(scene.class_names.size()) ? scene.class_names[c] : "";
    std::vector<double> ks;
    for (std::size_t i = 0; i < scene.gts.size(); ++i) {
      if (scene.gts[i].class_id == c) ks.push_back(a.per_gt[i].k());
    }
    cs.n_gts = ks.size();
    cs.mean_k = ks.empty() ? 0.0 : pairwise_sum(ks) / static_cast<double>(ks.size());
    out.push_back(cs);
  }
  return out;
}

// Plain gradient descent on the full loss. The assignment is recomputed
// every step and treated as a constant within it.
inline ExperimentReport fit_scene(const Scene& scene, const FitConfig& cfg, std::uint64_t seed,
                                  TrainState* final_state = nullptr) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentReport report;
  report.seed = seed;
  TrainState st = init_state(scene, cfg, seed);

  StepEvaluation ev;
  PredictionMap preds;
  for (int step = 0;; ++step) {
    if (const auto bad = fit_detail::first_invalid_cell(st)) {
      // Overflowed parameters cannot be scored; record the step as divergent.
      constexpr double kInf = std::numeric_limits<double>::infinity();
      report.trajectory.push_back({step, kInf, kInf, kInf, kInf, 0.0});
      report.diverged = true;
      report.diagnostic = "diverged at step " + std::to_string(step) + ": cell " +
                          std::to_string(*bad) + " has non-finite box parameters";
      break;
    }
    preds = st.decode();
    ev = evaluate_step(scene, preds, cfg);
    const double mean_iou =
        ev.per_gt_iou.empty()
            ? 0.0
            : pairwise_sum(ev.per_gt_iou) / static_cast<double>(ev.per_gt_iou.size());
    report.trajectory.push_back(
        {step, ev.loss.l_cls, ev.loss.l_reg, ev.loss.l_iou, ev.loss.total, mean_iou});
    if (!(ev.loss.total <= cfg.divergence_threshold)) {
      report.diverged = true;
      std::ostringstream os;
      os << "diverged at step " << step << ": total loss " << ev.loss.total << " (l_cls "
         << ev.loss.l_cls << ", l_reg " << ev.loss.l_reg << ", l_iou " << ev.loss.l_iou
         << ") exceeds " << cfg.divergence_threshold;
      report.diagnostic = os.str();
      break;
    }
    if (step == cfg.n_steps) break;
    apply_gradients(st, preds, ev, cfg);
  }

  report.per_gt_iou = ev.per_gt_iou;
  if (!report.per_gt_iou.empty()) {
    report.mean_true_iou =
        pairwise_sum(report.per_gt_iou) / static_cast<double>(report.per_gt_iou.size());
    report.min_true_iou = *std::min_element(report.per_gt_iou.begin(), report.per_gt_iou.end());
  }
  report.per_class = class_stats(scene, ev.assignment);
  report.final_loss = ev.loss;
  report.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (final_state != nullptr) *final_state = std::move(st);
  return report;
}

// ---------------------------------------------------------------------------

struct BalanceReport {
  int r = 0;
  std::vector<ClassStats> per_class;  // pooled over all seeds
  double ratio = 1.0;                 // max / min class mean k over classes present
};

// Mean k per size class under DCLA after a warm-up fit of `fit.n_steps`
// steps, pooled across scenes generated from each seed.
inline BalanceReport balance_experiment(SceneConfig scene_cfg, int r, FitConfig fit,
                                        std::span<const std::uint64_t> seeds) {
  fit.assigner = AssignerKind::kDcla;
  fit.r = r;
  BalanceReport out;
  out.r = r;
  std::vector<std::vector<double>> ks(scene_cfg.size_classes.size());
  for (std::uint64_t seed : seeds) {
    scene_cfg.seed = seed;
    const Scene scene = generate_scene(scene_cfg);
    TrainState st;
    fit_scene(scene, fit, seed, &st);
    const AssignmentResult a =
        assign_dcla(scene.grid, scene.gts, st.decode(), fit.assign_config());
    for (std::size_t i = 0; i < scene.gts.size(); ++i) {
      ks[scene.gts[i].class_id].push_back(a.per_gt[i].k());
    }
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (std::size_t c = 0; c < ks.size(); ++c) {
    ClassStats cs;
    cs.class_id = static_cast<int>(c);
    cs.name = scene_cfg.size_classes[c].name;
    cs.n_gts = ks[c].size();
    if (!ks[c].empty()) {
      cs.mean_k = pairwise_sum(ks[c]) / static_cast<double>(ks[c].size());
      lo = std::min(lo, cs.mean_k);
      hi = std::max(hi, cs.mean_k);
    }
    out.per_class.push_back(cs);
  }
  out.ratio = hi > 0.0 ? hi / lo : 1.0;
  return out;
}

}  // namespace rwiou
