#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rwiou/assign.hpp"
#include "rwiou/audit.hpp"
#include "rwiou/fit.hpp"
#include "rwiou/loss.hpp"

namespace rwiou::io {

using nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed,
                       std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

template <typename T>
T get_required(const json& j, const char* key, std::string_view where) {
  if (!j.contains(key)) {
    throw ConfigError("missing key '" + std::string(key) + "' in " + std::string(where));
  }
  return get_or<T>(j, key, T{});
}

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace detail

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("invalid JSON in '" + path + "': " + e.what());
  }
}

// --- primitives ------------------------------------------------------------

inline json to_json(const GridSpec& g) {
  return {{"x_min", g.x_min}, {"y_min", g.y_min}, {"cell_size", g.cell_size},
          {"n_rows", g.n_rows}, {"n_cols", g.n_cols}};
}

inline GridSpec grid_from_json(const json& j) {
  detail::check_keys(j, {"x_min", "y_min", "cell_size", "n_rows", "n_cols"}, "grid");
  GridSpec g;
  g.x_min = detail::get_required<double>(j, "x_min", "grid");
  g.y_min = detail::get_required<double>(j, "y_min", "grid");
  g.cell_size = detail::get_required<double>(j, "cell_size", "grid");
  g.n_rows = detail::get_required<int>(j, "n_rows", "grid");
  g.n_cols = detail::get_required<int>(j, "n_cols", "grid");
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return g;
}

inline json to_json(const Box3D& b) { return json::array({b.x, b.y, b.z, b.l, b.w, b.h, b.theta}); }

inline Box3D box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 7) {
    throw ConfigError("box must be an array [x, y, z, l, w, h, theta]");
  }
  try {
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>(),
            j[4].get<double>(), j[5].get<double>(), j[6].get<double>()};
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("box entries must be numbers: ") + e.what());
  }
}

inline json to_json(const BoxParams8& b) {
  return json::array({b.x, b.y, b.z, b.l, b.w, b.h, b.s, b.c});
}

inline json cell_json(const CellIndex& c) { return json::array({c.row, c.col}); }

// --- scene files -------------------------------------------------------------

struct SceneFile {
  Scene scene;
  PredictionMap predictions;
};

inline json scene_to_json(const Scene& scene) {
  json gts = json::array();
  for (const GroundTruth& gt : scene.gts) {
    gts.push_back({{"box", to_json(gt.box)}, {"class_id", gt.class_id}});
  }
  json out = {{"grid", to_json(scene.grid)}, {"gts", gts}};
  if (!scene.class_names.empty()) {
    out["classes"] = scene.class_names;
  } else {
    out["n_classes"] = scene.n_classes;
  }
  return out;
}

inline InitConfig init_from_json(const json& j) {
  detail::check_keys(j, {"kind", "sigma_pos", "sigma_yaw", "sigma_log_size", "score_logit"},
                     "init");
  InitConfig c;
  const std::string kind = detail::get_or<std::string>(j, "kind", "noisy");
  if (kind == "noisy") {
    c.kind = InitKind::kNoisy;
  } else if (kind == "exact") {
    c.kind = InitKind::kExact;
  } else if (kind == "random") {
    c.kind = InitKind::kRandom;
  } else {
    throw ConfigError("init.kind must be one of noisy, exact, random");
  }
  c.sigma_pos = detail::get_or(j, "sigma_pos", c.sigma_pos);
  c.sigma_yaw = detail::get_or(j, "sigma_yaw", c.sigma_yaw);
  c.sigma_log_size = detail::get_or(j, "sigma_log_size", c.sigma_log_size);
  c.score_logit = detail::get_or(j, "score_logit", c.score_logit);
  return c;
}

inline PredictionMap predictions_from_json(const json& j, const GridSpec& grid, int n_classes) {
  detail::check_keys(j, {"boxes", "scores", "iou_conf"}, "predictions");
  PredictionMap m = PredictionMap::filled(grid, n_classes, BoxParams8{}, 0.0);
  const json& boxes = j.at("boxes");
  const json& scores = j.at("scores");
  if (!boxes.is_array() || boxes.size() != grid.n_cells() || !scores.is_array() ||
      scores.size() != grid.n_cells()) {
    throw ConfigError("predictions need one box and one score row per grid cell");
  }
  try {
    for (std::size_t i = 0; i < grid.n_cells(); ++i) {
      const auto b = boxes[i].get<std::vector<double>>();
      const auto s = scores[i].get<std::vector<double>>();
      if (b.size() != 8 || s.size() != static_cast<std::size_t>(n_classes)) {
        throw ConfigError("prediction cell " + std::to_string(i) + " has the wrong width");
      }
      m.boxes[i] = {b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]};
      for (int c = 0; c < n_classes; ++c) m.score(i, c) = s[c];
    }
    if (j.contains("iou_conf")) {
      m.iou_conf = j.at("iou_conf").get<std::vector<double>>();
    }
    m.validate();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad predictions: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("bad predictions: ") + e.what());
  }
  return m;
}

// Scene with optional explicit predictions. Without them, predictions are
// synthesized from the gts with the harness initializer (`prediction_init`,
// `prediction_seed`).
inline SceneFile scene_file_from_json(const json& j) {
  detail::check_keys(
      j, {"grid", "classes", "n_classes", "gts", "predictions", "prediction_init", "prediction_seed"},
      "scene");
  SceneFile out;
  Scene& scene = out.scene;
  scene.grid = grid_from_json(j.at("grid"));
  if (j.contains("classes")) {
    scene.class_names = detail::get_or<std::vector<std::string>>(j, "classes", {});
    scene.n_classes = static_cast<int>(scene.class_names.size());
  } else {
    scene.n_classes = detail::get_or(j, "n_classes", 1);
  }
  if (scene.n_classes < 1) throw ConfigError("scene needs at least one class");
  const json gts = j.contains("gts") ? j.at("gts") : json::array();
  if (!gts.is_array()) throw ConfigError("gts must be an array");
  for (std::size_t i = 0; i < gts.size(); ++i) {
    detail::check_keys(gts[i], {"box", "class_id"}, "gts[" + std::to_string(i) + "]");
    GroundTruth gt{box_from_json(gts[i].at("box")), detail::get_or(gts[i], "class_id", 0)};
    if (gt.class_id < 0 || gt.class_id >= scene.n_classes) {
      throw ConfigError("gts[" + std::to_string(i) + "] has an unknown class_id");
    }
    if (!scene.grid.contains(gt.box.x, gt.box.y)) {
      throw ConfigError("gts[" + std::to_string(i) + "] center lies off the grid");
    }
    scene.gts.push_back(gt);
  }
  if (j.contains("predictions")) {
    out.predictions = predictions_from_json(j.at("predictions"), scene.grid, scene.n_classes);
  } else {
    FitConfig fc;
    if (j.contains("prediction_init")) fc.init = init_from_json(j.at("prediction_init"));
    const auto seed = detail::get_or<std::uint64_t>(j, "prediction_seed", 0);
    out.predictions = init_state(scene, fc, seed).decode();
  }
  return out;
}

// --- assignment / loss / audit -----------------------------------------------

inline json to_json(const AssignmentResult& a) {
  json gts = json::array();
  for (std::size_t i = 0; i < a.per_gt.size(); ++i) {
    const GtAssignment& g = a.per_gt[i];
    json positives = json::array();
    for (const CellIndex& c : g.positives) positives.push_back(cell_json(c));
    gts.push_back({{"index", i},
                   {"center", cell_json(g.center)},
                   {"region_size", g.region_size},
                   {"k_dynamic", g.k_dynamic},
                   {"k", g.k()},
                   {"positives", positives},
                   {"unassigned", g.unassigned}});
  }
  json heat = json::array();
  for (std::size_t cell = 0; cell < a.grid.n_cells(); ++cell) {
    for (int cls = 0; cls < a.n_classes; ++cls) {
      const double w = a.weight(cell, cls);
      if (w == 0.0) continue;
      const CellIndex c = CellIndex::from_flat(a.grid, cell);
      heat.push_back(json::array({c.row, c.col, cls, w}));
    }
  }
  return {{"grid", to_json(a.grid)},
          {"n_classes", a.n_classes},
          {"num_positives", a.num_positives()},
          {"gts", gts},
          {"heatmap", heat}};
}

inline json to_json(const LossReport& r) {
  json per_gt = json::array();
  for (const GtLossBreakdown& b : r.per_gt_breakdown) {
    per_gt.push_back({{"gt_index", b.gt_index}, {"k", b.k}, {"mean_regression", b.mean_regression}});
  }
  return {{"l_cls", r.l_cls}, {"l_reg", r.l_reg},           {"l_iou", r.l_iou},
          {"total", r.total}, {"n_positives", r.n_positives}, {"per_gt", per_gt}};
}

inline json to_json(const Violation& v) {
  return {{"regime", v.regime},
          {"quantity", v.quantity},
          {"sample", v.sample},
          {"observed", v.observed},
          {"bound", v.bound}};
}

inline json to_json(const AuditReport& r) {
  json bounds = json::array();
  for (const BoundEntry& e : r.entries) {
    bounds.push_back({{"regime", e.regime},
                      {"quantity", e.quantity},
                      {"bound", e.bound},
                      {"max_observed", e.max_observed},
                      {"n_samples", e.n_samples},
                      {"n_violations", e.n_violations},
                      {"asserted", e.asserted}});
  }
  json violations = json::array();
  for (const Violation& v : r.violations) violations.push_back(to_json(v));
  return {{"passed", r.passed()}, {"bounds", bounds}, {"violations", violations}};
}

inline json to_json(const FdReport& r) {
  json failures = json::array();
  for (const Violation& v : r.failures) {
    failures.push_back({{"sample", v.sample},
                        {"component", v.quantity},
                        {"analytic", v.observed},
                        {"numeric", v.bound}});
  }
  return {{"passed", r.passed()},       {"n_checked", r.n_checked},
          {"n_failed", r.n_failed},     {"max_rel_error", r.max_rel_error},
          {"rel_tol", r.rel_tol},       {"abs_floor", r.abs_floor},
          {"failures", failures}};
}

// --- fit configs ---------------------------------------------------------------

struct FitJob {
  SceneConfig scene;
  FitConfig fit;
  std::vector<std::uint64_t> seeds{0};
  std::string output = "fit_out";
  std::optional<double> min_mean_true_iou;
};

inline FitJob fit_job_from_json(const json& j) {
  using detail::check_keys;
  using detail::get_or;
  check_keys(j, {"scene", "seeds", "loss", "assigner", "optimizer", "init", "output",
                 "min_mean_true_iou"},
             "fit config");
  FitJob job;
  if (j.contains("scene")) {
    const json& s = j.at("scene");
    check_keys(s, {"grid", "n_objects", "size_classes", "margin"}, "scene");
    if (s.contains("grid")) job.scene.grid = grid_from_json(s.at("grid"));
    job.scene.n_objects = get_or(s, "n_objects", job.scene.n_objects);
    job.scene.margin = get_or(s, "margin", job.scene.margin);
    if (s.contains("size_classes")) {
      job.scene.size_classes.clear();
      for (const json& c : s.at("size_classes")) {
        check_keys(c, {"name", "mean", "spread"}, "size_classes entry");
        SizeClass sc;
        sc.name = get_or<std::string>(c, "name", "");
        sc.mean = get_or(c, "mean", sc.mean);
        sc.spread = get_or(c, "spread", sc.spread);
        job.scene.size_classes.push_back(sc);
      }
    }
  }
  if (j.contains("seeds")) job.seeds = get_or<std::vector<std::uint64_t>>(j, "seeds", {});
  if (job.seeds.empty()) throw ConfigError("seeds must list at least one seed");
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    check_keys(l, {"alpha", "lambda_cls", "lambda_reg", "lambda_iou", "gamma", "regression"},
               "loss");
    LossWeights& w = job.fit.weights;
    w.alpha = get_or(l, "alpha", w.alpha);
    w.lambda_cls = get_or(l, "lambda_cls", w.lambda_cls);
    w.lambda_reg = get_or(l, "lambda_reg", w.lambda_reg);
    w.lambda_iou = get_or(l, "lambda_iou", w.lambda_iou);
    job.fit.gamma = get_or(l, "gamma", job.fit.gamma);
    const std::string reg = get_or<std::string>(l, "regression", "rwiou");
    if (reg == "rwiou") {
      job.fit.regression = RegressionKind::kRwiou;
    } else if (reg == "smooth_l1") {
      job.fit.regression = RegressionKind::kSmoothL1;
    } else {
      throw ConfigError("loss.regression must be rwiou or smooth_l1");
    }
  }
  if (j.contains("assigner")) {
    const json& a = j.at("assigner");
    check_keys(a, {"kind", "r", "iou"}, "assigner");
    const std::string kind = get_or<std::string>(a, "kind", "dcla");
    if (kind == "dcla") {
      job.fit.assigner = AssignerKind::kDcla;
    } else if (kind == "center") {
      job.fit.assigner = AssignerKind::kCenter;
    } else {
      throw ConfigError("assigner.kind must be dcla or center");
    }
    job.fit.r = get_or(a, "r", job.fit.r);
    const std::string iou = get_or<std::string>(a, "iou", "rotated_exact");
    if (iou == "rotated_exact") {
      job.fit.iou = IouKind::kRotatedExact;
    } else if (iou == "rwiou") {
      job.fit.iou = IouKind::kRwiou;
    } else if (iou == "axis_aligned") {
      job.fit.iou = IouKind::kAxisAligned;
    } else {
      throw ConfigError("assigner.iou must be rotated_exact, rwiou or axis_aligned");
    }
  }
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    check_keys(o, {"step_size", "n_steps"}, "optimizer");
    job.fit.step_size = get_or(o, "step_size", job.fit.step_size);
    job.fit.n_steps = get_or(o, "n_steps", job.fit.n_steps);
  }
  if (j.contains("init")) job.fit.init = init_from_json(j.at("init"));
  job.output = get_or<std::string>(j, "output", job.output);
  if (j.contains("min_mean_true_iou")) {
    job.min_mean_true_iou = get_or<double>(j, "min_mean_true_iou", 0.0);
  }
  try {
    job.fit.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return job;
}

inline std::string trajectory_csv(const ExperimentReport& r) {
  std::ostringstream os;
  os << "step,l_cls,l_reg,l_iou,total,mean_true_iou\n";
  for (const TrajectoryRow& row : r.trajectory) {
    os << row.step << ',' << detail::format_number(row.l_cls) << ','
       << detail::format_number(row.l_reg) << ',' << detail::format_number(row.l_iou) << ','
       << detail::format_number(row.total) << ',' << detail::format_number(row.mean_true_iou)
       << '\n';
  }
  return os.str();
}

inline json to_json(const ClassStats& c) {
  return {{"class_id", c.class_id}, {"name", c.name}, {"n_gts", c.n_gts}, {"mean_k", c.mean_k}};
}

inline json to_json(const ExperimentReport& r) {
  json classes = json::array();
  for (const ClassStats& c : r.per_class) classes.push_back(to_json(c));
  return {{"seed", r.seed},
          {"steps", r.trajectory.empty() ? 0 : r.trajectory.back().step},
          {"mean_true_iou", r.mean_true_iou},
          {"min_true_iou", r.min_true_iou},
          {"per_gt_iou", r.per_gt_iou},
          {"per_class", classes},
          {"final_loss", to_json(r.final_loss)},
          {"diverged", r.diverged},
          {"diagnostic", r.diagnostic},
          {"wall_clock_s", r.wall_clock_s}};
}

}  // namespace rwiou::io
