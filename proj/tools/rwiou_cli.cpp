#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rwiou/io.hpp"
#include "rwiou/rwiou.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;
constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

rwiou::Box3D parse_box(const std::string& text, const std::string& which) {
  static constexpr const char* kFields[] = {"x", "y", "z", "l", "w", "h", "theta"};
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(item);
  if (!text.empty() && text.back() == ',') parts.emplace_back();
  if (parts.size() != 7) {
    throw UsageError(which + ": expected 7 comma-separated numbers x,y,z,l,w,h,theta, got " +
                     std::to_string(parts.size()));
  }
  double v[7];
  for (int i = 0; i < 7; ++i) {
    std::size_t used = 0;
    try {
      v[i] = std::stod(parts[i], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    while (used < parts[i].size() && std::isspace(static_cast<unsigned char>(parts[i][used]))) {
      ++used;
    }
    if (parts[i].empty() || used != parts[i].size()) {
      throw UsageError(which + ": field '" + kFields[i] + "' is not a number: '" + parts[i] +
                       "'");
    }
  }
  try {
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
  } catch (const std::invalid_argument& e) {
    throw UsageError(which + ": " + e.what());
  }
}

void print_value(double v) { std::printf("%.6f\n", v); }

int run_iou(const std::string& a, const std::string& b, double alpha, bool exact, bool mc,
            std::uint64_t samples, std::uint64_t seed) {
  const rwiou::Box3D b1 = parse_box(a, "box1");
  const rwiou::Box3D b2 = parse_box(b, "box2");
  rwiou::check_alpha(alpha);
  if (exact) {
    print_value(rwiou::rotated_iou_exact(b1, b2));
  } else if (mc) {
    print_value(rwiou::mc_iou_oracle(b1, b2, samples, seed).iou);
  } else {
    print_value(rwiou::rwiou(b1, b2, alpha));
  }
  return kExitOk;
}

int run_gradcheck(std::size_t samples, std::uint64_t seed, double alpha) {
  rwiou::check_alpha(alpha);
  if (samples < 100) throw UsageError("--samples must be at least 100");
  const std::size_t bound_samples = std::max<std::size_t>(samples, 1000);
  const rwiou::AuditReport bounds = rwiou::gradient_bound_audit(bound_samples, seed, alpha);
  const rwiou::FdReport fd = rwiou::finite_difference_audit(samples, seed, alpha);
  const bool passed = bounds.passed() && fd.passed();
  const nlohmann::json out = {{"passed", passed},
                              {"alpha", alpha},
                              {"seed", seed},
                              {"samples", samples},
                              {"bound_audit", rwiou::io::to_json(bounds)},
                              {"finite_difference", rwiou::io::to_json(fd)}};
  std::cout << out.dump(2) << '\n';
  return passed ? kExitOk : kExitFailed;
}

int run_assign(const std::string& path, std::optional<int> r_override) {
  const rwiou::io::SceneFile file = rwiou::io::scene_file_from_json(rwiou::io::read_json_file(path));
  rwiou::AssignConfig cfg;
  if (r_override) cfg.r = *r_override;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const rwiou::Scene& scene = file.scene;
  const rwiou::AssignmentResult a =
      rwiou::assign_dcla(scene.grid, scene.gts, file.predictions, cfg);
  nlohmann::json out = rwiou::io::to_json(a);
  out["r"] = cfg.r;
  std::cout << out.dump(2) << '\n';
  return kExitOk;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
  f << text;
}

int run_fit(const std::string& path, const std::string& output_override) {
  rwiou::io::FitJob job = rwiou::io::fit_job_from_json(rwiou::io::read_json_file(path));
  if (!output_override.empty()) job.output = output_override;
  const std::filesystem::path dir(job.output);
  std::filesystem::create_directories(dir);

  nlohmann::json runs = nlohmann::json::array();
  std::vector<double> means;
  bool diverged = false;
  double worst_final = 0.0;
  for (std::uint64_t seed : job.seeds) {
    rwiou::SceneConfig sc = job.scene;
    sc.seed = seed;
    const rwiou::Scene scene = rwiou::generate_scene(sc);
    const rwiou::ExperimentReport r = rwiou::fit_scene(scene, job.fit, seed);
    write_file(dir / ("trajectory_seed" + std::to_string(seed) + ".csv"),
               rwiou::io::trajectory_csv(r));
    runs.push_back(rwiou::io::to_json(r));
    means.push_back(r.mean_true_iou);
    worst_final = std::max(worst_final, r.final_loss.total);
    if (r.diverged) {
      diverged = true;
      std::cerr << "seed " << seed << ": " << r.diagnostic << '\n';
    }
  }
  const double mean_iou = rwiou::pairwise_sum(means) / static_cast<double>(means.size());
  const bool below = job.min_mean_true_iou && mean_iou < *job.min_mean_true_iou;
  const nlohmann::json report = {{"config", path},
                                 {"n_seeds", job.seeds.size()},
                                 {"mean_true_iou", mean_iou},
                                 {"max_final_total", worst_final},
                                 {"diverged", diverged},
                                 {"min_mean_true_iou", job.min_mean_true_iou
                                                           ? nlohmann::json(*job.min_mean_true_iou)
                                                           : nlohmann::json(nullptr)},
                                 {"runs", runs}};
  write_file(dir / "report.json", report.dump(2) + "\n");
  std::printf("fit: seeds=%zu mean_true_iou=%.6f max_final_total=%.6g diverged=%s output=%s\n",
              job.seeds.size(), mean_iou, worst_final, diverged ? "yes" : "no",
              dir.string().c_str());
  if (below) {
    std::fprintf(stderr, "mean_true_iou %.6f is below the configured minimum %.6f\n", mean_iou,
                 *job.min_mean_true_iou);
  }
  return diverged || below ? kExitFailed : kExitOk;
}

int run_scene(std::uint64_t seed, int n_objects, const std::string& out_path) {
  rwiou::SceneConfig cfg;
  cfg.seed = seed;
  cfg.n_objects = n_objects;
  const rwiou::Scene scene = rwiou::generate_scene(cfg);
  nlohmann::json j = rwiou::io::scene_to_json(scene);
  j["prediction_seed"] = seed;
  const std::string text = j.dump(2) + "\n";
  if (out_path.empty() || out_path == "-") {
    std::cout << text;
  } else {
    write_file(out_path, text);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rotation-weighted IoU, gradients and dynamic cross label assignment"};
  app.require_subcommand(1);

  std::string box1, box2;
  double alpha = 0.5;
  bool exact = false, use_rwiou = false, mc = false;
  std::uint64_t mc_samples = 1'000'000, seed = 0;
  auto* iou = app.add_subcommand("iou", "Print the IoU of two boxes (x,y,z,l,w,h,theta)");
  iou->add_option("box1", box1)->required();
  iou->add_option("box2", box2)->required();
  iou->add_option("--alpha", alpha, "Rotation weight strength in [0, 1]");
  auto* f_exact = iou->add_flag("--exact", exact, "Exact rotated IoU");
  auto* f_rwiou = iou->add_flag("--rwiou", use_rwiou, "Rotation-weighted IoU (default)");
  auto* f_mc = iou->add_flag("--mc", mc, "Monte-Carlo estimate of the rotated IoU");
  f_exact->excludes(f_rwiou)->excludes(f_mc);
  f_rwiou->excludes(f_mc);
  iou->add_option("--samples", mc_samples, "Monte-Carlo samples")->check(CLI::Range(10'000ULL, ~0ULL));
  iou->add_option("--seed", seed, "Monte-Carlo seed");

  std::size_t gc_samples = 10'000;
  std::uint64_t gc_seed = 0;
  double gc_alpha = 0.5;
  auto* gradcheck = app.add_subcommand("gradcheck", "Audit the analytic gradient");
  gradcheck->add_option("--samples", gc_samples, "Number of random samples (>= 100)");
  gradcheck->add_option("--seed", gc_seed);
  gradcheck->add_option("--alpha", gc_alpha);

  std::string scene_path;
  std::optional<int> r_override;
  auto* assign = app.add_subcommand("assign", "Run label assignment on a scene file");
  assign->add_option("scene", scene_path)->required();
  assign->add_option("--r", r_override, "Cross region radius (default 1)");

  std::string config_path, fit_output;
  auto* fit = app.add_subcommand("fit", "Run the gradient-descent fitting experiment");
  fit->add_option("config", config_path)->required();
  fit->add_option("--output", fit_output, "Override the config's output directory");

  std::uint64_t scene_seed = 0;
  int scene_objects = 8;
  std::string scene_out;
  auto* scene = app.add_subcommand("scene", "Generate a synthetic scene file");
  scene->add_option("--seed", scene_seed);
  scene->add_option("--n-objects", scene_objects);
  scene->add_option("-o,--output", scene_out, "Output path (stdout by default)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*iou) return run_iou(box1, box2, alpha, exact, mc, mc_samples, seed);
    if (*gradcheck) return run_gradcheck(gc_samples, gc_seed, gc_alpha);
    if (*assign) return run_assign(scene_path, r_override);
    if (*fit) return run_fit(config_path, fit_output);
    if (*scene) return run_scene(scene_seed, scene_objects, scene_out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const rwiou::io::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const rwiou::SceneError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailed;
  }
  return kExitUsage;
}
