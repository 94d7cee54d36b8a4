// raycal: command-line front end.
//
// Exit codes: 0 ok, 1 check failure or bad input file, 2 degenerate input,
// 3 non-convergence, 64 usage.

#include <raycal/raycal.hpp>
#include <raycal/selftest.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace raycal;

namespace {

constexpr int kExitCheck = 1;
constexpr int kExitDegenerate = 2;
constexpr int kExitNoConvergence = 3;
constexpr int kExitUsage = 64;

struct UsageError : Error {
  using Error::Error;
};

/// A directory expands to its .pgm/.ppm files in name order.
std::vector<std::string> expand_images(const std::vector<std::string>& inputs) {
  std::vector<std::string> out;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<std::string> found;
      for (const auto& entry : fs::directory_iterator(in)) {
        const auto ext = entry.path().extension().string();
        if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm" || ext == ".pnm"))
          found.push_back(entry.path().string());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(in);
    }
  }
  return out;
}

std::string frame_name(const std::string& input) { return fs::path(input).filename().string(); }

/// Looks-at-origin pose on a horizontal circle; rotation maps world to camera
/// with x right, y down, z forward.
Pose orbit_pose(int index, int count, double radius) {
  const double phi = 2.0 * kPi * index / std::max(count, 1) * 0.25;  // quarter orbit over the sequence
  const Vec3 center(radius * std::sin(phi), -1.0, -radius * std::cos(phi));
  const Vec3 z = (-center).normalized();
  const Vec3 x = Vec3(0, 1, 0).cross(z).normalized();
  const Vec3 y = z.cross(x);
  Pose p;
  p.rotation.row(0) = x.transpose();
  p.rotation.row(1) = y.transpose();
  p.rotation.row(2) = z.transpose();
  p.translation = center;
  return p;
}

Intrinsics intrinsics_for_fov(double fov_deg, int w, int h) {
  const double fov = deg2rad(std::min(fov_deg, 120.0));
  Intrinsics k;
  k.fx = k.fy = 0.5 * w / std::tan(0.5 * fov);
  k.cx = 0.5 * w;
  k.cy = 0.5 * h;
  return k;
}

/// Single bundle from either a bundle document or a camera set.
RayBundle load_bundle(const std::string& path, std::size_t camera) {
  const json j = read_json_file(path);
  if (j.contains("bundles")) {
    const CameraSet set = camera_set_from_json(j);
    if (camera >= set.bundles.size())
      throw UsageError(path + ": camera index " + std::to_string(camera) + " out of range");
    return set.bundles[camera];
  }
  return bundle_from_json(j);
}

void write_manifest(const fs::path& dir, json body) {
  write_json_file((dir / "manifest.json").string(), body);
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string db;
  std::vector<std::string> images;
  std::string out;
  std::string record;
  std::string category;
  std::uint64_t seed = 0;
  int rows = 16, cols = 16;
};

int cmd_simulate(const SimulateArgs& a) {
  const LensDatabase db = load_database(a.db);
  const LensRecord* rec = nullptr;
  if (!a.record.empty()) {
    for (const auto& r : db.records)
      if (r.name == a.record) rec = &r;
    if (!rec) throw UsageError("no record named '" + a.record + "'");
  } else {
    std::optional<LensCategory> cat;
    if (!a.category.empty()) cat = lens_category_from_string(a.category);
    rec = &sample_profile(db, a.seed, cat);
  }
  const auto paths = expand_images(a.images);
  if (paths.empty()) throw UsageError("no input images");
  std::vector<Image> frames;
  for (const auto& p : paths) frames.push_back(read_pnm(p));
  const AugmentedSequence aug = augment_sequence(frames, *rec);

  fs::create_directories(a.out);
  const fs::path out(a.out);
  std::vector<std::string> inputs{a.db};
  inputs.insert(inputs.end(), paths.begin(), paths.end());
  const json prov = provenance(a.seed, inputs);

  json written = json::array();
  for (std::size_t k = 0; k < paths.size(); ++k) {
    const auto name = frame_name(paths[k]);
    write_pnm((out / name).string(), aug.images[k]);
    written.push_back(name);
  }
  json field = field_to_json(aug.field);
  field["provenance"] = prov;
  write_json_file((out / "field.json").string(), field);

  const int w = frames.front().width, h = frames.front().height;
  const Intrinsics k = intrinsics_for_fov(rec->fov_deg, w, h);
  const PixelMap aberration = aberration_for(*rec, w, h);
  CameraSet set;
  for (std::size_t n = 0; n < paths.size(); ++n) {
    set.poses.push_back(orbit_pose(static_cast<int>(n), static_cast<int>(paths.size()), 4.0));
    set.bundles.push_back(bundle_from_camera(k, set.poses.back(), aberration, a.rows, a.cols, w, h));
    set.intrinsics.push_back(k);
  }
  json gt = camera_set_to_json(set);
  gt["provenance"] = prov;
  write_json_file((out / "bundles.json").string(), gt);

  write_manifest(out, {{"command", "simulate"}, {"record", rec->name}, {"frames", written}, {"provenance", prov}});
  std::cout << "applied '" << rec->name << "' to " << paths.size() << " frame(s) -> " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct UndistortArgs {
  std::string bundle;
  std::string field;
  std::vector<std::string> images;
  std::string out;
  std::size_t camera = 0;
  int width = 0, height = 0;
};

int cmd_undistort(const UndistortArgs& a) {
  if (a.bundle.empty() == a.field.empty()) throw UsageError("give exactly one of --bundle or --field");
  const auto paths = expand_images(a.images);
  std::vector<Image> frames;
  for (const auto& p : paths) frames.push_back(read_pnm(p));
  int w = a.width, h = a.height;
  if (!frames.empty()) {
    w = frames.front().width;
    h = frames.front().height;
  }
  if (w <= 0 || h <= 0) throw UsageError("no images given; pass --width and --height");

  const std::string input = a.bundle.empty() ? a.field : a.bundle;
  json extra = json::object();
  FlowMap flow;
  if (!a.bundle.empty()) {
    RayBundle bundle = load_bundle(a.bundle, a.camera);
    if (!(bundle.image_width > 0.0)) bundle.image_width = w;
    if (!(bundle.image_height > 0.0)) bundle.image_height = h;
    FitResult fit;
    try {
      fit = fit_pinhole(bundle);
    } catch (const DegenerateError& e) {
      std::cerr << "degenerate fit: " << e.what() << "\n";
      return kExitNoConvergence;
    }
    extra["fit"] = fit_result_to_json(fit);
    if (!fit.converged) {
      std::cerr << "fit did not converge after " << fit.iterations << " iterations (rms residual "
                << fit.rms_angular_residual << " deg)\n";
      return kExitNoConvergence;
    }
    // The ray flow moves each distorted pixel to its pinhole position; the
    // backward flow for resampling is its inverse.
    const PatchFlow patches = patch_flow_from_rays(bundle, fit.intrinsics, fit.pose);
    const double sx = bundle.image_width / w, sy = bundle.image_height / h;
    const PixelMap forward = [&patches, sx, sy](const Vec2& p) {
      const Vec2 f = patches.sample(Vec2(p.x() * sx, p.y() * sy));
      return Vec2(p.x() + f.x() / sx, p.y() + f.y() / sy);
    };
    flow = inverse_flow(forward, w, h);
  } else {
    const DistortionField forward = field_from_json(read_json_file(a.field));
    flow = flow_from_field(invert_field(forward), w, h);
  }

  fs::create_directories(a.out);
  const fs::path out(a.out);
  std::vector<std::string> inputs{input};
  inputs.insert(inputs.end(), paths.begin(), paths.end());
  const json prov = provenance(0, inputs);
  write_flow_file((out / "flow.rcfl").string(), flow);
  json written = json::array();
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const auto name = frame_name(paths[k]);
    write_pnm((out / name).string(), remap_image(frames[k], flow));
    written.push_back(name);
  }
  json manifest = {{"command", "undistort"},
                   {"flow", "flow.rcfl"},
                   {"max_flow_px", flow.max_magnitude()},
                   {"frames", written},
                   {"provenance", prov}};
  manifest.update(extra);
  write_manifest(out, manifest);
  std::cout << "max flow " << flow.max_magnitude() << " px, " << frames.size() << " frame(s) -> " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_fit(const std::string& bundle_path, std::size_t camera, const std::string& out_path) {
  const RayBundle bundle = load_bundle(bundle_path, camera);
  const FitResult fit = fit_pinhole(bundle);
  json j = fit_result_to_json(fit);
  j["provenance"] = provenance(0, {bundle_path});
  if (out_path.empty()) std::cout << j.dump(2) << "\n";
  else write_json_file(out_path, j);
  std::cerr << "f " << fit.intrinsics.fx << " px, rms residual " << fit.rms_angular_residual << " deg, "
            << fit.iterations << " iterations\n";
  return fit.converged ? 0 : kExitNoConvergence;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path, const std::string& out_path) {
  const CameraSet pred = camera_set_from_json(read_json_file(pred_path));
  const CameraSet gt = camera_set_from_json(read_json_file(gt_path));
  const EvalReport report = evaluate(pred.poses, pred.bundles, gt.poses, gt.bundles);
  json j = eval_report_to_json(report);
  j["provenance"] = provenance(0, {pred_path, gt_path});
  if (out_path.empty()) std::cout << j.dump(2) << "\n";
  else write_json_file(out_path, j);
  return 0;
}

int cmd_edges(const std::string& in, const std::string& out, double low, double high, const CannyOptions& opt) {
  const Image edges = edge_map(read_pnm(in), low, high, opt);
  Image scaled = edges;
  for (double& v : scaled.data) v *= 255.0;
  write_pnm(out, scaled);
  json side = {{"command", "edges"}, {"low", low}, {"high", high}, {"sigma", opt.sigma},
               {"kernel", opt.kernel_size}, {"provenance", provenance(0, {in})}};
  write_json_file(out + ".json", side);
  return 0;
}

int cmd_ddpm_demo(int T, std::uint64_t seed, const std::string& target_path, double noise_scale,
                  const std::string& out_path) {
  RayArray target;
  int rows = 4, cols = 4;
  json prov;
  if (target_path.empty()) {
    Intrinsics k;
    k.fx = k.fy = 300.0;
    k.cx = k.cy = 64.0;
    CounterRng rng(seed, 0xDD);
    target = to_ray_array(bundle_from_camera(k, selftest::random_pose(rng), std::nullopt, rows, cols, 128, 128));
    prov = provenance(seed, {});
  } else {
    const RayBundle b = load_bundle(target_path, 0);
    target = to_ray_array(b);
    prov = provenance(seed, {target_path});
  }
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw Error("cannot write '" + out_path + "'");
  }
  std::ostream& out = out_path.empty() ? std::cout : file;
  out << "# " << prov.dump() << "\n";
  out << "step,mse,angular_deg\n";
  out.precision(10);
  SampleOptions so;
  so.noise_scale = noise_scale;
  so.on_step = [&](int t, const RayArray& x) {
    double angular = std::numeric_limits<double>::quiet_NaN();
    try {
      angular = loss_angular(x, target);
    } catch (const ParameterError&) {
      // a zero-length intermediate direction has no angle
    }
    out << t << "," << loss_denoise(x, target) << "," << angular << "\n";
  };
  const RayArray final_rays = reverse_sample(oracle_denoiser(target), make_schedule(T), target.rows(), seed, so);
  std::cerr << "final max abs error " << (final_rays - target).cwiseAbs().maxCoeff() << "\n";
  return 0;
}

int cmd_selftest(bool as_json, const std::string& fault, std::uint64_t seed) {
  selftest::Options opt;
  opt.seed = seed;
  if (!fault.empty()) {
    if (fault != "alpha_bar") throw UsageError("unknown fault '" + fault + "' (known: alpha_bar)");
    opt.inject_alpha_bar_fault = true;
  }
  const auto results = selftest::run_all(opt);
  bool ok = true;
  for (const auto& r : results) ok = ok && r.pass;
  if (as_json) {
    json j = {{"pass", ok}, {"criteria", selftest::results_to_json(results)}, {"provenance", provenance(seed, {})}};
    std::cout << j.dump(2) << "\n";
  } else {
    for (const auto& r : results) std::cout << selftest::format_line(r) << "\n";
    std::cout << (ok ? "all criteria pass" : "FAILED") << "\n";
  }
  return ok ? 0 : kExitCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"raycal: ray-bundle camera calibration toolkit"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Distort an image sequence with one lens record");
  simulate->add_option("--db", sim.db, "Lens database (JSON lines)")->required();
  simulate->add_option("--images", sim.images, "Image files or directories (PGM/PPM)")->required();
  simulate->add_option("--out", sim.out, "Output directory")->required();
  simulate->add_option("--seed", sim.seed, "Seed for record selection")->required();
  simulate->add_option("--record", sim.record, "Use this record instead of sampling");
  simulate->add_option("--category", sim.category, "Restrict sampling to one category");
  simulate->add_option("--rows", sim.rows, "Ray grid rows")->check(CLI::Range(2, 1024));
  simulate->add_option("--cols", sim.cols, "Ray grid columns")->check(CLI::Range(2, 1024));

  UndistortArgs und;
  auto* undistort = app.add_subcommand("undistort", "Undistort images from a ray bundle or a distortion field");
  undistort->add_option("--bundle", und.bundle, "Bundle JSON (or camera set with --camera)");
  undistort->add_option("--field", und.field, "Forward distortion field JSON");
  undistort->add_option("--camera", und.camera, "Camera index inside a camera set");
  undistort->add_option("--images", und.images, "Image files or directories (PGM/PPM)");
  undistort->add_option("--width", und.width, "Flow width when no images are given");
  undistort->add_option("--height", und.height, "Flow height when no images are given");
  undistort->add_option("--out", und.out, "Output directory")->required();

  std::string fit_bundle, fit_out;
  std::size_t fit_camera = 0;
  auto* fit = app.add_subcommand("fit", "Fit a pinhole camera to a ray bundle");
  fit->add_option("--bundle", fit_bundle, "Bundle JSON (or camera set with --camera)")->required();
  fit->add_option("--camera", fit_camera, "Camera index inside a camera set");
  fit->add_option("--out", fit_out, "Output JSON (stdout if omitted)");

  auto* lens = app.add_subcommand("lens", "Lens database tools");
  lens->require_subcommand(1);
  std::string lens_db, lens_category, lens_out;
  std::uint64_t lens_seed = 0;
  int per_category = 2;
  auto* validate = lens->add_subcommand("validate", "Validate a database; lists every bad record");
  validate->add_option("--db", lens_db, "Lens database")->required();
  auto* sample = lens->add_subcommand("sample", "Draw one record");
  sample->add_option("--db", lens_db, "Lens database")->required();
  sample->add_option("--seed", lens_seed, "Seed")->required();
  sample->add_option("--category", lens_category, "Category filter");
  auto* generate = lens->add_subcommand("generate", "Write the synthetic fixture database");
  generate->add_option("--seed", lens_seed, "Seed")->required();
  generate->add_option("--per-category", per_category, "Records per category")->check(CLI::Range(1, 99));
  generate->add_option("--out", lens_out, "Output path")->required();

  int ddpm_T = 100;
  std::uint64_t ddpm_seed = 0;
  std::string ddpm_target, ddpm_out;
  double ddpm_noise = 1.0;
  auto* ddpm = app.add_subcommand("ddpm-demo", "Reverse-sample with an oracle denoiser; per-step CSV");
  ddpm->add_option("--T", ddpm_T, "Diffusion steps")->check(CLI::Range(1, 100000));
  ddpm->add_option("--seed", ddpm_seed, "Seed")->required();
  ddpm->add_option("--target", ddpm_target, "Target bundle JSON (random 4x4 camera if omitted)");
  ddpm->add_option("--noise-scale", ddpm_noise, "Multiplier on injected noise (0 = deterministic)");
  ddpm->add_option("--out", ddpm_out, "CSV path (stdout if omitted)");

  std::string eval_pred, eval_gt, eval_out;
  auto* eval = app.add_subcommand("eval", "Score predicted cameras against ground truth");
  eval->add_option("--pred", eval_pred, "Predicted camera set JSON")->required();
  eval->add_option("--gt", eval_gt, "Ground-truth camera set JSON")->required();
  eval->add_option("--out", eval_out, "Report JSON (stdout if omitted)");

  std::string edges_in, edges_out;
  double edges_low = 50.0, edges_high = 150.0;
  CannyOptions canny;
  auto* edges = app.add_subcommand("edges", "Canny edge map of a grayscale image");
  edges->add_option("--in", edges_in, "Input PGM")->required();
  edges->add_option("--out", edges_out, "Output PGM (0/255)")->required();
  edges->add_option("--low", edges_low, "Low threshold");
  edges->add_option("--high", edges_high, "High threshold");
  edges->add_option("--sigma", canny.sigma, "Gaussian sigma");
  edges->add_option("--kernel", canny.kernel_size, "Gaussian kernel size (odd)");

  bool st_json = false;
  std::string st_fault;
  std::uint64_t st_seed = selftest::Options{}.seed;
  auto* st = app.add_subcommand("pipeline_selftest", "Run the acceptance checks; exit 0 iff all pass");
  st->add_flag("--json", st_json, "Machine-readable report");
  st->add_option("--inject-fault", st_fault, "Deliberately break a component (alpha_bar)");
  st->add_option("--seed", st_seed, "Seed for all checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*simulate) return cmd_simulate(sim);
    if (*undistort) return cmd_undistort(und);
    if (*fit) return cmd_fit(fit_bundle, fit_camera, fit_out);
    if (*validate) {
      const LensDatabase db = load_database(lens_db);
      std::cout << lens_db << ": " << db.records.size() << " valid record(s)\n";
      return 0;
    }
    if (*sample) {
      const LensDatabase db = load_database(lens_db);
      std::optional<LensCategory> cat;
      if (!lens_category.empty()) cat = lens_category_from_string(lens_category);
      json j = record_to_json(sample_profile(db, lens_seed, cat));
      j["provenance"] = provenance(lens_seed, {lens_db});
      std::cout << j.dump() << "\n";
      return 0;
    }
    if (*generate) {
      write_database(lens_out, generate_fixture_database(lens_seed, per_category));
      // JSON lines has no room for metadata, so provenance goes in a sidecar
      write_json_file(lens_out + ".provenance.json",
                      {{"command", "lens generate"}, {"per_category", per_category},
                       {"provenance", provenance(lens_seed, {})}});
      std::cout << "wrote " << lens_out << "\n";
      return 0;
    }
    if (*ddpm) return cmd_ddpm_demo(ddpm_T, ddpm_seed, ddpm_target, ddpm_noise, ddpm_out);
    if (*eval) return cmd_eval(eval_pred, eval_gt, eval_out);
    if (*edges) return cmd_edges(edges_in, edges_out, edges_low, edges_high, canny);
    if (*st) return cmd_selftest(st_json, st_fault, st_seed);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DegenerateError& e) {
    std::cerr << "degenerate input: " << e.what() << "\n";
    return kExitDegenerate;
  } catch (const ConvergenceError& e) {
    std::cerr << "no convergence: " << e.what() << " (worst residual " << e.worst_residual() << ")\n";
    return kExitNoConvergence;
  } catch (const ParameterError& e) {
    std::cerr << "invalid parameter: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheck;
  }
  return kExitUsage;
}
