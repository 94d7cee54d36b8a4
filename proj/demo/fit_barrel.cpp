// Fits a pinhole to a barrel-distorted ray bundle and reports how far the
// bundle bends away from it.
//
//   build/demo/fit_barrel [k1]

#include <raycal/raycal.hpp>

#include <cstdio>
#include <cstdlib>

int main(int argc, char** argv) {
  using namespace raycal;
  const double k1 = argc > 1 ? std::atof(argv[1]) : -0.1;

  Intrinsics k;
  k.fx = k.fy = 400.0;
  k.cx = k.cy = 224.0;
  Pose pose;
  pose.rotation = exp_so3(Vec3(0.1, -0.2, 0.05));
  pose.translation = Vec3(0.5, -1.0, 2.0);
  const auto profile = ParametricProfile::radial(k1, 0.0, half_diagonal(448, 448));
  const RayBundle bundle = bundle_from_camera(k, pose, profile, 16, 16, 448, 448);

  const FitResult fit = fit_pinhole(bundle);
  std::printf("fit: f %.3f px, principal point (%.3f, %.3f), %d iterations, %s\n", fit.intrinsics.fx,
              fit.intrinsics.cx, fit.intrinsics.cy, fit.iterations, fit.converged ? "converged" : "not converged");
  std::printf("rms angular residual %.4f deg\n", fit.rms_angular_residual);
  const Vec3 c = camera_center(fit.pose);
  std::printf("camera center (%.6f, %.6f, %.6f)\n", c.x(), c.y(), c.z());

  const PatchFlow flow = patch_flow_from_rays(bundle, fit.intrinsics, fit.pose);
  // flow along the main diagonal, from the center outward
  for (int n = 8; n < 16; ++n) {
    const std::size_t idx = bundle.index(n, n);
    const Vec2 f = flow.flow[idx];
    std::printf("patch (%2d,%2d)  flow (%+.3f, %+.3f) px\n", n, n, f.x(), f.y());
  }
  std::printf("max distortion %.2f%%\n", max_abs_distortion_percent(profile_map(profile, Vec2(224, 224)), 448, 448));
  return 0;
}
