#pragma once

// Ray bundles: a camera represented as one world-space ray per image patch.

#include <raycal/aberration.hpp>
#include <raycal/core.hpp>

#include <optional>
#include <vector>

namespace raycal {

/// Grid of rays, one per image patch, stored row-major.
///
/// `image_width` / `image_height` record the pixel extent the patch grid
/// tiles. Fitting a pinhole camera needs them to express focal lengths in
/// pixels; they default to the grid size (one pixel per patch).
struct RayBundle {
  int rows = 0;
  int cols = 0;
  double image_width = 0.0;
  double image_height = 0.0;
  std::vector<Vec3> origins;
  std::vector<Vec3> directions;

  RayBundle() = default;
  RayBundle(int rows_, int cols_, double image_w = 0.0, double image_h = 0.0)
      : rows(rows_),
        cols(cols_),
        image_width(image_w > 0.0 ? image_w : cols_),
        image_height(image_h > 0.0 ? image_h : rows_),
        origins(static_cast<std::size_t>(rows_) * cols_, Vec3::Zero()),
        directions(static_cast<std::size_t>(rows_) * cols_, Vec3::UnitZ()) {
    if (rows_ < 1 || cols_ < 1) throw ParameterError("ray bundle needs a positive grid size");
  }

  std::size_t size() const { return origins.size(); }
  std::size_t index(int i, int j) const { return static_cast<std::size_t>(i) * cols + j; }

  /// Pixel center of patch (i, j).
  Vec2 patch_pixel(int i, int j) const {
    return {(j + 0.5) * image_width / cols, (i + 0.5) * image_height / rows};
  }
  Vec2 patch_pixel(std::size_t k) const {
    return patch_pixel(static_cast<int>(k / cols), static_cast<int>(k % cols));
  }

  void validate(double tol = 1e-9) const {
    if (rows < 1 || cols < 1) throw ParameterError("ray bundle needs a positive grid size");
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    if (origins.size() != n || directions.size() != n)
      throw ParameterError("ray bundle arrays do not match its grid size");
    if (!(image_width > 0.0) || !(image_height > 0.0)) throw ParameterError("ray bundle image extent must be positive");
    for (std::size_t k = 0; k < n; ++k) {
      if (!origins[k].allFinite()) throw ParameterError("ray bundle origin is not finite");
      if (!directions[k].allFinite() || std::abs(directions[k].norm() - 1.0) > tol)
        throw ParameterError("ray bundle direction " + std::to_string(k) + " is not unit length");
    }
  }
};

/// Unit camera-frame ray through `pixel`: normalize(K^-1 D(pixel)).
inline Vec3 lift_pixel(const Intrinsics& intrinsics, const Vec2& pixel, const PixelMap& aberration) {
  intrinsics.validate();
  if (!pixel.allFinite()) throw ParameterError("lift_pixel: pixel is not finite");
  const Vec2 distorted = aberration ? aberration(pixel) : pixel;
  return intrinsics.unproject(distorted).normalized();
}

/// Profile variant: the profile is centered on the principal point.
inline Vec3 lift_pixel(const Intrinsics& intrinsics, const Vec2& pixel,
                       const std::optional<ParametricProfile>& profile = std::nullopt) {
  if (!profile) return lift_pixel(intrinsics, pixel, PixelMap{});
  return lift_pixel(intrinsics, pixel, profile_map(*profile, Vec2(intrinsics.cx, intrinsics.cy)));
}

/// Camera-to-world: directions rotate, origins rotate and translate.
inline RayBundle to_world(const RayBundle& bundle, const Pose& pose) {
  RayBundle out = bundle;
  const Mat3 rt = pose.rotation.transpose();
  for (std::size_t k = 0; k < bundle.size(); ++k) {
    out.origins[k] = rt * bundle.origins[k] + pose.translation;
    out.directions[k] = rt * bundle.directions[k];
  }
  return out;
}

inline RayBundle bundle_from_camera(const Intrinsics& intrinsics, const Pose& pose, const PixelMap& aberration,
                                    int rows, int cols, double image_w, double image_h) {
  if (rows < 2 || cols < 2) throw ParameterError("bundle_from_camera: grid must be at least 2x2");
  if (!(image_w > 0.0) || !(image_h > 0.0)) throw ParameterError("bundle_from_camera: image size must be positive");
  intrinsics.validate();
  RayBundle camera(rows, cols, image_w, image_h);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      camera.directions[camera.index(i, j)] = lift_pixel(intrinsics, camera.patch_pixel(i, j), aberration);
  return to_world(camera, pose);
}

inline RayBundle bundle_from_camera(const Intrinsics& intrinsics, const Pose& pose,
                                    const std::optional<ParametricProfile>& profile, int rows, int cols,
                                    double image_w, double image_h) {
  PixelMap map;
  if (profile) map = profile_map(*profile, Vec2(intrinsics.cx, intrinsics.cy));
  return bundle_from_camera(intrinsics, pose, map, rows, cols, image_w, image_h);
}

// ---------------------------------------------------------------------------
// Plücker coordinates
// ---------------------------------------------------------------------------

struct PluckerRay {
  Vec3 direction;
  Vec3 moment;
};

inline PluckerRay to_plucker(const Vec3& origin, const Vec3& direction) {
  const double n = direction.norm();
  if (!(n > 0.0)) throw ParameterError("to_plucker: zero direction");
  const Vec3 d = direction / n;
  return {d, origin.cross(d)};
}

/// Returns the point of the line closest to the world origin, and the direction.
inline std::pair<Vec3, Vec3> from_plucker(const PluckerRay& ray) {
  const double n = ray.direction.norm();
  if (!(n > 0.0)) throw ParameterError("from_plucker: zero direction");
  const Vec3 d = ray.direction / n;
  return {d.cross(ray.moment) / n, d};
}

// ---------------------------------------------------------------------------
// Scene normalization
// ---------------------------------------------------------------------------

struct NormalizedScene {
  std::vector<Pose> poses;
  double scale = 1.0;
  bool degenerate_scale = false;
};

/// Re-expresses all poses so the first camera has identity rotation and a
/// unit-norm translation. The same rotation and scale apply to every camera.
/// A first-camera translation shorter than 1e-12 leaves the scale at 1 and
/// sets `degenerate_scale`.
inline NormalizedScene normalize_scene_checked(const std::vector<Pose>& poses) {
  if (poses.empty()) throw ParameterError("normalize_scene: empty pose list");
  const Mat3 anchor = poses.front().rotation;
  const double norm = poses.front().translation.norm();
  NormalizedScene out;
  out.degenerate_scale = norm < 1e-12;
  out.scale = out.degenerate_scale ? 1.0 : 1.0 / norm;
  out.poses.reserve(poses.size());
  for (const Pose& p : poses) {
    Pose q;
    q.rotation = p.rotation * anchor.transpose();
    q.translation = out.scale * (anchor * p.translation);
    out.poses.push_back(q);
  }
  out.poses.front().rotation = Mat3::Identity();
  return out;
}

inline std::vector<Pose> normalize_scene(const std::vector<Pose>& poses) {
  NormalizedScene scene = normalize_scene_checked(poses);
  if (scene.degenerate_scale)
    throw DegenerateError("normalize_scene: first camera translation is zero; scale is undefined");
  return std::move(scene.poses);
}

}  // namespace raycal
