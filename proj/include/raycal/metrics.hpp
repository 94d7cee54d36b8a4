#pragma once

// Camera-set evaluation: mean ray angular error, pairwise relative-rotation
// accuracy, and camera-center accuracy after similarity alignment.

#include <raycal/core.hpp>
#include <raycal/diffusion.hpp>
#include <raycal/fit.hpp>
#include <raycal/ray_camera.hpp>

#include <vector>

namespace raycal {

/// Geodesic angle between two rotations in degrees.
inline double relative_rotation_error(const Mat3& ra, const Mat3& rb) {
  if (!is_rotation(ra) || !is_rotation(rb)) throw ParameterError("relative_rotation_error: input is not a rotation");
  const double c = 0.5 * ((ra.transpose() * rb).trace() - 1.0);
  return rad2deg(std::acos(clamp_unit(c)));
}

inline void check_pose_lists(const std::vector<Pose>& pred, const std::vector<Pose>& gt, std::size_t min_count) {
  if (pred.size() != gt.size())
    throw ParameterError("predicted and ground-truth pose lists differ in length (" + std::to_string(pred.size()) +
                         " vs " + std::to_string(gt.size()) + ")");
  if (pred.size() < min_count)
    throw ParameterError("need at least " + std::to_string(min_count) + " cameras");
}

/// Relative-rotation errors for all unordered pairs (i < j), row-major order.
/// Rotations map world to camera, so the gauge-free relative rotation of a
/// pair is R_i R_j^T (the camera-to-world form R_i^T R_j, transposed).
inline std::vector<double> pairwise_rotation_errors(const std::vector<Pose>& pred, const std::vector<Pose>& gt) {
  check_pose_lists(pred, gt, 2);
  std::vector<double> errors;
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t j = i + 1; j < pred.size(); ++j)
      errors.push_back(relative_rotation_error(pred[i].rotation * pred[j].rotation.transpose(),
                                               gt[i].rotation * gt[j].rotation.transpose()));
  return errors;
}

inline double fraction_below(const std::vector<double>& values, double threshold) {
  if (values.empty()) return 0.0;
  std::size_t hits = 0;
  for (double v : values) hits += v < threshold ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(values.size());
}

inline double rotation_accuracy(const std::vector<Pose>& pred, const std::vector<Pose>& gt, double threshold_deg = 15.0) {
  return fraction_below(pairwise_rotation_errors(pred, gt), threshold_deg);
}

inline std::vector<Vec3> camera_centers(const std::vector<Pose>& poses) {
  std::vector<Vec3> out;
  out.reserve(poses.size());
  for (const auto& p : poses) out.push_back(camera_center(p));
  return out;
}

/// Distance of every aligned predicted center to its ground truth, as a
/// fraction of the scene scale (largest pairwise ground-truth distance).
inline std::vector<double> center_distances(const std::vector<Pose>& pred, const std::vector<Pose>& gt) {
  check_pose_lists(pred, gt, 3);
  const auto pc = camera_centers(pred);
  const auto gc = camera_centers(gt);
  double scale = 0.0;
  for (std::size_t i = 0; i < gc.size(); ++i)
    for (std::size_t j = i + 1; j < gc.size(); ++j) scale = std::max(scale, (gc[i] - gc[j]).norm());
  if (!(scale > 0.0)) throw DegenerateError("center_accuracy: ground-truth centers coincide");
  const SimilarityTransform align = fit_similarity(pc, gc);
  std::vector<double> out;
  out.reserve(pc.size());
  for (std::size_t i = 0; i < pc.size(); ++i) out.push_back((align.apply(pc[i]) - gc[i]).norm() / scale);
  return out;
}

inline double center_accuracy(const std::vector<Pose>& pred, const std::vector<Pose>& gt, double threshold = 0.1) {
  return fraction_below(center_distances(pred, gt), threshold);
}

/// Mean direction angle in degrees; origins are ignored.
inline double mean_angular_error(const RayBundle& pred, const RayBundle& gt) {
  if (pred.rows != gt.rows || pred.cols != gt.cols || pred.size() != gt.size())
    throw ParameterError("mean_angular_error: bundle grids differ");
  return loss_angular(pred.directions, gt.directions);
}

struct EvalReport {
  double mean_angular_deg = 0.0;
  double rotation_acc_at_15 = 0.0;
  double center_acc_at_0_1 = 0.0;
  std::vector<double> per_pair_rotation_err;
  std::vector<double> per_camera_center_dist;
};

/// Full protocol. Mean angular error pools every ray of every bundle; pass
/// empty bundle lists to skip it (reported as 0).
inline EvalReport evaluate(const std::vector<Pose>& pred_poses, const std::vector<RayBundle>& pred_bundles,
                           const std::vector<Pose>& gt_poses, const std::vector<RayBundle>& gt_bundles) {
  if (pred_bundles.size() != gt_bundles.size()) throw ParameterError("evaluate: bundle counts differ");
  EvalReport report;
  report.per_pair_rotation_err = pairwise_rotation_errors(pred_poses, gt_poses);
  report.rotation_acc_at_15 = fraction_below(report.per_pair_rotation_err, 15.0);
  report.per_camera_center_dist = center_distances(pred_poses, gt_poses);
  report.center_acc_at_0_1 = fraction_below(report.per_camera_center_dist, 0.1);
  if (!pred_bundles.empty()) {
    std::vector<Vec3> a, b;
    for (std::size_t c = 0; c < pred_bundles.size(); ++c) {
      const auto& p = pred_bundles[c];
      const auto& g = gt_bundles[c];
      if (p.rows != g.rows || p.cols != g.cols || p.size() != g.size())
        throw ParameterError("evaluate: bundle grids differ for camera " + std::to_string(c));
      a.insert(a.end(), p.directions.begin(), p.directions.end());
      b.insert(b.end(), g.directions.begin(), g.directions.end());
    }
    report.mean_angular_deg = loss_angular(a, b);
  }
  return report;
}

}  // namespace raycal
