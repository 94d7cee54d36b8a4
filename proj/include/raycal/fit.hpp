#pragma once

// Pinhole fitting to arbitrary ray bundles, ray intersection, and similarity
// alignment of point sets.

#include <raycal/core.hpp>
#include <raycal/ray_camera.hpp>

#include <array>
#include <optional>
#include <vector>

namespace raycal {

/// Least-squares point closest to all rays: solves
/// sum(I - d d^T) x = sum(I - d d^T) o.
inline Vec3 intersect_rays(const std::vector<Vec3>& origins, const std::vector<Vec3>& directions) {
  if (origins.size() != directions.size()) throw ParameterError("intersect_rays: array sizes differ");
  if (origins.size() < 2) throw DegenerateError("intersect_rays: need at least two rays");
  Mat3 a = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  for (std::size_t k = 0; k < origins.size(); ++k) {
    const Vec3 d = directions[k].normalized();
    const Mat3 p = Mat3::Identity() - d * d.transpose();
    a += p;
    b += p * origins[k];
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(a);
  const Vec3 ev = eig.eigenvalues();
  if (!(ev(0) > 1e-10 * ev(2))) throw DegenerateError("intersect_rays: rays are parallel (singular system)");
  return eig.eigenvectors() * (eig.eigenvectors().transpose() * b).cwiseQuotient(ev);
}

inline Vec3 intersect_rays(const RayBundle& bundle) { return intersect_rays(bundle.origins, bundle.directions); }

// ---------------------------------------------------------------------------
// Similarity alignment (closed form, Umeyama)
// ---------------------------------------------------------------------------

struct SimilarityTransform {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

inline SimilarityTransform fit_similarity(const std::vector<Vec3>& source, const std::vector<Vec3>& target) {
  if (source.size() != target.size()) throw ParameterError("fit_similarity: point lists differ in length");
  if (source.size() < 3) throw DegenerateError("fit_similarity: need at least three correspondences");
  const double n = static_cast<double>(source.size());
  Vec3 mu_s = Vec3::Zero(), mu_t = Vec3::Zero();
  for (std::size_t k = 0; k < source.size(); ++k) {
    mu_s += source[k];
    mu_t += target[k];
  }
  mu_s /= n;
  mu_t /= n;

  Mat3 cov = Mat3::Zero(), spread_s = Mat3::Zero(), spread_t = Mat3::Zero();
  double var_s = 0.0;
  for (std::size_t k = 0; k < source.size(); ++k) {
    const Vec3 s = source[k] - mu_s;
    const Vec3 t = target[k] - mu_t;
    cov += t * s.transpose();
    spread_s += s * s.transpose();
    spread_t += t * t.transpose();
    var_s += s.squaredNorm();
  }
  cov /= n;
  var_s /= n;

  auto collinear = [](const Mat3& spread) {
    const Vec3 ev = Eigen::SelfAdjointEigenSolver<Mat3>(spread, Eigen::EigenvaluesOnly).eigenvalues();
    return !(ev(1) > 1e-12 * ev(2)) || !(ev(2) > 0.0);
  };
  if (collinear(spread_t) || collinear(spread_s))
    throw DegenerateError("fit_similarity: points are collinear or coincident");

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 sign = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) sign(2) = -1.0;

  SimilarityTransform out;
  out.rotation = svd.matrixU() * sign.asDiagonal() * svd.matrixV().transpose();
  out.scale = svd.singularValues().dot(sign) / var_s;
  out.translation = mu_t - out.scale * out.rotation * mu_s;
  return out;
}

// ---------------------------------------------------------------------------
// Pinhole fit
// ---------------------------------------------------------------------------

struct FitResult {
  Intrinsics intrinsics;
  Pose pose;
  double rms_angular_residual = 0.0;  // degrees
  int iterations = 0;
  bool converged = false;
  std::vector<double> per_ray_residual_deg;
  std::vector<double> cost_history;  // cost after every accepted step
};

struct FitOptions {
  int max_iterations = 200;
  double gradient_tolerance = 1e-10;
  double step_tolerance = 1e-12;
  double initial_lambda = 1e-3;
};

namespace detail {

// Tangent-space angular residual: a 3-vector along u x v with length equal
// to the angle between u and v.
inline Vec3 angular_residual(const Vec3& observed, const Vec3& predicted) {
  const Vec3 c = observed.cross(predicted);
  const double s = c.norm();
  const double d = observed.dot(predicted);
  if (s < 1e-14) return c / (d > 0.0 ? d : 1.0);
  return c * (std::atan2(s, d) / s);
}

struct PinholeState {
  double f = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 center = Vec3::Zero();
};

inline constexpr int kFitParams = 9;  // f, cx, cy, omega(3), center(3)

inline PinholeState perturbed(const PinholeState& s, const Eigen::Matrix<double, kFitParams, 1>& delta) {
  PinholeState out = s;
  out.f += delta(0);
  out.cx += delta(1);
  out.cy += delta(2);
  out.rotation = orthonormalize(exp_so3(delta.segment<3>(3)) * s.rotation);
  out.center += delta.segment<3>(6);
  return out;
}

inline Eigen::VectorXd fit_residuals(const RayBundle& bundle, const PinholeState& s) {
  const std::size_t n = bundle.size();
  Eigen::VectorXd r(6 * n);
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2 px = bundle.patch_pixel(k);
    const Vec3 predicted = Vec3((px.x() - s.cx) / s.f, (px.y() - s.cy) / s.f, 1.0).normalized();
    const Vec3 observed = s.rotation * bundle.directions[k];
    r.segment<3>(6 * k) = angular_residual(observed, predicted);
    const Vec3& d = bundle.directions[k];
    const Vec3 offset = bundle.origins[k] - s.center;
    r.segment<3>(6 * k + 3) = offset - d * d.dot(offset);
  }
  return r;
}

/// Direct linear estimate of M = K R from p ~ M d, then RQ-decomposed.
inline PinholeState linear_init(const RayBundle& bundle) {
  const std::size_t n = bundle.size();
  Vec2 mean = Vec2::Zero();
  for (std::size_t k = 0; k < n; ++k) mean += bundle.patch_pixel(k);
  mean /= static_cast<double>(n);
  double spread = 0.0;
  for (std::size_t k = 0; k < n; ++k) spread += (bundle.patch_pixel(k) - mean).norm();
  spread = spread > 0.0 ? spread / static_cast<double>(n) : 1.0;
  const double s = std::sqrt(2.0) / spread;

  Eigen::MatrixXd a(2 * n, 9);
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2 p = (bundle.patch_pixel(k) - mean) * s;
    const Eigen::RowVector3d d = bundle.directions[k].transpose();
    a.row(2 * k) << -d, Eigen::RowVector3d::Zero(), p.x() * d;
    a.row(2 * k + 1) << Eigen::RowVector3d::Zero(), -d, p.y() * d;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd m = svd.matrixV().col(8);
  Mat3 normalized_m;
  normalized_m << m(0), m(1), m(2), m(3), m(4), m(5), m(6), m(7), m(8);
  Mat3 t_inv;
  t_inv << 1.0 / s, 0.0, mean.x(), 0.0, 1.0 / s, mean.y(), 0.0, 0.0, 1.0;
  Mat3 km = t_inv * normalized_m;
  if (km.determinant() < 0.0) km = -km;

  // RQ decomposition through QR of the flipped transpose
  Mat3 flip = Mat3::Zero();
  flip(0, 2) = flip(1, 1) = flip(2, 0) = 1.0;
  Eigen::HouseholderQR<Mat3> qr((flip * km).transpose());
  const Mat3 q = qr.householderQ();
  const Mat3 r_upper = qr.matrixQR().triangularView<Eigen::Upper>();
  Mat3 k = flip * r_upper.transpose() * flip;
  Mat3 rot = flip * q.transpose();
  const Vec3 signs(k(0, 0) < 0 ? -1.0 : 1.0, k(1, 1) < 0 ? -1.0 : 1.0, k(2, 2) < 0 ? -1.0 : 1.0);
  k = k * signs.asDiagonal();
  rot = signs.asDiagonal() * rot;
  k /= k(2, 2);

  PinholeState state;
  state.f = 0.5 * (k(0, 0) + k(1, 1));
  state.cx = k(0, 2);
  state.cy = k(1, 2);
  state.rotation = orthonormalize(rot);
  return state;
}

}  // namespace detail

/// Levenberg-Marquardt fit of a pinhole camera (shared focal, zero skew) and
/// pose to a ray bundle.
///
/// The cost is the sum of squared angular residuals between bundle
/// directions and the pinhole directions at the same patch pixels, plus the
/// squared distances from the camera center to every ray line. Rotation
/// updates are left-multiplied axis-angle increments. Damping starts at
/// `initial_lambda` and moves by a factor of 10 on reject / accept.
inline FitResult fit_pinhole(const RayBundle& bundle, const std::optional<FitResult>& init = std::nullopt,
                             const FitOptions& options = {}) {
  using ParamVec = Eigen::Matrix<double, detail::kFitParams, 1>;
  using ParamMat = Eigen::Matrix<double, detail::kFitParams, detail::kFitParams>;

  bundle.validate();
  if (bundle.size() < 6) throw DegenerateError("fit_pinhole: need at least 6 rays");
  double max_angle = 0.0;
  for (const auto& d : bundle.directions) max_angle = std::max(max_angle, angle_between(bundle.directions[0], d));
  if (max_angle < 1e-9) throw DegenerateError("fit_pinhole: all ray directions are parallel (rank-deficient Jacobian)");

  detail::PinholeState state;
  if (init) {
    state.f = 0.5 * (init->intrinsics.fx + init->intrinsics.fy);
    state.cx = init->intrinsics.cx;
    state.cy = init->intrinsics.cy;
    state.rotation = init->pose.rotation;
    state.center = init->pose.translation;
  } else {
    state = detail::linear_init(bundle);
    state.center = intersect_rays(bundle);
  }
  if (!(state.f > 0.0) || !std::isfinite(state.f))
    throw DegenerateError("fit_pinhole: linear initialization produced a non-positive focal length");

  const std::size_t m = 6 * bundle.size();
  Eigen::VectorXd residual = detail::fit_residuals(bundle, state);
  double cost = 0.5 * residual.squaredNorm();
  double lambda = options.initial_lambda;

  FitResult result;
  result.cost_history.push_back(cost);
  Eigen::MatrixXd jac(m, detail::kFitParams);

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    result.iterations = iter + 1;
    const double center_scale = std::max(1.0, state.center.norm());
    const std::array<double, detail::kFitParams> steps{1e-6 * state.f, 1e-6 * state.f, 1e-6 * state.f,
                                                       1e-6, 1e-6, 1e-6,
                                                       1e-6 * center_scale, 1e-6 * center_scale, 1e-6 * center_scale};
    for (int p = 0; p < detail::kFitParams; ++p) {
      ParamVec delta = ParamVec::Zero();
      delta(p) = steps[p];
      const Eigen::VectorXd plus = detail::fit_residuals(bundle, detail::perturbed(state, delta));
      delta(p) = -steps[p];
      const Eigen::VectorXd minus = detail::fit_residuals(bundle, detail::perturbed(state, delta));
      jac.col(p) = (plus - minus) / (2.0 * steps[p]);
    }
    const ParamVec gradient = jac.transpose() * residual;
    if (gradient.lpNorm<Eigen::Infinity>() < options.gradient_tolerance) {
      result.converged = true;
      break;
    }
    const ParamMat hessian = jac.transpose() * jac;

    bool accepted = false;
    bool tiny_step = false;
    while (!accepted && lambda < 1e16) {
      ParamMat damped = hessian;
      for (int p = 0; p < detail::kFitParams; ++p) damped(p, p) += lambda * std::max(hessian(p, p), 1e-12);
      const ParamVec delta = damped.ldlt().solve(-gradient);
      if (delta.norm() < options.step_tolerance) {
        tiny_step = true;
        break;
      }
      const detail::PinholeState candidate = detail::perturbed(state, delta);
      const Eigen::VectorXd cand_residual = detail::fit_residuals(bundle, candidate);
      const double cand_cost = 0.5 * cand_residual.squaredNorm();
      if (candidate.f > 0.0 && cand_cost < cost) {
        state = candidate;
        residual = cand_residual;
        cost = cand_cost;
        lambda = std::max(lambda / 10.0, 1e-15);
        accepted = true;
        result.cost_history.push_back(cost);
      } else {
        lambda *= 10.0;
      }
    }
    if (tiny_step || !accepted) {
      result.converged = tiny_step;
      break;
    }
  }

  result.intrinsics = Intrinsics{state.f, state.f, state.cx, state.cy, 0.0};
  result.pose = Pose{state.rotation, state.center};
  result.per_ray_residual_deg.resize(bundle.size());
  double sum_sq = 0.0;
  for (std::size_t k = 0; k < bundle.size(); ++k) {
    const double deg = rad2deg(residual.segment<3>(6 * k).norm());
    result.per_ray_residual_deg[k] = deg;
    sum_sq += deg * deg;
  }
  result.rms_angular_residual = std::sqrt(sum_sq / static_cast<double>(bundle.size()));
  return result;
}

}  // namespace raycal
