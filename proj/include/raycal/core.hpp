#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace raycal {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;
inline constexpr char kToolVersion[] = "0.3.1";

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

// ---------------------------------------------------------------------------
// Errors. Each category maps onto one CLI exit code (see tools/raycal.cpp).
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or violated precondition.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Input is geometrically degenerate (parallel rays, collinear points, zero scale).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver did not reach its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double worst_residual)
      : Error(what), worst_residual_(worst_residual) {}
  double worst_residual() const { return worst_residual_; }

 private:
  double worst_residual_;
};

/// A pluggable component (e.g. a denoiser) broke its shape contract.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Database or file failed schema validation.
class LoadError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Camera parameters
// ---------------------------------------------------------------------------

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double skew = 0.0;

  Mat3 matrix() const {
    Mat3 k;
    k << fx, skew, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  void validate() const {
    if (!(std::isfinite(fx) && std::isfinite(fy) && std::isfinite(cx) && std::isfinite(cy) &&
          std::isfinite(skew)))
      throw ParameterError("intrinsics contain non-finite values");
    if (!(fx > 0.0) || !(fy > 0.0))
      throw ParameterError("intrinsics: focal lengths must be positive (K not invertible)");
  }

  /// K^-1 applied to a homogeneous pixel (u, v, 1).
  Vec3 unproject(const Vec2& pixel) const {
    const double y = (pixel.y() - cy) / fy;
    const double x = (pixel.x() - cx - skew * y) / fx;
    return {x, y, 1.0};
  }

  Vec2 project(const Vec3& camera_point) const {
    const double x = camera_point.x() / camera_point.z();
    const double y = camera_point.y() / camera_point.z();
    return {fx * x + skew * y + cx, fy * y + cy};
  }
};

inline constexpr double kRotationTolerance = 1e-9;

inline bool is_rotation(const Mat3& r, double tol = kRotationTolerance) {
  if (!r.allFinite()) return false;
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(r.determinant() - 1.0) <= tol;
}

/// Camera pose.
///
/// `rotation` maps world directions into the camera frame; `translation` is
/// the camera center in world coordinates. A camera-frame point x maps to the
/// world as rotation^T * x + translation. This convention is used everywhere
/// in the library, including the evaluation metrics.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  void validate() const {
    if (!is_rotation(rotation)) throw ParameterError("pose rotation is not a proper rotation");
    if (!translation.allFinite()) throw ParameterError("pose translation is not finite");
  }
};

inline Vec3 camera_center(const Pose& pose) { return pose.translation; }

/// Rotation matrix from an axis-angle vector (Rodrigues).
inline Mat3 exp_so3(const Vec3& omega) {
  const double angle = omega.norm();
  if (angle < 1e-300) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
}

/// Nearest rotation in the Frobenius sense.
inline Mat3 orthonormalize(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

inline double clamp_unit(double c) { return c > 1.0 ? 1.0 : (c < -1.0 ? -1.0 : c); }

/// Angle between two non-zero vectors in radians.
inline double angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

}  // namespace raycal
