#pragma once

// Geometric aberration models: closed-form parametric profiles and sampled
// displacement fields. Both act as a pixel-to-pixel map D(p).

#include <raycal/core.hpp>

#include <algorithm>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace raycal {

enum class ProfileKind { radial_poly, kannala_brandt, shear };

inline std::string_view to_string(ProfileKind kind) {
  switch (kind) {
    case ProfileKind::radial_poly: return "radial_poly";
    case ProfileKind::kannala_brandt: return "kannala_brandt";
    case ProfileKind::shear: return "shear";
  }
  return "unknown";
}

inline ProfileKind profile_kind_from_string(std::string_view name) {
  if (name == "radial_poly") return ProfileKind::radial_poly;
  if (name == "kannala_brandt") return ProfileKind::kannala_brandt;
  if (name == "shear") return ProfileKind::shear;
  throw ParameterError("unknown profile kind '" + std::string(name) + "'");
}

inline std::size_t coefficient_count(ProfileKind kind) {
  switch (kind) {
    case ProfileKind::radial_poly: return 2;
    case ProfileKind::kannala_brandt: return 4;
    case ProfileKind::shear: return 1;
  }
  return 0;
}

/// Closed-form distortion profile.
///
///   radial_poly     coefficients {k1, k2}
///   kannala_brandt  coefficients {k1, k2, k3, k4}
///   shear           coefficients {s}
///
/// Radii are normalized by `normalization_radius` (pixels), so a profile
/// authored for one image size keeps its shape when rescaled to another.
struct ParametricProfile {
  ProfileKind kind = ProfileKind::radial_poly;
  std::vector<double> coefficients{0.0, 0.0};
  double normalization_radius = 1.0;

  static ParametricProfile radial(double k1, double k2, double normalization_radius) {
    return {ProfileKind::radial_poly, {k1, k2}, normalization_radius};
  }
  static ParametricProfile kannala_brandt(double k1, double k2, double k3, double k4,
                                          double normalization_radius) {
    return {ProfileKind::kannala_brandt, {k1, k2, k3, k4}, normalization_radius};
  }
  static ParametricProfile shear(double s, double normalization_radius = 1.0) {
    return {ProfileKind::shear, {s}, normalization_radius};
  }

  void validate() const {
    if (coefficients.size() != coefficient_count(kind))
      throw ParameterError(std::string("profile ") + std::string(to_string(kind)) + " expects " +
                           std::to_string(coefficient_count(kind)) + " coefficients, got " +
                           std::to_string(coefficients.size()));
    for (double c : coefficients)
      if (!std::isfinite(c)) throw ParameterError("profile coefficients must be finite");
    if (!(normalization_radius > 0.0) || !std::isfinite(normalization_radius))
      throw ParameterError("profile normalization_radius must be positive");
  }

  bool is_identity() const {
    return std::all_of(coefficients.begin(), coefficients.end(), [](double c) { return c == 0.0; });
  }
};

/// Half the image diagonal: the default normalization radius.
inline double half_diagonal(double width, double height) {
  return 0.5 * std::hypot(width, height);
}

/// Kannala-Brandt radial scale minus one at normalized radius r:
/// theta_d / theta - 1 with theta = atan(r). Zero when all coefficients vanish.
inline double kannala_brandt_excess(const std::vector<double>& k, double r) {
  const double theta = std::atan(r);
  const double t2 = theta * theta;
  return t2 * (k[0] + t2 * (k[1] + t2 * (k[2] + t2 * k[3])));
}

inline double kannala_brandt_scale(const std::vector<double>& k, double r) { return 1.0 + kannala_brandt_excess(k, r); }

/// D(p) for a parametric profile about `center`. Written as p plus a
/// displacement so that zero coefficients return p bit for bit.
inline Vec2 apply_profile(const ParametricProfile& profile, const Vec2& point, const Vec2& center) {
  const Vec2 offset = point - center;
  const auto& k = profile.coefficients;
  switch (profile.kind) {
    case ProfileKind::radial_poly: {
      const double r2 = offset.squaredNorm() / (profile.normalization_radius * profile.normalization_radius);
      return point + offset * (r2 * (k[0] + k[1] * r2));
    }
    case ProfileKind::kannala_brandt:
      return point + offset * kannala_brandt_excess(k, offset.norm() / profile.normalization_radius);
    case ProfileKind::shear:
      return point + Vec2(k[0] * offset.y(), 0.0);
  }
  return point;
}

/// Percent deviation of an actual radial distance from its reference.
inline double distortion_percent(double d_actual, double d_reference) {
  if (!(d_reference > 0.0)) throw ParameterError("distortion_percent: reference distance must be positive");
  return 100.0 * (d_actual - d_reference) / d_reference;
}

// ---------------------------------------------------------------------------
// Sampled displacement field
// ---------------------------------------------------------------------------

/// Displacements (pixels) on a regular grid over normalized image coordinates.
/// Node (i, j) sits at normalized (j / (cols - 1), i / (rows - 1)), which maps
/// to pixel (u * image_width, v * image_height).
struct DistortionField {
  int grid_rows = 0;
  int grid_cols = 0;
  double image_width = 0.0;
  double image_height = 0.0;
  std::vector<Vec2> displacements;  // row-major

  DistortionField() = default;
  DistortionField(int rows, int cols, double image_w, double image_h)
      : grid_rows(rows),
        grid_cols(cols),
        image_width(image_w),
        image_height(image_h),
        displacements(static_cast<std::size_t>(std::max(rows, 0)) * std::max(cols, 0), Vec2::Zero()) {
    validate();
  }

  Vec2& at(int i, int j) { return displacements[static_cast<std::size_t>(i) * grid_cols + j]; }
  const Vec2& at(int i, int j) const { return displacements[static_cast<std::size_t>(i) * grid_cols + j]; }

  Vec2 node_position(int i, int j) const {
    return {static_cast<double>(j) / (grid_cols - 1), static_cast<double>(i) / (grid_rows - 1)};
  }
  Vec2 node_pixel(int i, int j) const {
    const Vec2 uv = node_position(i, j);
    return {uv.x() * image_width, uv.y() * image_height};
  }
  Vec2 to_normalized(const Vec2& pixel) const { return {pixel.x() / image_width, pixel.y() / image_height}; }

  void validate() const {
    if (grid_rows < 2 || grid_cols < 2) throw ParameterError("distortion field grid must be at least 2x2");
    if (!(image_width > 0.0) || !(image_height > 0.0))
      throw ParameterError("distortion field image extent must be positive");
    if (displacements.size() != static_cast<std::size_t>(grid_rows) * grid_cols)
      throw ParameterError("distortion field has " + std::to_string(displacements.size()) +
                           " displacements, expected " + std::to_string(grid_rows * grid_cols));
    for (const auto& d : displacements)
      if (!d.allFinite()) throw ParameterError("distortion field displacements must be finite");
  }
};

/// The same field expressed for an image of a different size.
inline DistortionField rescaled(const DistortionField& field, double image_w, double image_h) {
  DistortionField out = field;
  out.image_width = image_w;
  out.image_height = image_h;
  const double sx = image_w / field.image_width;
  const double sy = image_h / field.image_height;
  for (auto& d : out.displacements) d = Vec2(d.x() * sx, d.y() * sy);
  out.validate();
  return out;
}

/// Bilinear interpolation of node displacements at normalized coordinates.
/// Queries outside [0,1]^2 are clamped to the boundary.
inline Vec2 sample_field(const DistortionField& field, const Vec2& point) {
  const double u = std::clamp(point.x(), 0.0, 1.0) * (field.grid_cols - 1);
  const double v = std::clamp(point.y(), 0.0, 1.0) * (field.grid_rows - 1);
  const int j0 = std::min(static_cast<int>(u), field.grid_cols - 2);
  const int i0 = std::min(static_cast<int>(v), field.grid_rows - 2);
  const double a = u - j0;
  const double b = v - i0;
  return (1.0 - b) * ((1.0 - a) * field.at(i0, j0) + a * field.at(i0, j0 + 1)) +
         b * ((1.0 - a) * field.at(i0 + 1, j0) + a * field.at(i0 + 1, j0 + 1));
}

/// Field of D(p) - p evaluated at every node, with the profile centered on the image.
inline DistortionField field_from_profile(const ParametricProfile& profile, int grid_rows, int grid_cols,
                                          double image_w, double image_h) {
  profile.validate();
  if (!(image_w > 0.0) || !(image_h > 0.0)) throw ParameterError("image dimensions must be positive");
  DistortionField field(grid_rows, grid_cols, image_w, image_h);
  const Vec2 center(0.5 * image_w, 0.5 * image_h);
  for (int i = 0; i < grid_rows; ++i)
    for (int j = 0; j < grid_cols; ++j) {
      const Vec2 node = field.node_pixel(i, j);
      field.at(i, j) = apply_profile(profile, node, center) - node;
    }
  return field;
}

/// A distortion as a pixel-to-pixel map.
using PixelMap = std::function<Vec2(const Vec2&)>;

inline PixelMap profile_map(ParametricProfile profile, Vec2 center) {
  profile.validate();
  return [profile = std::move(profile), center](const Vec2& p) { return apply_profile(profile, p, center); };
}

/// D(p) = p + field(p), with p in pixels of the field's image extent.
inline PixelMap field_map(DistortionField field) {
  field.validate();
  return [field = std::move(field)](const Vec2& p) { return Vec2(p + sample_field(field, field.to_normalized(p))); };
}

/// Largest |distortion percent| of a map over a probe grid of the image.
/// Points closer than 2% of the half-diagonal to the center are skipped.
inline double max_abs_distortion_percent(const PixelMap& map, double image_w, double image_h, int probes = 33) {
  const Vec2 center(0.5 * image_w, 0.5 * image_h);
  const double min_radius = 0.02 * half_diagonal(image_w, image_h);
  double worst = 0.0;
  for (int i = 0; i < probes; ++i)
    for (int j = 0; j < probes; ++j) {
      const Vec2 p(image_w * j / (probes - 1.0), image_h * i / (probes - 1.0));
      const double ref = (p - center).norm();
      if (ref < min_radius) continue;
      worst = std::max(worst, std::abs(distortion_percent((map(p) - center).norm(), ref)));
    }
  return worst;
}

}  // namespace raycal
