#pragma once

// Field inversion, flow extraction from ray bundles, and image remapping.

#include <raycal/aberration.hpp>
#include <raycal/image.hpp>
#include <raycal/ray_camera.hpp>

#include <cstdint>
#include <vector>

namespace raycal {

/// Inverts a displacement field node by node.
///
/// For node pixel q the fixed point x = q - disp(x) satisfies x + disp(x) = q;
/// the inverse displacement stored at q is x - q. Throws ConvergenceError
/// carrying the worst residual if some node stays above `tol` pixels.
inline DistortionField invert_field(const DistortionField& field, double tol = 1e-3, int max_iter = 200) {
  field.validate();
  if (!(tol > 0.0) || max_iter < 1) throw ParameterError("invert_field: tol and max_iter must be positive");
  DistortionField inverse = field;
  double worst = 0.0;
  for (int i = 0; i < field.grid_rows; ++i)
    for (int j = 0; j < field.grid_cols; ++j) {
      const Vec2 q = field.node_pixel(i, j);
      Vec2 x = q - field.at(i, j);
      double residual = (x + sample_field(field, field.to_normalized(x)) - q).norm();
      // iterate well past tol so interpolated probes between nodes inherit little node error
      for (int it = 0; it < max_iter && residual >= 1e-3 * tol; ++it) {
        x = q - sample_field(field, field.to_normalized(x));
        residual = (x + sample_field(field, field.to_normalized(x)) - q).norm();
      }
      worst = std::max(worst, residual);
      inverse.at(i, j) = x - q;
    }
  if (worst >= tol) throw ConvergenceError("invert_field did not converge", worst);
  return inverse;
}

/// Residual |x + F(x) - q| with x = q + G(q), for normalized probe point q.
inline double inversion_residual(const DistortionField& forward, const DistortionField& inverse, const Vec2& probe) {
  const Vec2 q(probe.x() * forward.image_width, probe.y() * forward.image_height);
  const Vec2 x = q + sample_field(inverse, inverse.to_normalized(q));
  return (x + sample_field(forward, forward.to_normalized(x)) - q).norm();
}

// ---------------------------------------------------------------------------
// Flow maps
// ---------------------------------------------------------------------------

/// Dense backward flow: output pixel p samples the input at p + flow(p).
/// Pixel (x, y) has its center at (x + 0.5, y + 0.5).
struct FlowMap {
  int width = 0;
  int height = 0;
  std::vector<Vec2> flow;
  std::vector<std::uint8_t> valid;

  FlowMap() = default;
  FlowMap(int w, int h)
      : width(w), height(h), flow(static_cast<std::size_t>(w) * h, Vec2::Zero()),
        valid(static_cast<std::size_t>(w) * h, 1) {
    if (w <= 0 || h <= 0) throw ParameterError("flow map dimensions must be positive");
  }

  Vec2& at(int x, int y) { return flow[static_cast<std::size_t>(y) * width + x]; }
  const Vec2& at(int x, int y) const { return flow[static_cast<std::size_t>(y) * width + x]; }

  double max_magnitude() const {
    double m = 0.0;
    for (const auto& f : flow) m = std::max(m, f.norm());
    return m;
  }
};

/// Flow sampled on the bundle's patch grid, before densification.
struct PatchFlow {
  int rows = 0;
  int cols = 0;
  double image_width = 0.0;
  double image_height = 0.0;
  std::vector<Vec2> flow;
  std::vector<std::uint8_t> valid;

  const Vec2& at(int i, int j) const { return flow[static_cast<std::size_t>(i) * cols + j]; }

  /// Bilinear interpolation between patch centers, clamped at the grid border.
  Vec2 sample(const Vec2& pixel, bool* is_valid = nullptr) const {
    const double gu = std::clamp(pixel.x() * cols / image_width - 0.5, 0.0, cols - 1.0);
    const double gv = std::clamp(pixel.y() * rows / image_height - 0.5, 0.0, rows - 1.0);
    const int j0 = std::min(static_cast<int>(gu), std::max(cols - 2, 0));
    const int i0 = std::min(static_cast<int>(gv), std::max(rows - 2, 0));
    const int j1 = std::min(j0 + 1, cols - 1);
    const int i1 = std::min(i0 + 1, rows - 1);
    const double a = gu - j0;
    const double b = gv - i0;
    if (is_valid) {
      auto ok = [&](int i, int j) { return valid[static_cast<std::size_t>(i) * cols + j] != 0; };
      *is_valid = ok(i0, j0) && ok(i0, j1) && ok(i1, j0) && ok(i1, j1);
    }
    return (1.0 - b) * ((1.0 - a) * at(i0, j0) + a * at(i0, j1)) + b * ((1.0 - a) * at(i1, j0) + a * at(i1, j1));
  }
};

/// Per-patch deviation of a bundle from a pinhole camera: each world ray is
/// projected through (intrinsics, pose) and the flow is ideal - patch pixel.
/// Rays at or behind the camera plane get zero flow and a cleared valid bit.
inline PatchFlow patch_flow_from_rays(const RayBundle& bundle, const Intrinsics& intrinsics, const Pose& pose) {
  bundle.validate();
  intrinsics.validate();
  PatchFlow out{bundle.rows, bundle.cols, bundle.image_width, bundle.image_height,
                std::vector<Vec2>(bundle.size(), Vec2::Zero()), std::vector<std::uint8_t>(bundle.size(), 1)};
  for (std::size_t k = 0; k < bundle.size(); ++k) {
    const Vec3 d = pose.rotation * bundle.directions[k];
    if (d.z() <= 0.0) {
      out.valid[k] = 0;
      continue;
    }
    out.flow[k] = intrinsics.project(d) - bundle.patch_pixel(k);
  }
  return out;
}

inline FlowMap densify(const PatchFlow& patches, int image_w, int image_h) {
  FlowMap out(image_w, image_h);
  // patch flows are in pixels of the bundle's own image extent
  const double sx = patches.image_width / image_w;
  const double sy = patches.image_height / image_h;
  for (int y = 0; y < image_h; ++y)
    for (int x = 0; x < image_w; ++x) {
      bool ok = true;
      const Vec2 f = patches.sample(Vec2((x + 0.5) * sx, (y + 0.5) * sy), &ok);
      out.at(x, y) = Vec2(f.x() / sx, f.y() / sy);
      out.valid[static_cast<std::size_t>(y) * image_w + x] = ok ? 1 : 0;
      if (!ok) out.at(x, y) = Vec2::Zero();
    }
  return out;
}

/// Dense flow of a bundle's deviation from a pinhole camera.
inline FlowMap flow_from_rays(const RayBundle& bundle, const Intrinsics& intrinsics, const Pose& pose, int image_w,
                              int image_h) {
  return densify(patch_flow_from_rays(bundle, intrinsics, pose), image_w, image_h);
}

/// Dense forward flow D(p) - p at every pixel center.
inline FlowMap flow_from_map(const PixelMap& forward, int image_w, int image_h) {
  FlowMap out(image_w, image_h);
  for (int y = 0; y < image_h; ++y)
    for (int x = 0; x < image_w; ++x) {
      const Vec2 p(x + 0.5, y + 0.5);
      out.at(x, y) = forward(p) - p;
    }
  return out;
}

inline FlowMap flow_from_field(const DistortionField& field, int image_w, int image_h) {
  return flow_from_map(field_map(rescaled(field, image_w, image_h)), image_w, image_h);
}

/// Dense inverse flow: for every pixel center q solves x + (D(x) - x) = q by
/// fixed-point iteration and stores x - q. Remapping a distorted image with
/// this flow undoes D.
inline FlowMap inverse_flow(const PixelMap& forward, int image_w, int image_h, double tol = 1e-6,
                            int max_iter = 500) {
  FlowMap out(image_w, image_h);
  double worst = 0.0;
  for (int y = 0; y < image_h; ++y)
    for (int x = 0; x < image_w; ++x) {
      const Vec2 q(x + 0.5, y + 0.5);
      Vec2 p = q;
      double residual = (forward(p) - q).norm();
      // iterate well past tol so interpolated probes between nodes inherit little node error
      for (int it = 0; it < max_iter && residual >= 1e-3 * tol; ++it) {
        p = q - (forward(p) - p);
        residual = (forward(p) - q).norm();
      }
      worst = std::max(worst, residual);
      out.at(x, y) = p - q;
    }
  if (worst >= tol) throw ConvergenceError("inverse_flow did not converge", worst);
  return out;
}

/// Bilinear sample at a continuous pixel position; outside the image -> 0.
inline double sample_bilinear(const Image& image, const Vec2& position, int channel) {
  constexpr double eps = 1e-9;
  double u = position.x() - 0.5;
  double v = position.y() - 0.5;
  if (u < -eps || v < -eps || u > image.width - 1 + eps || v > image.height - 1 + eps) return 0.0;
  u = std::clamp(u, 0.0, image.width - 1.0);
  v = std::clamp(v, 0.0, image.height - 1.0);
  const int x0 = std::min(static_cast<int>(u), std::max(image.width - 2, 0));
  const int y0 = std::min(static_cast<int>(v), std::max(image.height - 2, 0));
  const int x1 = std::min(x0 + 1, image.width - 1);
  const int y1 = std::min(y0 + 1, image.height - 1);
  const double a = u - x0;
  const double b = v - y0;
  return (1.0 - b) * ((1.0 - a) * image.at(x0, y0, channel) + a * image.at(x1, y0, channel)) +
         b * ((1.0 - a) * image.at(x0, y1, channel) + a * image.at(x1, y1, channel));
}

inline Image remap_image(const Image& image, const FlowMap& flow) {
  if (image.width != flow.width || image.height != flow.height)
    throw ParameterError("remap_image: flow is " + std::to_string(flow.width) + "x" + std::to_string(flow.height) +
                         " but image is " + std::to_string(image.width) + "x" + std::to_string(image.height));
  Image out(image.width, image.height, image.channels);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const Vec2 src = Vec2(x + 0.5, y + 0.5) + flow.at(x, y);
      for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = sample_bilinear(image, src, c);
    }
  return out;
}

}  // namespace raycal
