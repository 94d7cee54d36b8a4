#pragma once

// DDPM forward noising and ancestral reverse sampling over flattened ray
// grids, plus the three training losses.

#include <raycal/core.hpp>
#include <raycal/distortion.hpp>
#include <raycal/ray_camera.hpp>
#include <raycal/rng.hpp>

#include <functional>
#include <optional>
#include <vector>

namespace raycal {

/// One row per ray: origin (x, y, z) then direction (x, y, z).
using RayArray = Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor>;

inline RayArray to_ray_array(const RayBundle& bundle) {
  RayArray out(static_cast<Eigen::Index>(bundle.size()), 6);
  for (std::size_t k = 0; k < bundle.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) << bundle.origins[k].transpose(), bundle.directions[k].transpose();
  }
  return out;
}

/// Inverse of to_ray_array; directions are normalized.
inline RayBundle to_bundle(const RayArray& rays, int rows, int cols, double image_w = 0.0, double image_h = 0.0) {
  if (static_cast<Eigen::Index>(rows) * cols != rays.rows())
    throw ParameterError("to_bundle: ray count does not match grid");
  RayBundle out(rows, cols, image_w, image_h);
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto row = rays.row(static_cast<Eigen::Index>(k));
    out.origins[k] = row.head<3>().transpose();
    const Vec3 d = row.tail<3>().transpose();
    if (!(d.norm() > 0.0)) throw ParameterError("to_bundle: zero direction");
    out.directions[k] = d.normalized();
  }
  return out;
}

/// Linear beta schedule. Step t runs 1..T; alpha_bar(0) is 1 by convention.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;       // betas[t - 1]
  std::vector<double> alphas;      // 1 - beta
  std::vector<double> alpha_bars;  // running product

  double beta(int t) const { return betas.at(static_cast<std::size_t>(t - 1)); }
  double alpha(int t) const { return alphas.at(static_cast<std::size_t>(t - 1)); }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars.at(static_cast<std::size_t>(t - 1)); }
};

inline NoiseSchedule make_schedule(int T = 100, double beta_start = 1e-4, double beta_end = 0.02) {
  if (T < 1) throw ParameterError("make_schedule: T must be at least 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw ParameterError("make_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  double running = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double beta = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * (t - 1) / (T - 1.0);
    s.betas.push_back(beta);
    s.alphas.push_back(1.0 - beta);
    running *= 1.0 - beta;
    s.alpha_bars.push_back(running);
  }
  return s;
}

/// r_t = sqrt(alpha_bar_t) r_0 + sqrt(1 - alpha_bar_t) eps.
inline RayArray forward_noise(const RayArray& clean, const NoiseSchedule& schedule, int t, const RayArray& noise) {
  if (clean.rows() != noise.rows()) throw ParameterError("forward_noise: noise shape differs from bundle shape");
  if (t < 0 || t > schedule.T) throw ParameterError("forward_noise: step outside [0, T]");
  const double ab = schedule.alpha_bar(t);
  return std::sqrt(ab) * clean + std::sqrt(1.0 - ab) * noise;
}

inline RayArray standard_normal(Eigen::Index rows, CounterRng& rng) {
  RayArray out(rows, 6);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < 6; ++j) out(i, j) = rng.normal();
  return out;
}

/// Opaque conditioning latents handed through to the denoiser untouched.
using Conditioning = std::optional<Eigen::MatrixXd>;

/// Predicts the clean ray array from a noisy one at step t.
using Denoiser = std::function<RayArray(const RayArray& noisy, int t, const Conditioning& conditioning)>;

/// Denoiser that always returns the same clean rays.
inline Denoiser oracle_denoiser(RayArray target) {
  return [target = std::move(target)](const RayArray&, int, const Conditioning&) { return target; };
}

struct SampleOptions {
  double noise_scale = 1.0;  // 0 disables both the initial draw and per-step noise
  Conditioning conditioning;
  std::function<void(int t, const RayArray& x)> on_step;  // called with x_{t-1}
};

/// Ancestral DDPM sampling with an x0-predicting denoiser.
///
/// Each step forms the posterior mean
///   mu = (sqrt(ab_{t-1}) beta_t x0_hat + sqrt(alpha_t) (1 - ab_{t-1}) x_t) / (1 - ab_t)
/// and adds sigma_t z with sigma_t^2 = (1 - ab_{t-1}) / (1 - ab_t) beta_t
/// (zero at t = 1). Directions are renormalized after the last step only.
inline RayArray reverse_sample(const Denoiser& denoiser, const NoiseSchedule& schedule, Eigen::Index num_rays,
                               std::uint64_t seed, const SampleOptions& options = {}) {
  if (!denoiser) throw ParameterError("reverse_sample: no denoiser");
  if (num_rays < 1) throw ParameterError("reverse_sample: need at least one ray");
  CounterRng rng(seed);
  RayArray x = options.noise_scale * standard_normal(num_rays, rng);
  for (int t = schedule.T; t >= 1; --t) {
    const RayArray x0 = denoiser(x, t, options.conditioning);
    if (x0.rows() != x.rows() || !x0.allFinite())
      throw ContractError("denoiser returned " + std::to_string(x0.rows()) + " rays for an input of " +
                          std::to_string(x.rows()) + " (or non-finite values) at step " + std::to_string(t));
    const double ab = schedule.alpha_bar(t);
    const double ab_prev = schedule.alpha_bar(t - 1);
    const double beta = schedule.beta(t);
    const RayArray mean =
        (std::sqrt(ab_prev) * beta / (1.0 - ab)) * x0 + (std::sqrt(schedule.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab)) * x;
    if (t > 1) {
      const double sigma = std::sqrt((1.0 - ab_prev) / (1.0 - ab) * beta);
      x = mean + (options.noise_scale * sigma) * standard_normal(num_rays, rng);
    } else {
      x = mean;
    }
    if (options.on_step) options.on_step(t, x);
  }
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double n = x.row(i).tail<3>().norm();
    if (n > 0.0) x.row(i).tail<3>() /= n;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline double loss_denoise(const RayArray& predicted, const RayArray& reference) {
  if (predicted.rows() != reference.rows()) throw ParameterError("loss_denoise: shapes differ");
  if (predicted.size() == 0) throw ParameterError("loss_denoise: empty input");
  return (predicted - reference).squaredNorm() / static_cast<double>(predicted.size());
}

/// Angle in radians between two directions. Cosines beyond [-1, 1] by more
/// than 1e-12 are contract violations, smaller excursions are roundoff.
inline double direction_angle(const Vec3& a, const Vec3& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw ParameterError("angular error: zero-norm direction");
  const double c = a.dot(b) / (na * nb);
  if (std::abs(c) > 1.0 + 1e-12) throw ParameterError("angular error: cosine outside [-1, 1]");
  return std::acos(clamp_unit(c));
}

/// Mean ray angle in degrees.
inline double loss_angular(const std::vector<Vec3>& predicted, const std::vector<Vec3>& reference) {
  if (predicted.size() != reference.size()) throw ParameterError("loss_angular: shapes differ");
  if (predicted.empty()) throw ParameterError("loss_angular: empty input");
  double sum = 0.0;
  for (std::size_t k = 0; k < predicted.size(); ++k) sum += direction_angle(predicted[k], reference[k]);
  return rad2deg(sum / static_cast<double>(predicted.size()));
}

inline double loss_angular(const RayArray& predicted, const RayArray& reference) {
  if (predicted.rows() != reference.rows()) throw ParameterError("loss_angular: shapes differ");
  std::vector<Vec3> a, b;
  for (Eigen::Index i = 0; i < predicted.rows(); ++i) {
    a.emplace_back(predicted.row(i).tail<3>().transpose());
    b.emplace_back(reference.row(i).tail<3>().transpose());
  }
  return loss_angular(a, b);
}

inline double loss_distort(const FlowMap& predicted, const FlowMap& reference) {
  if (predicted.width != reference.width || predicted.height != reference.height)
    throw ParameterError("loss_distort: flow dimensions differ");
  double sum = 0.0;
  for (std::size_t k = 0; k < predicted.flow.size(); ++k) sum += (predicted.flow[k] - reference.flow[k]).squaredNorm();
  return sum / static_cast<double>(predicted.flow.size());
}

}  // namespace raycal
