#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcs/image_grid.hpp"

namespace mcs {

/// DDPM coefficient tables, 1-based in t. alpha_bar(0) is defined as 1.
class NoiseSchedule {
 public:
  static NoiseSchedule linear(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw std::invalid_argument("NoiseSchedule: step count must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
      throw std::invalid_argument("NoiseSchedule: require 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> betas(static_cast<std::size_t>(steps));
    for (int t = 1; t <= steps; ++t) {
      const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
      betas[static_cast<std::size_t>(t - 1)] = beta_start + frac * (beta_end - beta_start);
    }
    return NoiseSchedule(std::move(betas));
  }

  explicit NoiseSchedule(std::vector<double> betas) {
    if (betas.empty()) throw std::invalid_argument("NoiseSchedule: empty beta table");
    beta_.assign(1, 0.0);
    alpha_.assign(1, 1.0);
    alpha_bar_.assign(1, 1.0);
    for (double b : betas) {
      if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("NoiseSchedule: beta outside (0,1)");
      beta_.push_back(b);
      alpha_.push_back(1.0 - b);
      alpha_bar_.push_back(alpha_bar_.back() * (1.0 - b));
    }
  }

  [[nodiscard]] int steps() const { return static_cast<int>(beta_.size()) - 1; }

  [[nodiscard]] double beta(int t) const { return beta_[checked(t, 1)]; }
  [[nodiscard]] double alpha(int t) const { return alpha_[checked(t, 1)]; }
  [[nodiscard]] double alpha_bar(int t) const { return alpha_bar_[checked(t, 0)]; }

  /// σ_t² = (1 - ᾱ_{t-1}) / (1 - ᾱ_t) · β_t; zero at t = 1.
  [[nodiscard]] double posterior_variance(int t) const {
    return (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * beta(t);
  }

 private:
  [[nodiscard]] std::size_t checked(int t, int lo) const {
    if (t < lo || t > steps()) {
      throw std::out_of_range("NoiseSchedule: timestep " + std::to_string(t) + " outside [" +
                              std::to_string(lo) + ", " + std::to_string(steps()) + "]");
    }
    return static_cast<std::size_t>(t);
  }

  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
};

inline NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end) {
  return NoiseSchedule::linear(steps, beta_start, beta_end);
}

/// Linear 1e-4..0.02 endpoints, rescaled by 1000/steps so that a short chain
/// still ends near pure noise (ᾱ_T ≈ 5e-5 for 150 steps). Chains of 20 steps
/// or fewer would push β_T past 1 and keep the unscaled endpoints.
inline NoiseSchedule make_default_schedule(int steps = 150) {
  const double scale = steps > 20 ? 1000.0 / steps : 1.0;
  return NoiseSchedule::linear(steps, 1e-4 * scale, 0.02 * scale);
}

inline ImageGrid forward_noise(const ImageGrid& x0, int t, const ImageGrid& eps, const NoiseSchedule& sched) {
  ImageGrid::require_same_shape(x0, eps, "forward_noise");
  const double ab = sched.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  ImageGrid out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

inline ImageGrid estimate_x0(const ImageGrid& x_t, const ImageGrid& eps_pred, int t, const NoiseSchedule& sched) {
  ImageGrid::require_same_shape(x_t, eps_pred, "estimate_x0");
  const double ab = sched.alpha_bar(t);
  const double inv = 1.0 / std::sqrt(ab);
  const double c = std::sqrt((1.0 - ab) / ab);
  ImageGrid out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x_t[i] * inv - eps_pred[i] * c;
  return out;
}

/// μ_θ = (x_t - β_t / sqrt(1 - ᾱ_t) · ε) / sqrt(α_t)
inline ImageGrid posterior_mean(const ImageGrid& x_t, const ImageGrid& eps_pred, int t, const NoiseSchedule& sched) {
  ImageGrid::require_same_shape(x_t, eps_pred, "posterior_mean");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
  const double c = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
  ImageGrid out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = inv_sqrt_alpha * (x_t[i] - c * eps_pred[i]);
  return out;
}

/// mean + σ_t · noise, with the noise term dropped at t = 1.
inline ImageGrid add_posterior_noise(ImageGrid mean, int t, const ImageGrid& noise, const NoiseSchedule& sched) {
  if (t == 1) return mean;
  ImageGrid::require_same_shape(mean, noise, "add_posterior_noise");
  const double sigma = std::sqrt(sched.posterior_variance(t));
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += sigma * noise[i];
  return mean;
}

inline ImageGrid posterior_step_unguided(const ImageGrid& x_t, const ImageGrid& eps_pred, int t,
                                         const NoiseSchedule& sched, const ImageGrid& noise) {
  return add_posterior_noise(posterior_mean(x_t, eps_pred, t, sched), t, noise, sched);
}

}  // namespace mcs
