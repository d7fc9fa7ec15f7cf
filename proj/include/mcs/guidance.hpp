#pragma once

#include <cmath>
#include <concepts>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mcs/degrade.hpp"
#include "mcs/diffusion.hpp"
#include "mcs/gmm.hpp"
#include "mcs/haar.hpp"
#include "mcs/image_grid.hpp"
#include "mcs/linops.hpp"
#include "mcs/rng.hpp"

namespace mcs {

/// Which guidance term drove a step.
enum class Measurement { none, forward, reverse, data_fidelity, null_space };

inline std::string to_string(Measurement m) {
  switch (m) {
    case Measurement::none: return "none";
    case Measurement::forward: return "forward";
    case Measurement::reverse: return "reverse";
    case Measurement::data_fidelity: return "data";
    case Measurement::null_space: return "nullspace";
  }
  return "?";
}

inline Measurement measurement_from_string(const std::string& s) {
  for (auto m : {Measurement::none, Measurement::forward, Measurement::reverse, Measurement::data_fidelity,
                 Measurement::null_space}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown measurement tag '" + s + "'");
}

/// alg1: x_{t-1} ~ N(μ_θ − Σ_θ η g, Σ_θ).
/// reanchor: x_{t-1} = sqrt(ᾱ_t) y0 + sqrt(1−ᾱ_t) ε_θ − η g + σ_t ε'.
enum class UpdateRule { alg1, reanchor };

/// xhat: g is the gradient w.r.t. x̂ with the denoiser held fixed.
/// chain: g is additionally scaled by dx̂/dx_t = 1/sqrt(ᾱ_t).
enum class GradientTarget { xhat, chain };

struct WeightRatio {
  double forward = 1.0;
  double reverse = 1.0;
};

struct GuidanceConfig {
  double eta_forward = 1.0;
  double eta_reverse = 1.0;
  double boundary = 0.6;
  WeightRatio weight_ratio;
  UpdateRule update_rule = UpdateRule::alg1;
  GradientTarget gradient_target = GradientTarget::xhat;
  double t_start_fraction = 1.0;
  int haar_levels = 1;
  int snapshot_stride = 5;

  void validate() const {
    auto nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
    if (!nonneg(eta_forward) || !nonneg(eta_reverse)) throw std::invalid_argument("GuidanceConfig: step sizes must be finite and >= 0");
    if (!nonneg(weight_ratio.forward) || !nonneg(weight_ratio.reverse))
      throw std::invalid_argument("GuidanceConfig: weight ratio entries must be finite and >= 0");
    if (!(boundary > 0.0 && boundary < 1.0)) throw std::invalid_argument("GuidanceConfig: boundary must lie in (0,1)");
    if (!(t_start_fraction > 0.0 && t_start_fraction <= 1.0))
      throw std::invalid_argument("GuidanceConfig: t_start_fraction must lie in (0,1]");
    if (haar_levels < 1) throw std::invalid_argument("GuidanceConfig: haar_levels must be >= 1");
    if (snapshot_stride < 1) throw std::invalid_argument("GuidanceConfig: snapshot_stride must be >= 1");
  }
};

struct StepRecord {
  int t = 0;
  Measurement measurement = Measurement::none;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::optional<ImageGrid> x0_hat;
};

struct Trajectory {
  Shape shape;
  std::vector<StepRecord> steps;  // t strictly decreasing
};

struct SampleResult {
  ImageGrid x0;
  Trajectory trajectory;
};

class NumericalAbort : public std::runtime_error {
 public:
  NumericalAbort(int step, const std::string& what)
      : std::runtime_error("non-finite value at step t=" + std::to_string(step) + " (" + what +
                           "); the guidance step size is likely too large"),
        step_(step) {}
  [[nodiscard]] int step() const { return step_; }

 private:
  int step_;
};

/// ε-prediction network stand-in: predict_eps(x_t, t, condition).
template <class D>
concept EpsPredictor = requires(const D& d, const ImageGrid& x, int t, const Condition& c) {
  { d.predict_eps(x, t, c) } -> std::convertible_to<ImageGrid>;
};

/// Forward measurement on [⌈boundary·T⌉, T], reverse measurement below.
inline Measurement select_measurement(int t, int total, double boundary) {
  if (t < 1 || t > total) throw std::out_of_range("select_measurement: t outside [1, T]");
  const int threshold = static_cast<int>(std::ceil(boundary * total - 1e-9));
  return t >= threshold ? Measurement::forward : Measurement::reverse;
}

struct LossGrad {
  double loss = 0.0;
  ImageGrid grad;
};

/// L1 = ‖VHD(y0) − VHD(x̂)‖² over every detail band of a `levels`-deep Haar
/// pyramid. The transform is orthonormal, so its adjoint is the reconstruction.
inline LossGrad forward_loss_grad(const ImageGrid& y0, const ImageGrid& xhat, int levels = 1) {
  ImageGrid::require_same_shape(y0, xhat, "forward_loss_grad");
  const HaarPyramid py = haar_decompose_levels(y0, levels);
  HaarPyramid px = haar_decompose_levels(xhat, levels);
  double loss = 0.0;
  for (std::size_t l = 0; l < px.details.size(); ++l) {
    for (std::size_t b = 0; b < 3; ++b) {
      ImageGrid& d = px.details[l][b];
      d -= py.details[l][b];
      loss += squared_norm(d);
      d *= 2.0;
    }
  }
  px.low = ImageGrid(px.low.shape());
  return {loss, haar_reconstruct_levels(px)};
}

/// L2 = ‖y0 − A†A x̂‖²; gradient 2(P x̂ − P y0) with P = A†A.
inline LossGrad reverse_loss_grad(const ImageGrid& y0, const ImageGrid& xhat, const LinearOperator& a) {
  ImageGrid::require_same_shape(y0, xhat, "reverse_loss_grad");
  if (a.in_shape() != xhat.shape()) throw std::invalid_argument("reverse_loss_grad: operator domain does not match the image");
  const ImageGrid px = projection_apply(a, xhat);
  const ImageGrid py = projection_apply(a, y0);
  ImageGrid grad = px - py;
  grad *= 2.0;
  return {squared_norm(y0 - px), std::move(grad)};
}

/// ‖y − A x̂‖²; gradient −2Aᵀ(y − A x̂).
inline LossGrad data_fidelity_loss_grad(const ImageGrid& y, const ImageGrid& xhat, const LinearOperator& a) {
  const ImageGrid resid = y - a.apply(xhat);
  ImageGrid grad = a.apply_transpose(resid);
  grad *= -2.0;
  return {squared_norm(resid), std::move(grad)};
}

inline ImageGrid noise_blend_init(const ImageGrid& y0, int t_start, const NoiseSchedule& sched, const ImageGrid& eps) {
  return forward_noise(y0, t_start, eps, sched);
}

inline ImageGrid noise_blend_init(const ImageGrid& y0, int t_start, const NoiseSchedule& sched, CounterRng& rng) {
  return noise_blend_init(y0, t_start, sched, rng.gaussian_grid(y0.shape()));
}

/// ⌊fraction · T⌋, at least 1.
inline int start_step(double t_start_fraction, int total) {
  return std::max(1, static_cast<int>(std::floor(t_start_fraction * total + 1e-9)));
}

/// Stand-in restorer: pseudo-inverse upsampling followed by Gaussian smoothing.
inline ImageGrid coarse_restore(const ImageGrid& y, const LinearOperator& a_deg, double smooth_sigma) {
  ImageGrid y0 = pseudo_apply(a_deg, y);
  if (smooth_sigma > 0.0) {
    const int k = blur_kernel_size(smooth_sigma, std::min(y0.height(), y0.width()));
    if (k > 1) y0 = gaussian_blur_op(y0.height(), y0.width(), smooth_sigma, k).apply(y0);
  }
  return y0;
}

namespace detail {

inline bool snapshot_due(int t, int t_start, int stride) { return (t_start - t) % stride == 0 || t == 1; }

inline void require_finite(const ImageGrid& g, int t, const char* what) {
  if (!all_finite(g)) throw NumericalAbort(t, what);
}

inline ImageGrid step_noise(CounterRng& rng, Shape shape, int t) {
  return t > 1 ? rng.gaussian_grid(shape) : ImageGrid(shape);
}

inline void map_gradient(ImageGrid& g, GradientTarget target, double alpha_bar) {
  if (target == GradientTarget::chain) g *= 1.0 / std::sqrt(alpha_bar);
}

}  // namespace detail

/// Plain ancestral sampling from x_init at t_start down to t = 1.
template <EpsPredictor Denoiser>
SampleResult unguided_sample(const Denoiser& denoiser, ImageGrid x, int t_start, const Condition& cond,
                             const NoiseSchedule& sched, CounterRng& rng, int snapshot_stride = 5) {
  Trajectory traj{x.shape(), {}};
  for (int t = t_start; t >= 1; --t) {
    const ImageGrid eps = denoiser.predict_eps(x, t, cond);
    const ImageGrid xhat = estimate_x0(x, eps, t, sched);
    detail::require_finite(xhat, t, "x0 estimate");
    StepRecord rec{t, Measurement::none, 0.0, 0.0, std::nullopt};
    if (detail::snapshot_due(t, t_start, snapshot_stride)) rec.x0_hat = xhat;
    traj.steps.push_back(std::move(rec));
    x = posterior_step_unguided(x, eps, t, sched, detail::step_noise(rng, x.shape(), t));
    detail::require_finite(x, t, "sample");
  }
  return {std::move(x), std::move(traj)};
}

/// Measurement-constrained sampling: forward (wavelet structure) guidance on
/// early steps, reverse (pseudo-inverse projection) guidance on late steps,
/// starting from a noise-blended coarse restoration y0.
template <EpsPredictor Denoiser>
SampleResult mcs_sample(const Denoiser& denoiser, const ImageGrid& y0, const LinearOperator& a, const Condition& cond,
                        const GuidanceConfig& cfg, const NoiseSchedule& sched, CounterRng& rng) {
  cfg.validate();
  if (a.in_shape() != y0.shape()) throw std::invalid_argument("mcs_sample: operator domain does not match y0");
  const int total = sched.steps();
  const int t_start = start_step(cfg.t_start_fraction, total);
  ImageGrid x = noise_blend_init(y0, t_start, sched, rng);
  Trajectory traj{x.shape(), {}};
  for (int t = t_start; t >= 1; --t) {
    const ImageGrid eps = denoiser.predict_eps(x, t, cond);
    const ImageGrid xhat = estimate_x0(x, eps, t, sched);
    detail::require_finite(xhat, t, "x0 estimate");

    const Measurement m = select_measurement(t, total, cfg.boundary);
    LossGrad lg = m == Measurement::forward ? forward_loss_grad(y0, xhat, cfg.haar_levels) : reverse_loss_grad(y0, xhat, a);
    const double eta = m == Measurement::forward ? cfg.eta_forward * cfg.weight_ratio.forward
                                                 : cfg.eta_reverse * cfg.weight_ratio.reverse;
    detail::map_gradient(lg.grad, cfg.gradient_target, sched.alpha_bar(t));

    StepRecord rec{t, m, lg.loss, norm(lg.grad), std::nullopt};
    if (detail::snapshot_due(t, t_start, cfg.snapshot_stride)) rec.x0_hat = xhat;
    traj.steps.push_back(std::move(rec));

    const ImageGrid noise = detail::step_noise(rng, x.shape(), t);
    if (cfg.update_rule == UpdateRule::alg1) {
      ImageGrid mean = posterior_mean(x, eps, t, sched);
      const double scale = sched.posterior_variance(t) * eta;
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] -= scale * lg.grad[i];
      x = add_posterior_noise(std::move(mean), t, noise, sched);
    } else {
      const double ab = sched.alpha_bar(t);
      const double sa = std::sqrt(ab);
      const double sb = std::sqrt(1.0 - ab);
      const double sigma = t > 1 ? std::sqrt(sched.posterior_variance(t)) : 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = sa * y0[i] + sb * eps[i] - eta * lg.grad[i] + sigma * noise[i];
    }
    detail::require_finite(x, t, "sample");
  }
  return {std::move(x), std::move(traj)};
}

/// Posterior-gradient baseline: μ̃ = μ_θ − λ ∇‖y − A x̂‖², sampled with Σ_θ,
/// from pure noise at t = T. λ is cfg.eta_reverse.
template <EpsPredictor Denoiser>
SampleResult dps_sample(const Denoiser& denoiser, const ImageGrid& y, const LinearOperator& a, const GuidanceConfig& cfg,
                        const NoiseSchedule& sched, CounterRng& rng, const Condition& cond = Condition::null()) {
  cfg.validate();
  if (a.out_shape() != y.shape()) throw std::invalid_argument("dps_sample: measurement shape does not match the operator");
  const int total = sched.steps();
  ImageGrid x = rng.gaussian_grid(a.in_shape());
  Trajectory traj{x.shape(), {}};
  for (int t = total; t >= 1; --t) {
    const ImageGrid eps = denoiser.predict_eps(x, t, cond);
    const ImageGrid xhat = estimate_x0(x, eps, t, sched);
    detail::require_finite(xhat, t, "x0 estimate");
    LossGrad lg = data_fidelity_loss_grad(y, xhat, a);
    detail::map_gradient(lg.grad, cfg.gradient_target, sched.alpha_bar(t));

    StepRecord rec{t, Measurement::data_fidelity, lg.loss, norm(lg.grad), std::nullopt};
    if (detail::snapshot_due(t, total, cfg.snapshot_stride)) rec.x0_hat = xhat;
    traj.steps.push_back(std::move(rec));

    ImageGrid mean = posterior_mean(x, eps, t, sched);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] -= cfg.eta_reverse * lg.grad[i];
    x = add_posterior_noise(std::move(mean), t, detail::step_noise(rng, x.shape(), t), sched);
    detail::require_finite(x, t, "sample");
  }
  return {std::move(x), std::move(traj)};
}

/// Null-space projection baseline: x̂ ← A†y + (I − A†A) x̂ at every step, then
/// the DDPM posterior q(x_{t-1} | x_t, x̂).
template <EpsPredictor Denoiser>
SampleResult ddnm_sample(const Denoiser& denoiser, const ImageGrid& y, const LinearOperator& a, const NoiseSchedule& sched,
                         CounterRng& rng, const Condition& cond = Condition::null(), int snapshot_stride = 5) {
  if (a.out_shape() != y.shape()) throw std::invalid_argument("ddnm_sample: measurement shape does not match the operator");
  const int total = sched.steps();
  const ImageGrid range_part = pseudo_apply(a, y);
  ImageGrid x = rng.gaussian_grid(a.in_shape());
  Trajectory traj{x.shape(), {}};
  for (int t = total; t >= 1; --t) {
    const ImageGrid eps = denoiser.predict_eps(x, t, cond);
    ImageGrid xhat = estimate_x0(x, eps, t, sched);
    detail::require_finite(xhat, t, "x0 estimate");
    const double residual = squared_norm(y - a.apply(xhat));
    xhat = range_part + xhat - projection_apply(a, xhat);

    StepRecord rec{t, Measurement::null_space, residual, 0.0, std::nullopt};
    if (detail::snapshot_due(t, total, snapshot_stride)) rec.x0_hat = xhat;
    traj.steps.push_back(std::move(rec));

    const double ab = sched.alpha_bar(t);
    const double ab_prev = sched.alpha_bar(t - 1);
    const double c_x0 = std::sqrt(ab_prev) * sched.beta(t) / (1.0 - ab);
    const double c_xt = std::sqrt(sched.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab);
    ImageGrid mean(x.shape());
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] = c_x0 * xhat[i] + c_xt * x[i];
    x = add_posterior_noise(std::move(mean), t, detail::step_noise(rng, x.shape(), t), sched);
    detail::require_finite(x, t, "sample");
  }
  return {std::move(x), std::move(traj)};
}

}  // namespace mcs
