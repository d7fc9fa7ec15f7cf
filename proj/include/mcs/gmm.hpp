#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "mcs/diffusion.hpp"
#include "mcs/image_grid.hpp"
#include "mcs/linops.hpp"
#include "mcs/rng.hpp"

namespace mcs {

/// Mixture of diagonal Gaussians over image grids of a fixed shape.
class GmmPrior {
 public:
  struct Component {
    double weight = 0.0;
    ImageGrid mean;
    ImageGrid variance;  // diagonal, strictly positive
    std::string label;
  };

  GmmPrior(Shape shape, std::vector<Component> components) : shape_(shape), components_(std::move(components)) {
    if (components_.empty()) throw std::invalid_argument("GmmPrior: no components");
    double total = 0.0;
    for (const auto& c : components_) {
      if (c.mean.shape() != shape_ || c.variance.shape() != shape_) {
        throw std::invalid_argument("GmmPrior: component '" + c.label + "' has the wrong shape");
      }
      if (!(c.weight >= 0.0)) throw std::invalid_argument("GmmPrior: negative weight");
      for (double v : c.variance.values()) {
        if (!(v > 0.0)) throw std::invalid_argument("GmmPrior: variances must be strictly positive");
      }
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-12) {
      throw std::invalid_argument("GmmPrior: weights sum to " + std::to_string(total) + ", not 1");
    }
  }

  [[nodiscard]] Shape shape() const { return shape_; }
  [[nodiscard]] std::size_t dims() const { return shape_.size(); }
  [[nodiscard]] std::size_t size() const { return components_.size(); }
  [[nodiscard]] const Component& operator[](std::size_t k) const { return components_[k]; }
  [[nodiscard]] const std::vector<Component>& components() const { return components_; }

  [[nodiscard]] bool has_label(const std::string& label) const {
    return std::any_of(components_.begin(), components_.end(), [&](const Component& c) { return c.label == label; });
  }

 private:
  Shape shape_;
  std::vector<Component> components_;
};

/// Stand-in for a prompt embedding: either unconditional or a set of admissible
/// component labels.
class Condition {
 public:
  static Condition null() { return Condition(); }
  static Condition of(std::set<std::string> labels) {
    if (labels.empty()) throw std::invalid_argument("Condition: label set must be nonempty");
    Condition c;
    c.labels_ = std::move(labels);
    return c;
  }

  /// "null" or a comma-separated label list.
  static Condition parse(const std::string& text) {
    if (text.empty() || text == "null") return null();
    std::set<std::string> labels;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) labels.insert(item);
    }
    return of(std::move(labels));
  }

  [[nodiscard]] bool is_null() const { return !labels_.has_value(); }
  [[nodiscard]] bool admits(const std::string& label) const { return is_null() || labels_->count(label) > 0; }
  [[nodiscard]] const std::set<std::string>& labels() const {
    static const std::set<std::string> empty;
    return labels_ ? *labels_ : empty;
  }

  [[nodiscard]] std::string to_string() const {
    if (is_null()) return "null";
    std::string s;
    for (const auto& l : *labels_) s += (s.empty() ? "" : ",") + l;
    return s;
  }

 private:
  std::optional<std::set<std::string>> labels_;
};

class UnsatisfiableCondition : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void validate_condition(const GmmPrior& prior, const Condition& cond) {
  for (const auto& l : cond.labels()) {
    if (!prior.has_label(l)) throw UnsatisfiableCondition("condition label '" + l + "' does not exist in the prior");
  }
}

inline GmmPrior condition_restrict(const GmmPrior& prior, const Condition& cond) {
  if (cond.is_null()) return prior;
  validate_condition(prior, cond);
  std::vector<GmmPrior::Component> kept;
  double total = 0.0;
  for (const auto& c : prior.components()) {
    if (cond.admits(c.label)) {
      kept.push_back(c);
      total += c.weight;
    }
  }
  if (kept.empty() || !(total > 0.0)) {
    throw UnsatisfiableCondition("condition " + cond.to_string() + " leaves no probability mass");
  }
  for (auto& c : kept) c.weight /= total;
  // Renormalized weights can miss 1 by a few ulps; fold the residue into the last one.
  double sum = 0.0;
  for (std::size_t k = 0; k + 1 < kept.size(); ++k) sum += kept[k].weight;
  kept.back().weight = 1.0 - sum;
  return GmmPrior(prior.shape(), std::move(kept));
}

namespace detail {

inline double log_sum_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace detail

/// Responsibilities and posterior mean of x₀ given x_t under the noised mixture.
struct DenoiseResult {
  ImageGrid x0_mean;
  std::vector<double> responsibilities;  // zero for components outside the condition
};

inline DenoiseResult gmm_denoise(const GmmPrior& prior, const ImageGrid& x_t, double alpha_bar, const Condition& cond) {
  if (x_t.shape() != prior.shape()) throw std::invalid_argument("gmm_denoise: x_t shape does not match the prior");
  validate_condition(prior, cond);
  const double sa = std::sqrt(alpha_bar);
  const std::size_t k_count = prior.size();
  std::vector<double> logp(k_count, -std::numeric_limits<double>::infinity());
  bool any_admitted = false;
  for (std::size_t k = 0; k < k_count; ++k) {
    const auto& c = prior[k];
    if (!cond.admits(c.label) || c.weight <= 0.0) continue;
    any_admitted = true;
    double acc = std::log(c.weight);
    for (std::size_t i = 0; i < x_t.size(); ++i) {
      const double s = alpha_bar * c.variance[i] + (1.0 - alpha_bar);
      const double r = x_t[i] - sa * c.mean[i];
      acc -= 0.5 * (r * r / s + std::log(2.0 * std::numbers::pi * s));
    }
    logp[k] = acc;
  }
  const double lse = detail::log_sum_exp(logp);
  if (!any_admitted) throw UnsatisfiableCondition("gmm_denoise: condition " + cond.to_string() + " has no mass");
  if (!std::isfinite(lse)) {
    // Overflowed likelihoods (e.g. a diverged iterate): propagate NaN so the caller aborts numerically.
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {ImageGrid(x_t.shape(), nan), std::vector<double>(k_count, nan)};
  }

  DenoiseResult out{ImageGrid(prior.shape()), std::vector<double>(k_count, 0.0)};
  for (std::size_t k = 0; k < k_count; ++k) {
    if (!std::isfinite(logp[k])) continue;
    const double r = std::exp(logp[k] - lse);
    out.responsibilities[k] = r;
    if (r == 0.0) continue;
    const auto& c = prior[k];
    for (std::size_t i = 0; i < x_t.size(); ++i) {
      const double gain = sa * c.variance[i] / (alpha_bar * c.variance[i] + (1.0 - alpha_bar));
      out.x0_mean[i] += r * (c.mean[i] + gain * (x_t[i] - sa * c.mean[i]));
    }
  }
  return out;
}

/// Exact ε-prediction: ε = (x_t − sqrt(ᾱ_t) E[x₀|x_t]) / sqrt(1 − ᾱ_t).
inline ImageGrid gmm_eps_pred(const GmmPrior& prior, const ImageGrid& x_t, int t, const NoiseSchedule& sched,
                              const Condition& cond) {
  const double ab = sched.alpha_bar(t);
  const ImageGrid m = gmm_denoise(prior, x_t, ab, cond).x0_mean;
  const double sa = std::sqrt(ab);
  const double inv = 1.0 / std::sqrt(1.0 - ab);
  ImageGrid eps(x_t.shape());
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = (x_t[i] - sa * m[i]) * inv;
  return eps;
}

/// Conditional denoiser backed by an analytic mixture prior.
class GmmDenoiser {
 public:
  GmmDenoiser(GmmPrior prior, NoiseSchedule sched) : prior_(std::move(prior)), sched_(std::move(sched)) {}

  [[nodiscard]] ImageGrid predict_eps(const ImageGrid& x_t, int t, const Condition& cond) const {
    return gmm_eps_pred(prior_, x_t, t, sched_, cond);
  }
  [[nodiscard]] const GmmPrior& prior() const { return prior_; }
  [[nodiscard]] const NoiseSchedule& schedule() const { return sched_; }

 private:
  GmmPrior prior_;
  NoiseSchedule sched_;
};

struct GmmDraw {
  ImageGrid x;
  std::size_t component = 0;
  std::string label;
};

inline GmmDraw gmm_sample(const GmmPrior& prior, CounterRng& rng) {
  // Inverse-CDF over positive-weight components; rounding slack falls to the last one.
  const double u = rng.uniform();
  std::size_t k = 0;
  double cum = 0.0;
  for (std::size_t j = 0; j < prior.size(); ++j) {
    if (prior[j].weight <= 0.0) continue;
    k = j;
    cum += prior[j].weight;
    if (u < cum) break;
  }
  const auto& c = prior[k];
  ImageGrid x(prior.shape());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = c.mean[i] + std::sqrt(c.variance[i]) * rng.gaussian();
  return {std::move(x), k, c.label};
}

/// Index of the maximum-responsibility component at t = 0; ties go to the
/// lower index.
inline std::size_t component_assign_index(const GmmPrior& prior, const ImageGrid& x) {
  if (x.shape() != prior.shape()) throw std::invalid_argument("component_assign: shape mismatch");
  std::size_t best = 0;
  double best_lp = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < prior.size(); ++k) {
    const auto& c = prior[k];
    if (c.weight <= 0.0) continue;
    double lp = std::log(c.weight);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double r = x[i] - c.mean[i];
      lp -= 0.5 * (r * r / c.variance[i] + std::log(2.0 * std::numbers::pi * c.variance[i]));
    }
    if (lp > best_lp) {
      best_lp = lp;
      best = k;
    }
  }
  return best;
}

inline std::string component_assign(const GmmPrior& prior, const ImageGrid& x) {
  return prior[component_assign_index(prior, x)].label;
}

/// Gaussian mixture with dense covariances; the form an exact linear-Gaussian
/// posterior of a GmmPrior takes.
struct FullGaussianMixture {
  struct Component {
    double weight = 0.0;
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
    std::string label;
  };
  Shape shape;
  std::vector<Component> components;

  [[nodiscard]] double log_density(const ImageGrid& x) const {
    std::vector<double> terms;
    for (const auto& c : components) {
      if (c.weight <= 0.0) continue;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(c.covariance);
      const Eigen::VectorXd r = x.as_eigen() - c.mean;
      const double quad = r.dot(ldlt.solve(r));
      double logdet = 0.0;
      for (Eigen::Index i = 0; i < ldlt.vectorD().size(); ++i) logdet += std::log(ldlt.vectorD()(i));
      const double d = static_cast<double>(r.size());
      terms.push_back(std::log(c.weight) - 0.5 * (quad + logdet + d * std::log(2.0 * std::numbers::pi)));
    }
    return detail::log_sum_exp(terms);
  }

  [[nodiscard]] GmmDraw sample(CounterRng& rng) const {
    const double u = rng.uniform();
    std::size_t k = components.size() - 1;
    double cum = 0.0;
    for (std::size_t j = 0; j < components.size(); ++j) {
      cum += components[j].weight;
      if (u < cum) {
        k = j;
        break;
      }
    }
    const auto& c = components[k];
    // LDLT tolerates the near-singular covariances of almost-exact observations.
    Eigen::LDLT<Eigen::MatrixXd> ldlt(c.covariance);
    Eigen::VectorXd z(c.mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.gaussian();
    Eigen::VectorXd dz = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt().cwiseProduct(z);
    Eigen::VectorXd lz = ldlt.matrixL() * dz;
    Eigen::VectorXd x = c.mean + ldlt.transpositionsP().transpose() * lz;
    return {from_eigen(x, shape), k, c.label};
  }
};

/// Floor applied to the observation noise variance.
inline constexpr double kNoiseVarFloor = 1e-10;

/// Exact posterior p(x₀ | y = A x₀ + n), n ~ N(0, noise_var I): conjugate
/// update per component, mixture weights reweighted by the evidence
/// N(y; A μ_k, A Σ_k Aᵀ + noise_var I).
inline FullGaussianMixture gmm_exact_posterior(const GmmPrior& prior, const LinearOperator& a, const ImageGrid& y,
                                               double noise_var, std::size_t cap = kDenseEntryCap) {
  if (a.in_shape() != prior.shape()) throw std::invalid_argument("gmm_exact_posterior: operator domain mismatch");
  if (y.shape() != a.out_shape()) throw std::invalid_argument("gmm_exact_posterior: measurement shape mismatch");
  if (noise_var < 0.0) throw std::invalid_argument("gmm_exact_posterior: negative noise variance");
  const double nv = std::max(noise_var, kNoiseVarFloor);
  const Eigen::MatrixXd am = a.materialize(cap);
  const Eigen::Index m = am.rows();
  const Eigen::VectorXd yv = y.as_eigen();

  FullGaussianMixture post{prior.shape(), {}};
  std::vector<double> logw;
  for (const auto& c : prior.components()) {
    const Eigen::VectorXd mu = c.mean.as_eigen();
    const Eigen::VectorXd var = c.variance.as_eigen();
    const Eigen::MatrixXd sat = var.asDiagonal() * am.transpose();  // Σ Aᵀ
    Eigen::MatrixXd s = am * sat;
    s.diagonal().array() += nv;
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    if (llt.info() != Eigen::Success) throw std::runtime_error("gmm_exact_posterior: evidence covariance not PD");
    const Eigen::VectorXd resid = yv - am * mu;
    const Eigen::VectorXd sol = llt.solve(resid);
    FullGaussianMixture::Component pc;
    pc.label = c.label;
    pc.mean = mu + sat * sol;
    Eigen::MatrixXd cov = -sat * llt.solve(sat.transpose());
    cov.diagonal() += var;
    pc.covariance = 0.5 * (cov + cov.transpose());
    double logdet = 0.0;
    const Eigen::MatrixXd lmat = llt.matrixL();
    for (Eigen::Index i = 0; i < m; ++i) logdet += 2.0 * std::log(lmat(i, i));
    const double lw = c.weight > 0.0 ? std::log(c.weight) -
                                           0.5 * (resid.dot(sol) + logdet + static_cast<double>(m) * std::log(2.0 * std::numbers::pi))
                                     : -std::numeric_limits<double>::infinity();
    logw.push_back(lw);
    post.components.push_back(std::move(pc));
  }
  const double lse = detail::log_sum_exp(logw);
  for (std::size_t k = 0; k < logw.size(); ++k) post.components[k].weight = std::exp(logw[k] - lse);
  return post;
}

}  // namespace mcs
