#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "mcs/image_grid.hpp"

namespace mcs {

/// Default cap on rows x cols for dense materialization.
inline constexpr std::size_t kDenseEntryCap = std::size_t{4096} * 4096;

/// Relative singular-value cutoff used when callers do not pass one.
inline constexpr double kDefaultPinvTol = 1e-10;

class OperatorTooLarge : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OperatorKind { identity, avgpool, gaussian_blur, composition, dense };

namespace detail {

struct SvdFactors {
  Eigen::MatrixXd u;
  Eigen::VectorXd s;
  Eigen::MatrixXd v;
};

/// Whole-sample symmetric reflection (… c b | a b c | b a …), folded so any
/// offset lands inside [0, n).
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

class OperatorImpl {
 public:
  OperatorImpl(Shape in, Shape out) : in_(in), out_(out) {}
  virtual ~OperatorImpl() = default;
  OperatorImpl(const OperatorImpl&) = delete;
  OperatorImpl& operator=(const OperatorImpl&) = delete;

  [[nodiscard]] Shape in_shape() const { return in_; }
  [[nodiscard]] Shape out_shape() const { return out_; }

  [[nodiscard]] virtual OperatorKind kind() const = 0;
  [[nodiscard]] virtual std::string describe() const = 0;
  [[nodiscard]] virtual ImageGrid apply(const ImageGrid& x) const = 0;
  [[nodiscard]] virtual ImageGrid apply_transpose(const ImageGrid& y) const = 0;

  /// Closed-form A†y when the operator has one.
  [[nodiscard]] virtual std::optional<ImageGrid> analytic_pseudo(const ImageGrid&) const { return std::nullopt; }

  [[nodiscard]] virtual Eigen::MatrixXd materialize() const {
    const Eigen::Index m = static_cast<Eigen::Index>(out_.size());
    const Eigen::Index n = static_cast<Eigen::Index>(in_.size());
    Eigen::MatrixXd a(m, n);
    ImageGrid basis(in_);
    for (Eigen::Index j = 0; j < n; ++j) {
      basis[static_cast<std::size_t>(j)] = 1.0;
      a.col(j) = apply(basis).as_eigen();
      basis[static_cast<std::size_t>(j)] = 0.0;
    }
    return a;
  }

  const SvdFactors& svd(std::size_t cap) const {
    const std::size_t entries = in_.size() * out_.size();
    if (entries > cap) {
      throw OperatorTooLarge("operator " + describe() + " has " + std::to_string(entries) +
                             " dense entries, above the cap of " + std::to_string(cap));
    }
    std::call_once(svd_once_, [this] {
      Eigen::BDCSVD<Eigen::MatrixXd> dec(materialize(), Eigen::ComputeThinU | Eigen::ComputeThinV);
      svd_ = std::make_unique<SvdFactors>(SvdFactors{dec.matrixU(), dec.singularValues(), dec.matrixV()});
    });
    return *svd_;
  }

 private:
  Shape in_;
  Shape out_;
  mutable std::once_flag svd_once_;
  mutable std::unique_ptr<SvdFactors> svd_;
};

}  // namespace detail

/// Immutable linear map between image grids. Copies share the same
/// underlying operator (and its lazily computed SVD).
class LinearOperator {
 public:
  explicit LinearOperator(std::shared_ptr<const detail::OperatorImpl> impl) : impl_(std::move(impl)) {}

  [[nodiscard]] Shape in_shape() const { return impl_->in_shape(); }
  [[nodiscard]] Shape out_shape() const { return impl_->out_shape(); }
  [[nodiscard]] OperatorKind kind() const { return impl_->kind(); }
  [[nodiscard]] std::string describe() const { return impl_->describe(); }

  [[nodiscard]] ImageGrid apply(const ImageGrid& x) const {
    check(x.shape(), in_shape(), "apply");
    return impl_->apply(x);
  }
  [[nodiscard]] ImageGrid apply_transpose(const ImageGrid& y) const {
    check(y.shape(), out_shape(), "apply_transpose");
    return impl_->apply_transpose(y);
  }
  [[nodiscard]] std::optional<ImageGrid> analytic_pseudo(const ImageGrid& y) const {
    check(y.shape(), out_shape(), "pseudo_apply");
    return impl_->analytic_pseudo(y);
  }

  [[nodiscard]] Eigen::MatrixXd materialize(std::size_t cap = kDenseEntryCap) const {
    if (in_shape().size() * out_shape().size() > cap) {
      throw OperatorTooLarge("operator " + describe() + " is too large to materialize");
    }
    return impl_->materialize();
  }

  [[nodiscard]] const detail::SvdFactors& svd(std::size_t cap = kDenseEntryCap) const { return impl_->svd(cap); }

 private:
  void check(Shape got, Shape want, const char* where) const {
    if (got != want) {
      throw std::invalid_argument(std::string("LinearOperator::") + where + " (" + describe() +
                                  "): expected " + to_string(want) + ", got " + to_string(got));
    }
  }

  std::shared_ptr<const detail::OperatorImpl> impl_;
};

namespace detail {

class IdentityOp final : public OperatorImpl {
 public:
  explicit IdentityOp(Shape s) : OperatorImpl(s, s) {}
  [[nodiscard]] OperatorKind kind() const override { return OperatorKind::identity; }
  [[nodiscard]] std::string describe() const override { return "identity"; }
  [[nodiscard]] ImageGrid apply(const ImageGrid& x) const override { return x; }
  [[nodiscard]] ImageGrid apply_transpose(const ImageGrid& y) const override { return y; }
  [[nodiscard]] std::optional<ImageGrid> analytic_pseudo(const ImageGrid& y) const override { return y; }
};

class AvgPoolOp final : public OperatorImpl {
 public:
  AvgPoolOp(Shape in, int s) : OperatorImpl(in, Shape{in.height / s, in.width / s}), s_(s) {}

  [[nodiscard]] OperatorKind kind() const override { return OperatorKind::avgpool; }
  [[nodiscard]] std::string describe() const override { return "avgpool:s=" + std::to_string(s_); }

  [[nodiscard]] ImageGrid apply(const ImageGrid& x) const override {
    const Shape o = out_shape();
    ImageGrid y(o);
    const double inv = 1.0 / (s_ * s_);
    for (int r = 0; r < in_shape().height; ++r)
      for (int c = 0; c < in_shape().width; ++c) y(r / s_, c / s_) += x(r, c);
    y *= inv;
    return y;
  }

  [[nodiscard]] ImageGrid apply_transpose(const ImageGrid& y) const override {
    ImageGrid x(in_shape());
    const double inv = 1.0 / (s_ * s_);
    for (int r = 0; r < in_shape().height; ++r)
      for (int c = 0; c < in_shape().width; ++c) x(r, c) = inv * y(r / s_, c / s_);
    return x;
  }

  // A† = s² Aᵀ: rows of A are orthogonal with squared norm 1/s².
  [[nodiscard]] std::optional<ImageGrid> analytic_pseudo(const ImageGrid& y) const override {
    ImageGrid x = apply_transpose(y);
    x *= static_cast<double>(s_ * s_);
    return x;
  }

 private:
  int s_;
};

class GaussianBlurOp final : public OperatorImpl {
 public:
  GaussianBlurOp(Shape s, double sigma, int k) : OperatorImpl(s, s), sigma_(sigma), taps_(make_taps(sigma, k)) {}

  static std::vector<double> make_taps(double sigma, int k) {
    const int radius = k / 2;
    std::vector<double> taps(static_cast<std::size_t>(k));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
      const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
      taps[static_cast<std::size_t>(i + radius)] = w;
      total += w;
    }
    for (double& w : taps) w /= total;
    return taps;
  }

  [[nodiscard]] const std::vector<double>& taps() const { return taps_; }

  [[nodiscard]] OperatorKind kind() const override { return OperatorKind::gaussian_blur; }
  [[nodiscard]] std::string describe() const override {
    return "blur:sigma=" + format(sigma_) + ",k=" + std::to_string(taps_.size());
  }

  [[nodiscard]] ImageGrid apply(const ImageGrid& x) const override {
    return pass(pass(x, /*along_rows=*/true, false), /*along_rows=*/false, false);
  }
  [[nodiscard]] ImageGrid apply_transpose(const ImageGrid& y) const override {
    return pass(pass(y, false, true), true, true);
  }

 private:
  static std::string format(double v) {
    std::string s = std::to_string(v);
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  }

  // One separable 1-D pass. The forward pass gathers through the reflected
  // index; the transposed pass scatters through the same index map.
  [[nodiscard]] ImageGrid pass(const ImageGrid& in, bool along_rows, bool transpose) const {
    const int h = in.height();
    const int w = in.width();
    const int radius = static_cast<int>(taps_.size()) / 2;
    ImageGrid out(in.shape());
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        for (int k = -radius; k <= radius; ++k) {
          const double wk = taps_[static_cast<std::size_t>(k + radius)];
          const int rr = along_rows ? r : reflect_index(r + k, h);
          const int cc = along_rows ? reflect_index(c + k, w) : c;
          if (transpose) {
            out(rr, cc) += wk * in(r, c);
          } else {
            out(r, c) += wk * in(rr, cc);
          }
        }
      }
    }
    return out;
  }

  double sigma_;
  std::vector<double> taps_;
};

class CompositionOp final : public OperatorImpl {
 public:
  explicit CompositionOp(std::vector<LinearOperator> ops)
      : OperatorImpl(ops.front().in_shape(), ops.back().out_shape()), ops_(std::move(ops)) {}

  [[nodiscard]] OperatorKind kind() const override { return OperatorKind::composition; }
  [[nodiscard]] std::string describe() const override {
    std::string s = "compose:[";
    for (std::size_t i = 0; i < ops_.size(); ++i) s += (i ? ";" : "") + ops_[i].describe();
    return s + "]";
  }
  [[nodiscard]] ImageGrid apply(const ImageGrid& x) const override {
    ImageGrid v = x;
    for (const auto& op : ops_) v = op.apply(v);
    return v;
  }
  [[nodiscard]] ImageGrid apply_transpose(const ImageGrid& y) const override {
    ImageGrid v = y;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) v = it->apply_transpose(v);
    return v;
  }

 private:
  std::vector<LinearOperator> ops_;
};

class DenseOp final : public OperatorImpl {
 public:
  DenseOp(Eigen::MatrixXd m, Shape in, Shape out) : OperatorImpl(in, out), m_(std::move(m)) {}

  [[nodiscard]] OperatorKind kind() const override { return OperatorKind::dense; }
  [[nodiscard]] std::string describe() const override {
    return "dense:" + std::to_string(m_.rows()) + "x" + std::to_string(m_.cols());
  }
  [[nodiscard]] ImageGrid apply(const ImageGrid& x) const override {
    return from_eigen(m_ * x.as_eigen(), out_shape());
  }
  [[nodiscard]] ImageGrid apply_transpose(const ImageGrid& y) const override {
    return from_eigen(m_.transpose() * y.as_eigen(), in_shape());
  }
  [[nodiscard]] Eigen::MatrixXd materialize() const override { return m_; }

 private:
  Eigen::MatrixXd m_;
};

}  // namespace detail

inline LinearOperator identity_op(Shape s) { return LinearOperator(std::make_shared<detail::IdentityOp>(s)); }

inline LinearOperator avgpool_op(int h, int w, int s) {
  if (s < 1 || h < 1 || w < 1 || h % s != 0 || w % s != 0) {
    throw std::invalid_argument("avgpool_op: scale " + std::to_string(s) + " must divide " + std::to_string(h) +
                                "x" + std::to_string(w));
  }
  return LinearOperator(std::make_shared<detail::AvgPoolOp>(Shape{h, w}, s));
}

inline LinearOperator gaussian_blur_op(int h, int w, double sigma, int k) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_blur_op: sigma must be positive");
  if (k < 1 || k % 2 == 0) throw std::invalid_argument("gaussian_blur_op: kernel size must be odd and positive");
  if (k > std::min(h, w)) throw std::invalid_argument("gaussian_blur_op: kernel larger than image");
  return LinearOperator(std::make_shared<detail::GaussianBlurOp>(Shape{h, w}, sigma, k));
}

/// ops[0] is applied first.
inline LinearOperator compose(std::vector<LinearOperator> ops) {
  if (ops.empty()) throw std::invalid_argument("compose: empty operator list");
  for (std::size_t i = 1; i < ops.size(); ++i) {
    if (ops[i].in_shape() != ops[i - 1].out_shape()) {
      throw std::invalid_argument("compose: " + ops[i - 1].describe() + " output does not feed " + ops[i].describe());
    }
  }
  if (ops.size() == 1) return ops.front();
  return LinearOperator(std::make_shared<detail::CompositionOp>(std::move(ops)));
}

inline LinearOperator dense_op(Eigen::MatrixXd m, Shape in, Shape out) {
  if (static_cast<std::size_t>(m.rows()) != out.size() || static_cast<std::size_t>(m.cols()) != in.size()) {
    throw std::invalid_argument("dense_op: matrix size does not match shapes");
  }
  return LinearOperator(std::make_shared<detail::DenseOp>(std::move(m), in, out));
}

inline LinearOperator dense_op(Eigen::MatrixXd m) {
  const Shape in{1, static_cast<int>(m.cols())};
  const Shape out{1, static_cast<int>(m.rows())};
  return dense_op(std::move(m), in, out);
}

/// A†y. Uses the closed form where one exists, otherwise a truncated SVD of the
/// materialized operator (singular values <= tol * σ_max are dropped).
inline ImageGrid pseudo_apply(const LinearOperator& a, const ImageGrid& y, double tol = kDefaultPinvTol,
                              std::size_t cap = kDenseEntryCap) {
  if (auto x = a.analytic_pseudo(y)) return *std::move(x);
  if (tol < 0.0) throw std::invalid_argument("pseudo_apply: tolerance must be non-negative");
  const auto& f = a.svd(cap);
  const double cutoff = f.s.size() > 0 ? tol * f.s(0) : 0.0;
  Eigen::VectorXd coeff = f.u.transpose() * y.as_eigen();
  for (Eigen::Index i = 0; i < coeff.size(); ++i) coeff(i) = f.s(i) > cutoff ? coeff(i) / f.s(i) : 0.0;
  return from_eigen(f.v * coeff, a.in_shape());
}

/// P x = A†(A x), the orthogonal projection onto the row space of A.
inline ImageGrid projection_apply(const LinearOperator& a, const ImageGrid& x, double tol = kDefaultPinvTol) {
  return pseudo_apply(a, a.apply(x), tol);
}

/// Dense A† assembled column by column through pseudo_apply.
inline Eigen::MatrixXd materialize_pseudo(const LinearOperator& a, double tol = kDefaultPinvTol) {
  const Shape out = a.out_shape();
  Eigen::MatrixXd p(static_cast<Eigen::Index>(a.in_shape().size()), static_cast<Eigen::Index>(out.size()));
  ImageGrid basis(out);
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    basis[static_cast<std::size_t>(j)] = 1.0;
    p.col(j) = pseudo_apply(a, basis, tol).as_eigen();
    basis[static_cast<std::size_t>(j)] = 0.0;
  }
  return p;
}

namespace detail {

inline std::map<std::string, std::string> parse_params(const std::string& body, const std::string& spec) {
  std::map<std::string, std::string> out;
  std::size_t pos = 0;
  while (pos < body.size()) {
    const std::size_t comma = body.find(',', pos);
    const std::string item = body.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    const std::size_t eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("operator spec '" + spec + "': bad parameter '" + item + "'");
    out[item.substr(0, eq)] = item.substr(eq + 1);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline std::vector<std::string> split_top_level(const std::string& s, char sep) {
  std::vector<std::string> parts;
  int depth = 0;
  std::string cur;
  for (char ch : s) {
    if (ch == '[') ++depth;
    if (ch == ']') --depth;
    if (ch == sep && depth == 0) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  parts.push_back(cur);
  return parts;
}

}  // namespace detail

/// Parses "identity", "avgpool:s=8", "blur:sigma=2,k=9" or
/// "compose:[blur:sigma=2,k=9;avgpool:s=8]" (members applied left to right).
/// A blur without k uses 2*ceil(3 sigma)+1.
inline LinearOperator parse_operator(const std::string& spec, Shape in) {
  const std::size_t colon = spec.find(':');
  const std::string name = spec.substr(0, colon);
  const std::string body = colon == std::string::npos ? "" : spec.substr(colon + 1);
  auto number = [&](const std::map<std::string, std::string>& p, const std::string& key) -> std::string {
    auto it = p.find(key);
    if (it == p.end()) throw std::invalid_argument("operator spec '" + spec + "': missing '" + key + "'");
    return it->second;
  };
  try {
    if (name == "identity") return identity_op(in);
    if (name == "avgpool") {
      auto p = detail::parse_params(body, spec);
      return avgpool_op(in.height, in.width, std::stoi(number(p, "s")));
    }
    if (name == "blur") {
      auto p = detail::parse_params(body, spec);
      const double sigma = std::stod(number(p, "sigma"));
      const int k = p.count("k") ? std::stoi(p["k"]) : 2 * static_cast<int>(std::ceil(3.0 * sigma)) + 1;
      return gaussian_blur_op(in.height, in.width, sigma, k);
    }
    if (name == "compose") {
      if (body.size() < 2 || body.front() != '[' || body.back() != ']') {
        throw std::invalid_argument("operator spec '" + spec + "': compose expects [a;b;...]");
      }
      std::vector<LinearOperator> ops;
      Shape cur = in;
      for (const auto& part : detail::split_top_level(body.substr(1, body.size() - 2), ';')) {
        ops.push_back(parse_operator(part, cur));
        cur = ops.back().out_shape();
      }
      return compose(std::move(ops));
    }
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const std::invalid_argument*>(&e) && std::string(e.what()).find("operator spec") != std::string::npos)
      throw;
    throw std::invalid_argument("operator spec '" + spec + "': " + e.what());
  }
  throw std::invalid_argument("operator spec '" + spec + "': unknown operator '" + name + "'");
}

}  // namespace mcs
