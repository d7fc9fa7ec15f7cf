#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mcs {

struct Shape {
  int height = 0;
  int width = 0;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width);
}

/// Row-major single-channel raster. Also serves as the flat vector type for
/// mixture-prior computations (a d-vector is a 1 x d grid).
class ImageGrid {
 public:
  ImageGrid() = default;

  ImageGrid(int height, int width, double fill = 0.0)
      : shape_{height, width}, values_(checked_size(height, width), fill) {}

  ImageGrid(int height, int width, std::vector<double> values)
      : shape_{height, width}, values_(std::move(values)) {
    if (values_.size() != checked_size(height, width)) {
      throw std::invalid_argument("ImageGrid: value count " + std::to_string(values_.size()) +
                                  " does not match " + to_string(shape_));
    }
  }

  explicit ImageGrid(Shape shape, double fill = 0.0) : ImageGrid(shape.height, shape.width, fill) {}

  static ImageGrid row(std::vector<double> values) {
    const int n = static_cast<int>(values.size());
    return ImageGrid(1, n, std::move(values));
  }

  [[nodiscard]] int height() const { return shape_.height; }
  [[nodiscard]] int width() const { return shape_.width; }
  [[nodiscard]] Shape shape() const { return shape_; }
  [[nodiscard]] std::size_t size() const { return values_.size(); }

  [[nodiscard]] std::span<double> values() { return values_; }
  [[nodiscard]] std::span<const double> values() const { return values_; }
  [[nodiscard]] const std::vector<double>& vector() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  double& operator()(int r, int c) { return values_[index(r, c)]; }
  double operator()(int r, int c) const { return values_[index(r, c)]; }

  [[nodiscard]] Eigen::Map<Eigen::VectorXd> as_eigen() {
    return {values_.data(), static_cast<Eigen::Index>(values_.size())};
  }
  [[nodiscard]] Eigen::Map<const Eigen::VectorXd> as_eigen() const {
    return {values_.data(), static_cast<Eigen::Index>(values_.size())};
  }

  ImageGrid& operator+=(const ImageGrid& o) {
    require_same_shape(*this, o, "operator+=");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
    return *this;
  }
  ImageGrid& operator-=(const ImageGrid& o) {
    require_same_shape(*this, o, "operator-=");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
    return *this;
  }
  ImageGrid& operator*=(double a) {
    for (double& v : values_) v *= a;
    return *this;
  }

  friend ImageGrid operator+(ImageGrid a, const ImageGrid& b) { return a += b; }
  friend ImageGrid operator-(ImageGrid a, const ImageGrid& b) { return a -= b; }
  friend ImageGrid operator*(double s, ImageGrid a) { return a *= s; }
  friend ImageGrid operator*(ImageGrid a, double s) { return a *= s; }

  friend bool operator==(const ImageGrid&, const ImageGrid&) = default;

  static void require_same_shape(const ImageGrid& a, const ImageGrid& b, const char* where) {
    if (a.shape_ != b.shape_) {
      throw std::invalid_argument(std::string(where) + ": shape mismatch " + to_string(a.shape_) +
                                  " vs " + to_string(b.shape_));
    }
  }

 private:
  static std::size_t checked_size(int h, int w) {
    if (h < 0 || w < 0) throw std::invalid_argument("ImageGrid: negative dimension");
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  [[nodiscard]] std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * static_cast<std::size_t>(shape_.width) +
           static_cast<std::size_t>(c);
  }

  Shape shape_{};
  std::vector<double> values_;
};

inline double dot(const ImageGrid& a, const ImageGrid& b) {
  ImageGrid::require_same_shape(a, b, "dot");
  return std::inner_product(a.values().begin(), a.values().end(), b.values().begin(), 0.0);
}

inline double squared_norm(const ImageGrid& a) { return dot(a, a); }

inline double norm(const ImageGrid& a) { return std::sqrt(squared_norm(a)); }

inline double max_abs_diff(const ImageGrid& a, const ImageGrid& b) {
  ImageGrid::require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool all_finite(const ImageGrid& a) {
  return std::all_of(a.values().begin(), a.values().end(), [](double v) { return std::isfinite(v); });
}

inline double mean(const ImageGrid& a) {
  if (a.size() == 0) return 0.0;
  return std::accumulate(a.values().begin(), a.values().end(), 0.0) / static_cast<double>(a.size());
}

/// Population variance over pixels.
inline double pixel_variance(const ImageGrid& a) {
  if (a.size() == 0) return 0.0;
  const double m = mean(a);
  double acc = 0.0;
  for (double v : a.values()) acc += (v - m) * (v - m);
  return acc / static_cast<double>(a.size());
}

inline ImageGrid clamp01(ImageGrid a) {
  for (double& v : a.values()) v = std::clamp(v, 0.0, 1.0);
  return a;
}

inline ImageGrid from_eigen(const Eigen::VectorXd& v, Shape shape) {
  return ImageGrid(shape.height, shape.width, std::vector<double>(v.data(), v.data() + v.size()));
}

}  // namespace mcs
