#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

#include "mcs/image_grid.hpp"
#include "mcs/linops.hpp"
#include "mcs/rng.hpp"

namespace mcs {

/// Parameters of I_LQ = [(I_GT ⊛ k_σ)↓s + n_δ]_JPEG_q. delta is on the 0-255 scale.
struct DegradationSpec {
  double sigma = 0.2;
  int scale = 8;
  double delta = 0.0;
  int quality = 100;
  std::uint64_t seed = 0;
};

inline constexpr std::array<int, 3> kBenchmarkScales{4, 8, 16};

inline bool is_benchmark_scale(int s) {
  return std::find(kBenchmarkScales.begin(), kBenchmarkScales.end(), s) != kBenchmarkScales.end();
}

/// σ ~ U[0.2, 10], δ ~ U[0, 15], q ~ U{60..100}; the noise seed is the next draw.
inline DegradationSpec sample_spec(CounterRng& rng, int scale) {
  if (!is_benchmark_scale(scale)) {
    throw std::invalid_argument("sample_spec: scale must be one of 4, 8, 16; got " + std::to_string(scale));
  }
  DegradationSpec s;
  s.scale = scale;
  s.sigma = rng.uniform(0.2, 10.0);
  s.delta = rng.uniform(0.0, 15.0);
  s.quality = rng.uniform_int(60, 100);
  s.seed = rng.next_u64();
  return s;
}

/// "sigma=1.5,delta=4,q=90" overrides the matching fields of base.
inline DegradationSpec parse_degradation_spec(const std::string& text, DegradationSpec base) {
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("degradation spec: bad item '" + item + "'");
    const std::string key = item.substr(0, eq);
    const std::string val = item.substr(eq + 1);
    if (key == "sigma") {
      base.sigma = std::stod(val);
    } else if (key == "delta") {
      base.delta = std::stod(val);
    } else if (key == "q") {
      base.quality = std::stoi(val);
    } else if (key == "s") {
      base.scale = std::stoi(val);
    } else if (key == "seed") {
      base.seed = std::stoull(val);
    } else {
      throw std::invalid_argument("degradation spec: unknown key '" + key + "'");
    }
  }
  return base;
}

/// 2⌈3σ⌉+1, reduced to the largest odd size that fits in max_size.
inline int blur_kernel_size(double sigma, int max_size = std::numeric_limits<int>::max()) {
  int k = 2 * static_cast<int>(std::ceil(3.0 * sigma)) + 1;
  if (k > max_size) k = max_size % 2 == 1 ? max_size : max_size - 1;
  return std::max(k, 1);
}

/// The linear stage of the pipeline as a composed operator (blur, then pool).
inline LinearOperator degradation_operator(Shape gt, double sigma, int scale) {
  const int k = blur_kernel_size(sigma, std::min(gt.height, gt.width));
  return compose({gaussian_blur_op(gt.height, gt.width, sigma, k), avgpool_op(gt.height, gt.width, scale)});
}

/// Blur then block-average, evaluated with a direct 2-D kernel sum.
inline ImageGrid blur_downsample(const ImageGrid& gt, double sigma, int scale) {
  const int h = gt.height();
  const int w = gt.width();
  if (scale < 1 || h % scale != 0 || w % scale != 0) {
    throw std::invalid_argument("blur_downsample: scale " + std::to_string(scale) + " must divide " + to_string(gt.shape()));
  }
  const int k = blur_kernel_size(sigma, std::min(h, w));
  const int radius = k / 2;
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i)
    for (int j = -radius; j <= radius; ++j) total += std::exp(-0.5 * (i * i + j * j) / (sigma * sigma));
  ImageGrid blurred(gt.shape());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        for (int j = -radius; j <= radius; ++j) {
          const double wt = std::exp(-0.5 * (i * i + j * j) / (sigma * sigma)) / total;
          acc += wt * gt(detail::reflect_index(r + i, h), detail::reflect_index(c + j, w));
        }
      }
      blurred(r, c) = acc;
    }
  }
  ImageGrid out(h / scale, w / scale);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out(r / scale, c / scale) += blurred(r, c);
  out *= 1.0 / (scale * scale);
  return out;
}

// ITU T.81 Annex K luminance table.
inline constexpr std::array<int, 64> kLuminanceTable{
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24, 40,  57,
    69, 56, 14, 17, 22, 29,  51,  87,  80, 62, 18, 22, 37, 56,  68,  109, 103, 77, 24, 35, 55, 64,
    81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

/// libjpeg quality scaling: 5000/q below 50, 200-2q otherwise; entries clamped to [1, 255].
inline std::array<int, 64> quantization_table(int quality) {
  if (quality < 1 || quality > 100) throw std::invalid_argument("quantization_table: quality must be in [1, 100]");
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<int, 64> t{};
  for (std::size_t i = 0; i < 64; ++i) t[i] = std::clamp((kLuminanceTable[i] * scale + 50) / 100, 1, 255);
  return t;
}

namespace detail {

inline const std::array<double, 64>& dct_basis() {
  static const std::array<double, 64> basis = [] {
    std::array<double, 64> b{};
    for (int k = 0; k < 8; ++k) {
      const double ck = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int n = 0; n < 8; ++n) b[static_cast<std::size_t>(k * 8 + n)] = ck * std::cos(std::numbers::pi * (2 * n + 1) * k / 16.0);
    }
    return b;
  }();
  return basis;
}

// Orthonormal 2-D DCT-II of an 8x8 block (row-major), or its inverse.
inline std::array<double, 64> dct8x8(const std::array<double, 64>& in, bool inverse) {
  const auto& b = dct_basis();
  std::array<double, 64> tmp{};
  std::array<double, 64> out{};
  for (int r = 0; r < 8; ++r) {
    for (int k = 0; k < 8; ++k) {
      double acc = 0.0;
      for (int n = 0; n < 8; ++n) {
        const double coeff = inverse ? b[static_cast<std::size_t>(n * 8 + k)] : b[static_cast<std::size_t>(k * 8 + n)];
        acc += coeff * in[static_cast<std::size_t>(r * 8 + n)];
      }
      tmp[static_cast<std::size_t>(r * 8 + k)] = acc;
    }
  }
  for (int c = 0; c < 8; ++c) {
    for (int k = 0; k < 8; ++k) {
      double acc = 0.0;
      for (int n = 0; n < 8; ++n) {
        const double coeff = inverse ? b[static_cast<std::size_t>(n * 8 + k)] : b[static_cast<std::size_t>(k * 8 + n)];
        acc += coeff * tmp[static_cast<std::size_t>(n * 8 + c)];
      }
      out[static_cast<std::size_t>(k * 8 + c)] = acc;
    }
  }
  return out;
}

}  // namespace detail

/// JPEG quantization distortion on a [0,1] grayscale image: level shift to
/// 255·x − 128, per-block orthonormal DCT, quantize/dequantize with the scaled
/// luminance table, inverse DCT. Dimensions are reflect-padded to multiples of
/// 8 and cropped back. Output is not clamped.
inline ImageGrid jpeg_quantize(const ImageGrid& img, int quality) {
  const auto table = quantization_table(quality);
  const int h = img.height();
  const int w = img.width();
  const int ph = (h + 7) / 8 * 8;
  const int pw = (w + 7) / 8 * 8;
  ImageGrid out(img.shape());
  for (int br = 0; br < ph; br += 8) {
    for (int bc = 0; bc < pw; bc += 8) {
      std::array<double, 64> block{};
      for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c)
          block[static_cast<std::size_t>(r * 8 + c)] =
              255.0 * img(detail::reflect_index(br + r, h), detail::reflect_index(bc + c, w)) - 128.0;
      auto coeff = detail::dct8x8(block, false);
      for (std::size_t i = 0; i < 64; ++i) coeff[i] = std::round(coeff[i] / table[i]) * table[i];
      const auto rec = detail::dct8x8(coeff, true);
      for (int r = 0; r < 8 && br + r < h; ++r)
        for (int c = 0; c < 8 && bc + c < w; ++c)
          out(br + r, bc + c) = (rec[static_cast<std::size_t>(r * 8 + c)] + 128.0) / 255.0;
    }
  }
  return out;
}

/// Full synthetic pipeline; output is clamped to [0, 1]. Blur kernels wider
/// than the image are reduced to the largest odd size that fits.
inline ImageGrid synthesize_lq(const ImageGrid& gt, const DegradationSpec& spec) {
  if (spec.scale < 1 || gt.height() % spec.scale != 0 || gt.width() % spec.scale != 0) {
    throw std::invalid_argument("synthesize_lq: scale " + std::to_string(spec.scale) + " must divide " +
                                to_string(gt.shape()));
  }
  if (!(spec.sigma > 0.0)) throw std::invalid_argument("synthesize_lq: sigma must be positive");
  if (spec.delta < 0.0) throw std::invalid_argument("synthesize_lq: delta must be non-negative");
  ImageGrid low = blur_downsample(gt, spec.sigma, spec.scale);
  if (spec.delta > 0.0) {
    CounterRng rng(spec.seed);
    const double sd = spec.delta / 255.0;
    for (double& v : low.values()) v += sd * rng.gaussian();
  }
  return clamp01(jpeg_quantize(low, spec.quality));
}

}  // namespace mcs
