#pragma once

#include <array>
#include <stdexcept>
#include <vector>

#include "mcs/image_grid.hpp"

namespace mcs {

/// Single-level orthonormal Haar subbands. For a 2x2 block [a b; c d]:
/// low = (a+b+c+d)/2, lh = (a-b+c-d)/2, hl = (a+b-c-d)/2, hh = (a-b-c+d)/2.
/// lh, hl and hh together form the high-frequency (VHD) portion.
struct WaveletBands {
  ImageGrid low;
  ImageGrid lh;
  ImageGrid hl;
  ImageGrid hh;

  [[nodiscard]] double detail_energy() const { return squared_norm(lh) + squared_norm(hl) + squared_norm(hh); }
};

inline WaveletBands haar_decompose(const ImageGrid& img) {
  if (img.height() % 2 != 0 || img.width() % 2 != 0 || img.size() == 0) {
    throw std::invalid_argument("haar_decompose: dimensions must be even, got " + to_string(img.shape()));
  }
  const int h = img.height() / 2;
  const int w = img.width() / 2;
  WaveletBands b{ImageGrid(h, w), ImageGrid(h, w), ImageGrid(h, w), ImageGrid(h, w)};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double a = img(2 * r, 2 * c);
      const double bb = img(2 * r, 2 * c + 1);
      const double cc = img(2 * r + 1, 2 * c);
      const double d = img(2 * r + 1, 2 * c + 1);
      b.low(r, c) = 0.5 * (a + bb + cc + d);
      b.lh(r, c) = 0.5 * (a - bb + cc - d);
      b.hl(r, c) = 0.5 * (a + bb - cc - d);
      b.hh(r, c) = 0.5 * (a - bb - cc + d);
    }
  }
  return b;
}

inline ImageGrid haar_reconstruct(const WaveletBands& b) {
  const Shape s = b.low.shape();
  if (b.lh.shape() != s || b.hl.shape() != s || b.hh.shape() != s) {
    throw std::invalid_argument("haar_reconstruct: subband shapes disagree");
  }
  ImageGrid img(2 * s.height, 2 * s.width);
  for (int r = 0; r < s.height; ++r) {
    for (int c = 0; c < s.width; ++c) {
      const double ll = b.low(r, c);
      const double lh = b.lh(r, c);
      const double hl = b.hl(r, c);
      const double hh = b.hh(r, c);
      img(2 * r, 2 * c) = 0.5 * (ll + lh + hl + hh);
      img(2 * r, 2 * c + 1) = 0.5 * (ll - lh + hl - hh);
      img(2 * r + 1, 2 * c) = 0.5 * (ll + lh - hl - hh);
      img(2 * r + 1, 2 * c + 1) = 0.5 * (ll - lh - hl + hh);
    }
  }
  return img;
}

/// Multi-level decomposition: details[0] is the finest level; low is the
/// coarsest approximation.
struct HaarPyramid {
  ImageGrid low;
  std::vector<std::array<ImageGrid, 3>> details;

  [[nodiscard]] double detail_energy() const {
    double e = 0.0;
    for (const auto& level : details)
      for (const auto& band : level) e += squared_norm(band);
    return e;
  }
};

inline HaarPyramid haar_decompose_levels(const ImageGrid& img, int levels) {
  if (levels < 1) throw std::invalid_argument("haar_decompose_levels: levels must be >= 1");
  HaarPyramid p;
  ImageGrid cur = img;
  for (int l = 0; l < levels; ++l) {
    WaveletBands b = haar_decompose(cur);
    p.details.push_back({std::move(b.lh), std::move(b.hl), std::move(b.hh)});
    cur = std::move(b.low);
  }
  p.low = std::move(cur);
  return p;
}

inline ImageGrid haar_reconstruct_levels(const HaarPyramid& p) {
  ImageGrid cur = p.low;
  for (auto it = p.details.rbegin(); it != p.details.rend(); ++it) {
    cur = haar_reconstruct(WaveletBands{cur, (*it)[0], (*it)[1], (*it)[2]});
  }
  return cur;
}

/// Energy of the high-frequency portion across all levels.
inline double detail_energy(const ImageGrid& img, int levels = 1) {
  return haar_decompose_levels(img, levels).detail_energy();
}

}  // namespace mcs
