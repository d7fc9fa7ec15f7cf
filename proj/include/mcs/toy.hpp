#pragma once

#include <cmath>
#include <string>

#include "mcs/gmm.hpp"
#include "mcs/linops.hpp"

namespace mcs {

struct CollisionPriorOptions {
  int height = 16;
  int width = 16;
  int scale = 8;          // components agree exactly after avgpool by this factor
  double sigma = 0.05;    // per-pixel standard deviation
  double amplitude = 0.3; // strength of the distinguishing pattern
  std::string label_a = "glasses";
  std::string label_b = "bare";
};

/// Smooth face-like base image: a bright elliptical blob on a mid-grey field.
inline ImageGrid toy_face_base(int height, int width) {
  ImageGrid img(height, width);
  const double cy = 0.5 * (height - 1);
  const double cx = 0.5 * (width - 1);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double dy = (r - cy) / (0.45 * height);
      const double dx = (c - cx) / (0.35 * width);
      img(r, c) = 0.35 + 0.3 * std::exp(-2.0 * (dx * dx + dy * dy));
    }
  }
  return img;
}

/// Two blurred "lens" disks in the upper half, with every s x s block mean
/// removed so that avgpool by s cannot see the pattern.
inline ImageGrid toy_glasses_pattern(int height, int width, int scale) {
  ImageGrid raw(height, width);
  const double ry = 0.33 * (height - 1);
  const double r_lens = 0.16 * width;
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      for (double lx : {0.28 * (width - 1), 0.72 * (width - 1)}) {
        const double d = std::hypot(r - ry, c - lx);
        raw(r, c) += 1.0 / (1.0 + std::exp(2.0 * (d - r_lens)));
      }
    }
  }
  const LinearOperator pool = avgpool_op(height, width, scale);
  return raw - projection_apply(pool, raw);
}

/// Two-component prior whose means differ only in the null space of
/// avgpool(scale): means are base ± amplitude · pattern.
inline GmmPrior make_collision_prior(const CollisionPriorOptions& opt = {}) {
  const ImageGrid base = toy_face_base(opt.height, opt.width);
  ImageGrid pattern = toy_glasses_pattern(opt.height, opt.width, opt.scale);
  pattern *= opt.amplitude;
  const ImageGrid var(opt.height, opt.width, opt.sigma * opt.sigma);
  return GmmPrior(Shape{opt.height, opt.width},
                  {{0.5, base + pattern, var, opt.label_a}, {0.5, base - pattern, var, opt.label_b}});
}

}  // namespace mcs
