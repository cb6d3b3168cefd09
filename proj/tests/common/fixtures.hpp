#pragma once
// Image and video fixtures with known motion.

#include <cmath>

#include "tsn/flow.hpp"
#include "tsn/rng.hpp"
#include "tsn/video.hpp"

namespace tsn::test {

/// Periodic smooth texture in [0,1]: white noise box-blurred twice with
/// wrap-around, then stretched to the full range.
inline flow::GrayImage smooth_texture(std::size_t side, Rng& rng, long radius = 2) {
  const long n = static_cast<long>(side);
  flow::GrayImage img(side, side);
  for (double& v : img.pixels) v = uniform01(rng);
  for (int pass = 0; pass < 2; ++pass) {
    flow::GrayImage out(side, side);
    for (long y = 0; y < n; ++y)
      for (long x = 0; x < n; ++x) {
        double acc = 0.0;
        for (long dy = -radius; dy <= radius; ++dy)
          for (long dx = -radius; dx <= radius; ++dx) acc += img.at(((x + dx) % n + n) % n, ((y + dy) % n + n) % n);
        out.at(x, y) = acc / static_cast<double>((2 * radius + 1) * (2 * radius + 1));
      }
    img = out;
  }
  double lo = 1e300, hi = -1e300;
  for (double v : img.pixels) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double& v : img.pixels) v = (v - lo) / (hi - lo);
  return img;
}

/// Content moves by (dx, dy): out(x, y) = img(x - dx, y - dy), wrapping.
inline flow::GrayImage shifted(const flow::GrayImage& img, long dx, long dy) {
  const long w = static_cast<long>(img.width), h = static_cast<long>(img.height);
  flow::GrayImage out(img.width, img.height);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) out.at(x, y) = img.at(((x - dx) % w + w) % w, ((y - dy) % h + h) % h);
  return out;
}

struct MeanFlow {
  double u = 0.0, v = 0.0, magnitude = 0.0;
};

/// Means over pixels at least `border` away from every edge.
inline MeanFlow interior_mean(const flow::FlowField& f, std::size_t border) {
  MeanFlow m;
  std::size_t count = 0;
  for (std::size_t y = border; y + border < f.height; ++y)
    for (std::size_t x = border; x + border < f.width; ++x) {
      const std::size_t i = y * f.width + x;
      m.u += f.u[i];
      m.v += f.v[i];
      m.magnitude += std::hypot(f.u[i], f.v[i]);
      ++count;
    }
  m.u /= static_cast<double>(count);
  m.v /= static_cast<double>(count);
  m.magnitude /= static_cast<double>(count);
  return m;
}

/// Gray image replicated into an RGB frame of a video tensor.
inline void put_gray_frame(Tensor& frames, std::size_t t, const flow::GrayImage& img) {
  const std::size_t plane = img.width * img.height;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) frames[(t * 3 + c) * plane + i] = img.pixels[i];
}

}  // namespace tsn::test
