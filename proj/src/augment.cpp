#include "tsn/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tsn {

void AugmentParams::validate(std::size_t height, std::size_t width) const {
  if (scales.empty() || positions.empty()) throw std::invalid_argument("augment: empty scale or position set");
  for (double s : scales)
    if (!(s > 0.0 && s <= 1.0)) throw std::invalid_argument("augment: scale " + std::to_string(s) + " outside (0,1]");
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
    throw std::invalid_argument("augment: flip probability outside [0,1]");
  }
  if (output_side < 1) throw std::invalid_argument("augment: output side must be positive");
  if (height && width && output_side > std::min(height, width)) {
    throw std::invalid_argument("augment: output side " + std::to_string(output_side) + " exceeds frame " +
                                std::to_string(height) + "x" + std::to_string(width));
  }
}

AugmentDraw draw_augment(const AugmentParams& params, Rng& rng) {
  AugmentDraw d;
  d.scale = params.scales[uniform_index(rng, params.scales.size())];
  d.position = params.positions[uniform_index(rng, params.positions.size())];
  d.flip = bernoulli(rng, params.flip_probability);
  return d;
}

Tensor resize_frames(const Tensor& frames, std::size_t out_h, std::size_t out_w) {
  if (frames.rank() != 4) throw std::invalid_argument("resize: expected [T,C,H,W], got " + to_string(frames.shape()));
  const std::size_t planes = frames.dim(0) * frames.dim(1);
  const std::size_t h = frames.dim(2), w = frames.dim(3);
  if (h == out_h && w == out_w) return frames;
  Tensor out({frames.dim(0), frames.dim(1), out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  std::vector<std::size_t> x0(out_w), x1(out_w);
  std::vector<double> fx(out_w);
  for (std::size_t x = 0; x < out_w; ++x) {
    const double src = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
    x0[x] = static_cast<std::size_t>(src);
    x1[x] = std::min(x0[x] + 1, w - 1);
    fx[x] = src - static_cast<double>(x0[x]);
  }
  for (std::size_t p = 0; p < planes; ++p) {
    const double* in = frames.raw() + p * h * w;
    double* o = out.raw() + p * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const double src = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
      const std::size_t y0 = static_cast<std::size_t>(src);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double fy = src - static_cast<double>(y0);
      for (std::size_t x = 0; x < out_w; ++x) {
        const double top = in[y0 * w + x0[x]] * (1.0 - fx[x]) + in[y0 * w + x1[x]] * fx[x];
        const double bottom = in[y1 * w + x0[x]] * (1.0 - fx[x]) + in[y1 * w + x1[x]] * fx[x];
        o[y * out_w + x] = top * (1.0 - fy) + bottom * fy;
      }
    }
  }
  return out;
}

Tensor apply_augment(const Tensor& frames, const AugmentDraw& draw, std::size_t output_side) {
  if (frames.rank() != 4) throw std::invalid_argument("augment: expected [T,C,H,W], got " + to_string(frames.shape()));
  const std::size_t t = frames.dim(0), c = frames.dim(1), h = frames.dim(2), w = frames.dim(3);
  const std::size_t crop = static_cast<std::size_t>(std::lround(draw.scale * static_cast<double>(std::min(h, w))));
  if (crop < 1 || crop > std::min(h, w)) {
    throw std::invalid_argument("augment: crop " + std::to_string(crop) + " does not fit frame " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
  std::size_t top = 0, left = 0;
  switch (draw.position) {
    case CropPosition::center: top = (h - crop) / 2; left = (w - crop) / 2; break;
    case CropPosition::top_left: break;
    case CropPosition::top_right: left = w - crop; break;
    case CropPosition::bottom_left: top = h - crop; break;
    case CropPosition::bottom_right: top = h - crop; left = w - crop; break;
  }
  Tensor cropped({t, c, crop, crop});
  for (std::size_t p = 0; p < t * c; ++p) {
    const bool negate = draw.flip && c == 2 && p % c == 0;
    for (std::size_t y = 0; y < crop; ++y)
      for (std::size_t x = 0; x < crop; ++x) {
        const std::size_t sx = draw.flip ? left + crop - 1 - x : left + x;
        const double v = frames[(p * h + top + y) * w + sx];
        cropped[(p * crop + y) * crop + x] = negate ? 1.0 - v : v;
      }
  }
  return resize_frames(cropped, output_side, output_side);
}

VideoTensor augment(const VideoTensor& video, const AugmentParams& params, Rng& rng) {
  video.validate();
  params.validate(video.height(), video.width());
  VideoTensor out = video;
  out.frames = apply_augment(video.frames, draw_augment(params, rng), params.output_side);
  return out;
}

VideoTensor resize(const VideoTensor& video, std::size_t side) {
  if (side < 8) throw std::invalid_argument("resize: side must be at least 8");
  VideoTensor out = video;
  out.frames = resize_frames(video.frames, side, side);
  return out;
}

Tensor evaluation_view(const Tensor& frames, std::size_t output_side) {
  return apply_augment(frames, AugmentDraw{}, output_side);
}

}  // namespace tsn
