#pragma once

#include <cstddef>
#include <vector>

#include "tsn/rng.hpp"
#include "tsn/video.hpp"

namespace tsn {

enum class CropPosition { center, top_left, top_right, bottom_left, bottom_right };

struct AugmentParams {
  std::vector<double> scales{1.0, 0.875, 0.75, 0.66};  // fractions of the shorter side
  std::vector<CropPosition> positions{CropPosition::center, CropPosition::top_left, CropPosition::top_right,
                                      CropPosition::bottom_left, CropPosition::bottom_right};
  double flip_probability = 0.5;
  std::size_t output_side = 32;

  void validate(std::size_t height, std::size_t width) const;
};

/// One augmentation sample; applied identically to every frame of a video.
struct AugmentDraw {
  double scale = 1.0;
  CropPosition position = CropPosition::center;
  bool flip = false;
};

AugmentDraw draw_augment(const AugmentParams& params, Rng& rng);

/// Crops, flips and resizes a [T,C,H,W] stack. For flow (C == 2) a flip also
/// maps the horizontal channel x -> 1 - x.
Tensor apply_augment(const Tensor& frames, const AugmentDraw& draw, std::size_t output_side);

/// Draws once per video and applies the draw to all frames.
VideoTensor augment(const VideoTensor& video, const AugmentParams& params, Rng& rng);

/// Bilinear resize of every frame and channel to side x side (pixel-center
/// sampling; an integer downscale by 2 averages 2x2 blocks).
VideoTensor resize(const VideoTensor& video, std::size_t side);
Tensor resize_frames(const Tensor& frames, std::size_t out_h, std::size_t out_w);

/// Test-time view: the full frame (scale 1 centre crop, no flip) at output_side.
Tensor evaluation_view(const Tensor& frames, std::size_t output_side);

}  // namespace tsn
