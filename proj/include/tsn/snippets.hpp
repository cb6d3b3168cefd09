#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "tsn/flow.hpp"
#include "tsn/rng.hpp"
#include "tsn/video.hpp"

namespace tsn {

enum class Modality { rgb, of, of2d };

Modality parse_modality(std::string_view name);
std::string_view modality_name(Modality modality);

struct SnippetSpec {
  std::size_t length = 64;  // frames per 3D snippet
  double rate_hz = 10.0;
  Modality modality = Modality::of;
  std::size_t stack_depth = 5;  // flow fields per 2D stack
  double stack_rate_hz = 5.0;

  void validate() const;
  /// Frames consumed by one snippet: length, or stack_depth for of2d.
  std::size_t window() const;
  /// Network input channels: 3, 2, or 2 * stack_depth.
  std::size_t channels() const;
  /// Frame stride between the extraction rate and the 2D stack rate.
  std::size_t stack_stride() const;
};

struct Snippet {
  Tensor data;  // [L,C,H,W], or [2*depth,H,W] for of2d
  std::string video_id;
  std::size_t start = 0;
};

/// One start per segment [floor(iT/K), floor((i+1)T/K)). When the snippet
/// fits inside the segment the start is uniform over the fitting positions;
/// otherwise it is uniform over the segment. Starts are finally clamped to
/// max(0, T-L).
std::vector<std::size_t> train_starts(std::size_t frames, std::size_t segments, std::size_t length, Rng& rng);

/// round(j (T-L) / (kappa-1)) for j = 0..kappa-1; floor((T-L)/2) when kappa = 1.
/// Zero when T < L.
std::vector<std::size_t> test_starts(std::size_t frames, std::size_t kappa, std::size_t length);

/// Frames [start, start+L) of a [T,C,H,W] stack; indices past the end repeat
/// the last frame.
Tensor extract_window(const Tensor& frames, std::size_t start, std::size_t length);

/// depth consecutive flow frames from `start` concatenated along channels:
/// channel 2i is u of field i and 2i+1 is v.
Tensor stack_2d(const Tensor& flow, std::size_t start, std::size_t depth);

/// Builds the snippet for one start according to spec.modality.
Snippet make_snippet(const VideoTensor& video, std::size_t start, const SnippetSpec& spec,
                     std::string_view video_id = {});

std::vector<Snippet> sample_train(const VideoTensor& video, std::size_t segments, const SnippetSpec& spec, Rng& rng,
                                  std::string_view video_id = {});
std::vector<Snippet> sample_test(const VideoTensor& video, std::size_t kappa, const SnippetSpec& spec,
                                 std::string_view video_id = {});

/// Converts an RGB video at the extraction rate into the modality's input
/// video: rgb as is, of as the quantized flow stack, of2d as flow computed
/// on frames subsampled to the stack rate.
VideoTensor prepare_modality(const VideoTensor& rgb, const SnippetSpec& spec, const flow::TvL1Params& tvl1,
                             double flow_bound);

/// Keeps frames 0, stride, 2 stride, ...
VideoTensor subsample(const VideoTensor& video, std::size_t stride);

}  // namespace tsn
