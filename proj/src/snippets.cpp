#include "tsn/snippets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace tsn {

Modality parse_modality(std::string_view name) {
  if (name == "rgb") return Modality::rgb;
  if (name == "of") return Modality::of;
  if (name == "of2d") return Modality::of2d;
  throw std::invalid_argument("unknown modality '" + std::string(name) + "' (expected rgb, of or of2d)");
}

std::string_view modality_name(Modality modality) {
  switch (modality) {
    case Modality::rgb: return "rgb";
    case Modality::of: return "of";
    case Modality::of2d: return "of2d";
  }
  return "?";
}

void SnippetSpec::validate() const {
  if (length < 1) throw std::invalid_argument("snippet length must be at least 1");
  if (!(rate_hz > 0.0) || !(stack_rate_hz > 0.0)) throw std::invalid_argument("snippet rates must be positive");
  if (stack_depth < 1) throw std::invalid_argument("stack depth must be at least 1");
  if (modality == Modality::of2d) (void)stack_stride();
}

std::size_t SnippetSpec::window() const { return modality == Modality::of2d ? stack_depth : length; }

std::size_t SnippetSpec::channels() const {
  switch (modality) {
    case Modality::rgb: return 3;
    case Modality::of: return 2;
    case Modality::of2d: return 2 * stack_depth;
  }
  return 0;
}

std::size_t SnippetSpec::stack_stride() const {
  const long s = std::lround(rate_hz / stack_rate_hz);
  if (s < 1) throw std::invalid_argument("stack rate exceeds the extraction rate");
  return static_cast<std::size_t>(s);
}

std::vector<std::size_t> train_starts(std::size_t frames, std::size_t segments, std::size_t length, Rng& rng) {
  if (frames == 0) throw std::invalid_argument("train_starts: empty video");
  if (segments < 1) throw std::invalid_argument("train_starts: need at least one segment");
  if (length < 1) throw std::invalid_argument("train_starts: snippet length must be positive");
  const std::size_t last = frames >= length ? frames - length : 0;
  std::vector<std::size_t> starts;
  starts.reserve(segments);
  for (std::size_t i = 0; i < segments; ++i) {
    const std::size_t lo = i * frames / segments;
    const std::size_t hi = (i + 1) * frames / segments;  // exclusive
    std::size_t s = lo;
    if (hi > lo) {
      // Positions whose snippet stays inside the segment, else the whole segment.
      const std::size_t span = hi - lo >= length ? hi - lo - length + 1 : hi - lo;
      s = lo + uniform_index(rng, span);
    }
    starts.push_back(std::min(s, last));
  }
  return starts;
}

std::vector<std::size_t> test_starts(std::size_t frames, std::size_t kappa, std::size_t length) {
  if (frames == 0) throw std::invalid_argument("test_starts: empty video");
  if (kappa < 1) throw std::invalid_argument("test_starts: kappa must be at least 1");
  const std::size_t range = frames >= length ? frames - length : 0;
  if (kappa == 1) return {range / 2};
  std::vector<std::size_t> starts(kappa);
  const std::size_t den = kappa - 1;
  // Integer round-half-up of j * range / den.
  for (std::size_t j = 0; j < kappa; ++j) starts[j] = (2 * j * range + den) / (2 * den);
  return starts;
}

Tensor extract_window(const Tensor& frames, std::size_t start, std::size_t length) {
  if (frames.rank() != 4 || frames.dim(0) == 0) throw std::invalid_argument("extract_window: expected non-empty [T,C,H,W]");
  const std::size_t t_total = frames.dim(0);
  if (start >= t_total) throw std::invalid_argument("extract_window: start past the end of the video");
  const std::size_t frame = frames.size() / t_total;
  Tensor out({length, frames.dim(1), frames.dim(2), frames.dim(3)});
  for (std::size_t i = 0; i < length; ++i) {
    const std::size_t src = std::min(start + i, t_total - 1);
    std::memcpy(out.raw() + i * frame, frames.raw() + src * frame, frame * sizeof(double));
  }
  return out;
}

Tensor stack_2d(const Tensor& flow, std::size_t start, std::size_t depth) {
  if (flow.rank() != 4 || flow.dim(1) != 2) throw std::invalid_argument("stack_2d: expected a [T,2,H,W] flow stack");
  const Tensor w = extract_window(flow, start, depth);
  return w.reshaped({2 * depth, flow.dim(2), flow.dim(3)});
}

Snippet make_snippet(const VideoTensor& video, std::size_t start, const SnippetSpec& spec, std::string_view video_id) {
  const std::size_t expected = spec.modality == Modality::rgb ? 3 : 2;
  if (video.frames.rank() != 4 || video.channels() != expected)
    throw std::invalid_argument("snippet: video has " + std::to_string(video.frames.rank() == 4 ? video.channels() : 0) +
                                " channels, modality " + std::string(modality_name(spec.modality)) + " needs " +
                                std::to_string(expected));
  Snippet s;
  s.video_id = std::string(video_id);
  s.start = start;
  s.data = spec.modality == Modality::of2d ? stack_2d(video.frames, start, spec.stack_depth)
                                           : extract_window(video.frames, start, spec.length);
  return s;
}

std::vector<Snippet> sample_train(const VideoTensor& video, std::size_t segments, const SnippetSpec& spec, Rng& rng,
                                  std::string_view video_id) {
  std::vector<Snippet> out;
  for (std::size_t s : train_starts(video.length(), segments, spec.window(), rng))
    out.push_back(make_snippet(video, s, spec, video_id));
  return out;
}

std::vector<Snippet> sample_test(const VideoTensor& video, std::size_t kappa, const SnippetSpec& spec,
                                 std::string_view video_id) {
  std::vector<Snippet> out;
  for (std::size_t s : test_starts(video.length(), kappa, spec.window())) out.push_back(make_snippet(video, s, spec, video_id));
  return out;
}

VideoTensor subsample(const VideoTensor& video, std::size_t stride) {
  if (stride < 1) throw std::invalid_argument("subsample: stride must be positive");
  const std::size_t t_total = video.length();
  const std::size_t kept = (t_total + stride - 1) / stride;
  const std::size_t frame = video.frames.size() / std::max<std::size_t>(t_total, 1);
  VideoTensor out;
  out.source_rate_hz = video.source_rate_hz;
  out.rate_hz = video.rate_hz / static_cast<double>(stride);
  out.frames = Tensor({kept, video.channels(), video.height(), video.width()});
  for (std::size_t i = 0; i < kept; ++i)
    std::memcpy(out.frames.raw() + i * frame, video.frames.raw() + i * stride * frame, frame * sizeof(double));
  return out;
}

VideoTensor prepare_modality(const VideoTensor& rgb, const SnippetSpec& spec, const flow::TvL1Params& tvl1,
                             double flow_bound) {
  if (rgb.channels() != 3) throw std::invalid_argument("prepare_modality: expected an RGB video");
  switch (spec.modality) {
    case Modality::rgb: return rgb;
    case Modality::of: return flow::flow_stack(rgb, tvl1, flow_bound);
    case Modality::of2d: return flow::flow_stack(subsample(rgb, spec.stack_stride()), tvl1, flow_bound);
  }
  return rgb;
}

}  // namespace tsn
