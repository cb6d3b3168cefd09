#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include "tsn/tensor.hpp"

namespace tsn {

/// Dense frame stack [T,C,H,W] with values in [0,1]. C is 3 for RGB and 2
/// for quantized optical flow (channel 0 horizontal, channel 1 vertical).
struct VideoTensor {
  Tensor frames;
  double source_rate_hz = 0.0;
  double rate_hz = 0.0;

  std::size_t length() const { return frames.rank() == 4 ? frames.dim(0) : 0; }
  std::size_t channels() const { return frames.dim(1); }
  std::size_t height() const { return frames.dim(2); }
  std::size_t width() const { return frames.dim(3); }

  /// Throws unless frames is [T>=1, C in {2,3}, H, W] with finite values.
  void validate() const;
};

/// Raw tensor file: "TSNV", then u32 LE version=1, T, C, H, W, then
/// T*C*H*W f32 LE values.
void write_raw_video(const std::filesystem::path& path, const Tensor& frames);
Tensor read_raw_video(const std::filesystem::path& path);

/// Binary P6 portable pixmap (maxval 255) to and from [3,H,W] in [0,1].
void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);

struct LoadOptions {
  double rate_hz = 10.0;
  double native_rate_hz = 30.0;
};

/// Frames at stride round(native/rate) from a raw tensor file or a directory
/// of numbered .ppm frames.
VideoTensor load_video(const std::filesystem::path& source, const LoadOptions& options);

/// round(native / rate); throws when that is below 1.
std::size_t extraction_stride(const LoadOptions& options);

}  // namespace tsn
