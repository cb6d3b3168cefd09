#include "tsn/video.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace tsn {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

constexpr std::array<char, 4> kVideoMagic{'T', 'S', 'N', 'V'};

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t read_u32(std::istream& is, const fs::path& path) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw std::runtime_error(path.string() + ": truncated header");
  return v;
}

}  // namespace

void VideoTensor::validate() const {
  if (frames.rank() != 4) throw std::invalid_argument("video: frames must be [T,C,H,W], got " + to_string(frames.shape()));
  if (frames.dim(0) < 1) throw std::invalid_argument("video: zero frames");
  if (frames.dim(1) != 2 && frames.dim(1) != 3) {
    throw std::invalid_argument("video: expected 2 (flow) or 3 (RGB) channels, got " + std::to_string(frames.dim(1)));
  }
  frames.check_finite("video");
}

void write_raw_video(const fs::path& path, const Tensor& frames) {
  if (frames.rank() != 4) throw std::invalid_argument("write_raw_video: expected [T,C,H,W], got " + to_string(frames.shape()));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  os.write(kVideoMagic.data(), 4);
  write_u32(os, 1);
  for (std::size_t d : frames.shape()) write_u32(os, static_cast<std::uint32_t>(d));
  std::vector<float> buf(frames.size());
  std::transform(frames.data().begin(), frames.data().end(), buf.begin(),
                 [](double x) { return static_cast<float>(x); });
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!os) throw std::runtime_error(path.string() + ": write failed");
}

Tensor read_raw_video(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path.string() + ": cannot open");
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kVideoMagic) throw std::runtime_error(path.string() + ": bad magic, not a TSNV file");
  const std::uint32_t version = read_u32(is, path);
  if (version != 1) throw std::runtime_error(path.string() + ": unsupported TSNV version " + std::to_string(version));
  Shape shape(4);
  for (auto& d : shape) d = read_u32(is, path);
  std::vector<float> buf(numel(shape));
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
    throw std::runtime_error(path.string() + ": truncated payload");
  }
  std::vector<double> values(buf.begin(), buf.end());
  Tensor t(std::move(shape), std::move(values));
  t.check_finite(path.string());
  return t;
}

void write_ppm(const fs::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw std::invalid_argument("write_ppm: expected [3,H,W], got " + to_string(image.shape()));
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  os << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> px(3 * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(image[(c * h + y) * w + x], 0.0, 1.0);
        px[(y * w + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!os) throw std::runtime_error(path.string() + ": write failed");
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string ppm_token(std::istream& is) {
  std::string tok;
  char c;
  while (is.get(c)) {
    if (c == '#') {
      std::string ignored;
      std::getline(is, ignored);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

Tensor read_ppm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path.string() + ": cannot open");
  if (ppm_token(is) != "P6") throw std::runtime_error(path.string() + ": not a binary P6 pixmap");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(ppm_token(is));
    h = std::stoul(ppm_token(is));
    maxval = std::stoul(ppm_token(is));
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": malformed P6 header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) throw std::runtime_error(path.string() + ": unsupported P6 geometry");
  std::vector<unsigned char> px(3 * w * h);
  if (!is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()))) {
    throw std::runtime_error(path.string() + ": truncated pixel data");
  }
  Tensor img({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img[(c * h + y) * w + x] = static_cast<double>(px[(y * w + x) * 3 + c]) / static_cast<double>(maxval);
  return img;
}

std::size_t extraction_stride(const LoadOptions& options) {
  if (!(options.rate_hz > 0.0) || !(options.native_rate_hz > 0.0)) {
    throw std::invalid_argument("load_video: frame rates must be positive");
  }
  const long stride = std::lround(options.native_rate_hz / options.rate_hz);
  if (stride < 1) {
    throw std::invalid_argument("load_video: extraction rate " + std::to_string(options.rate_hz) +
                                " Hz exceeds native rate " + std::to_string(options.native_rate_hz) + " Hz");
  }
  return static_cast<std::size_t>(stride);
}

VideoTensor load_video(const fs::path& source, const LoadOptions& options) {
  const std::size_t stride = extraction_stride(options);
  VideoTensor v;
  v.source_rate_hz = options.native_rate_hz;
  v.rate_hz = options.native_rate_hz / static_cast<double>(stride);

  if (fs::is_directory(source)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(source))
      if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error(source.string() + ": no .ppm frames");
    std::vector<Tensor> kept;
    for (std::size_t i = 0; i < files.size(); i += stride) kept.push_back(read_ppm(files[i]));
    const Shape fshape = kept.front().shape();
    Tensor frames({kept.size(), fshape[0], fshape[1], fshape[2]});
    for (std::size_t t = 0; t < kept.size(); ++t) {
      if (kept[t].shape() != fshape) throw std::runtime_error(source.string() + ": frames differ in size");
      std::copy(kept[t].data().begin(), kept[t].data().end(), frames.data().begin() + t * kept[t].size());
    }
    v.frames = std::move(frames);
  } else if (fs::is_regular_file(source)) {
    Tensor all = read_raw_video(source);
    const std::size_t total = all.dim(0);
    const std::size_t kept = total == 0 ? 0 : (total - 1) / stride + 1;
    if (kept == 0) throw std::runtime_error(source.string() + ": zero frames after sampling");
    const std::size_t frame = all.size() / total;
    Tensor frames({kept, all.dim(1), all.dim(2), all.dim(3)});
    for (std::size_t t = 0; t < kept; ++t)
      std::copy_n(all.data().begin() + t * stride * frame, frame, frames.data().begin() + t * frame);
    v.frames = std::move(frames);
  } else {
    throw std::runtime_error(source.string() + ": frame source does not exist");
  }

  v.validate();
  for (double x : v.frames.data())
    if (x < 0.0 || x > 1.0) throw std::runtime_error(source.string() + ": pixel values outside [0,1]");
  return v;
}

}  // namespace tsn
