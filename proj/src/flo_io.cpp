#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>

#include "tsn/flow.hpp"

namespace tsn::flow {

namespace {
static_assert(std::endian::native == std::endian::little, ".flo I/O assumes a little-endian host");
constexpr float kFloMagic = 202021.25f;  // bytes "PIEH"
}  // namespace

void write_flo(const std::filesystem::path& path, const FlowField& flow) {
  if (flow.u.size() != flow.width * flow.height || flow.v.size() != flow.u.size()) {
    throw std::invalid_argument("write_flo: flow buffers do not match " + std::to_string(flow.width) + "x" +
                                std::to_string(flow.height));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  const std::int32_t w = static_cast<std::int32_t>(flow.width), h = static_cast<std::int32_t>(flow.height);
  os.write(reinterpret_cast<const char*>(&kFloMagic), 4);
  os.write(reinterpret_cast<const char*>(&w), 4);
  os.write(reinterpret_cast<const char*>(&h), 4);
  std::vector<float> buf(2 * flow.u.size());
  for (std::size_t i = 0; i < flow.u.size(); ++i) {
    buf[2 * i] = static_cast<float>(flow.u[i]);
    buf[2 * i + 1] = static_cast<float>(flow.v[i]);
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!os) throw std::runtime_error(path.string() + ": write failed");
}

FlowField read_flo(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path.string() + ": cannot open");
  std::array<char, 4> magic{};
  std::int32_t w = 0, h = 0;
  if (!is.read(magic.data(), 4) || magic != std::array<char, 4>{'P', 'I', 'E', 'H'}) {
    throw std::runtime_error(path.string() + ": bad magic, not a .flo file");
  }
  if (!is.read(reinterpret_cast<char*>(&w), 4) || !is.read(reinterpret_cast<char*>(&h), 4) || w <= 0 || h <= 0) {
    throw std::runtime_error(path.string() + ": bad .flo dimensions");
  }
  FlowField f(static_cast<std::size_t>(w), static_cast<std::size_t>(h));
  std::vector<float> buf(2 * f.u.size());
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
    throw std::runtime_error(path.string() + ": truncated .flo payload");
  }
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    f.u[i] = buf[2 * i];
    f.v[i] = buf[2 * i + 1];
  }
  return f;
}

}  // namespace tsn::flow
