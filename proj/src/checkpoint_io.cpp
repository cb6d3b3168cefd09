#include "tsn/checkpoint_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tsn {

namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

constexpr char kMagic[4] = {'T', 'S', 'N', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw std::runtime_error("checkpoint: truncated header");
  std::uint32_t v;
  std::memcpy(&v, in.data() + pos, 4);
  pos += 4;
  return v;
}

}  // namespace

std::string checkpoint_to_bytes(const Checkpoint& ckpt) {
  ckpt.validate();
  nlohmann::ordered_json header;
  header["spec"] = spec_to_json(ckpt.spec);
  header["tensors"] = nlohmann::ordered_json::array();
  for (const NamedTensor& p : ckpt.params) header["tensors"].push_back({{"name", p.name}, {"shape", p.value.shape()}});
  header["metadata"] = ckpt.metadata;
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const NamedTensor& p : ckpt.params)
    for (double v : p.value.data()) {
      const float f = static_cast<float>(v);
      out.append(reinterpret_cast<const char*>(&f), 4);
    }
  return out;
}

Checkpoint checkpoint_from_bytes(const std::string& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic (expected TSNC)");
  std::size_t pos = 4;
  const std::uint32_t version = get_u32(bytes, pos);
  if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t len = get_u32(bytes, pos);
  if (pos + len > bytes.size()) throw std::runtime_error("checkpoint: truncated header");
  const nlohmann::json header = nlohmann::json::parse(bytes.substr(pos, len));
  pos += len;

  Checkpoint c;
  c.spec = spec_from_json(header.at("spec"));
  c.metadata = header.at("metadata");
  for (const auto& t : header.at("tensors")) {
    Tensor value(t.at("shape").get<Shape>());
    if (pos + 4 * value.size() > bytes.size())
      throw std::runtime_error("checkpoint: truncated data for " + t.at("name").get<std::string>());
    for (double& v : value.data()) {
      float f;
      std::memcpy(&f, bytes.data() + pos, 4);
      pos += 4;
      v = f;
    }
    c.params.push_back({t.at("name").get<std::string>(), std::move(value)});
  }
  if (pos != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes");
  c.validate();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = checkpoint_to_bytes(ckpt);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error(path.string() + ": write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path.string() + ": cannot open");
  std::ostringstream ss;
  ss << is.rdbuf();
  try {
    return checkpoint_from_bytes(ss.str());
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace tsn
