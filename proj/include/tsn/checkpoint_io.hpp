#pragma once

#include <filesystem>
#include <string>

#include "tsn/model.hpp"

namespace tsn {

/// "TSNC", u32 LE version=1, u32 LE byte length of a JSON header (spec,
/// tensor names and shapes, metadata), the header, then every tensor as
/// f32 LE in declaration order.
std::string checkpoint_to_bytes(const Checkpoint& ckpt);
Checkpoint checkpoint_from_bytes(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tsn
