#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tsn {

enum SkillClass : int { kNovice = 0, kIntermediate = 1, kExpert = 2 };
inline constexpr int kNumClasses = 3;

std::string_view skill_name(int label);

struct VideoRecord {
  std::string video_id;
  std::string participant_id;
  int trial_index = 1;  // 1-based
  std::string task;
  int label = kNovice;
  std::string path;  // frame directory or raw tensor file, relative to the manifest
};

struct Manifest {
  std::vector<VideoRecord> records;
  std::filesystem::path base_dir;  // resolves relative record paths

  /// Throws on duplicate video ids, duplicate (participant, trial, task),
  /// non-positive trial indices, or labels outside {0,1,2}.
  void validate() const;
  const VideoRecord& find(std::string_view video_id) const;
  std::filesystem::path resolve(const VideoRecord& record) const;
};

/// CSV with header video_id,participant_id,trial_index,task,label,path.
std::string manifest_to_csv(const Manifest& manifest);
Manifest manifest_from_csv(std::string_view text, std::filesystem::path base_dir = {});

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

}  // namespace tsn
