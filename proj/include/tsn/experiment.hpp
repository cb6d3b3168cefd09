#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tsn/augment.hpp"
#include "tsn/eval.hpp"
#include "tsn/flow.hpp"
#include "tsn/manifest.hpp"
#include "tsn/model.hpp"
#include "tsn/pretrain.hpp"
#include "tsn/snippets.hpp"
#include "tsn/train.hpp"

namespace tsn {

/// Everything needed to reproduce a training or cross-validation run.
struct ExperimentConfig {
  std::filesystem::path manifest;
  std::filesystem::path out = "runs/default";
  double native_rate_hz = 0.0;  // 0: read dataset.json beside the manifest, else 30
  SnippetSpec snippets;
  AugmentParams augment;  // augment.output_side is the network input side
  flow::TvL1Params tvl1;
  double flow_bound = 20.0;
  CompactOptions model;
  TrainConfig train;
  PretrainConfig pretrain;
  FoldScheme scheme = FoldScheme::loso;
  std::size_t runs = 4;
  std::size_t parallel = 1;

  nlohmann::ordered_json to_json() const;
  /// Strict: unknown fields and invalid values are reported by dotted path.
  static ExperimentConfig from_json(const nlohmann::json& j);
  ModelSpec model_spec() const;
  /// Run r uses train.seed + r.
  std::vector<std::uint64_t> run_seeds() const;
};

/// Sets `path` (dot separated) in `config` to `value`, parsed as JSON when
/// possible and as a string otherwise. Unknown paths are errors.
void apply_override(nlohmann::ordered_json& config, const std::string& path, const std::string& value);

/// Defaults, then the config file (if any), then the overrides in order.
ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                const std::vector<std::pair<std::string, std::string>>& overrides);

/// Loaded data plus the shared pretrained base for one configuration.
class Experiment {
 public:
  /// Loads every manifest video from disk.
  Experiment(ExperimentConfig config, Manifest manifest);
  /// Uses in-memory RGB videos keyed by video id.
  Experiment(ExperimentConfig config, Manifest manifest, std::map<std::string, VideoTensor> rgb);

  const ExperimentConfig& config() const { return config_; }
  const Manifest& manifest() const { return manifest_; }
  /// Modality input (RGB or quantized flow) of one video.
  const VideoTensor& input(const std::string& video_id) const;

  /// Pretrained 2D base (computed on first use) adapted, inflated, new head;
  /// or the scratch init. Deterministic in seed.
  Checkpoint initial_checkpoint(std::uint64_t seed);
  TrainResult train_on(const std::vector<std::string>& video_ids, std::uint64_t seed,
                       const EpochCallback& on_epoch = {});
  Prediction predict(const Checkpoint& ckpt, const std::string& video_id) const;

  /// Cross-validation over config.runs seeds. When save_dir is set, fold
  /// checkpoints and JSON-lines logs go to save_dir/run<r>/fold<f>.*
  CvReport cross_validate(const std::optional<std::filesystem::path>& save_dir = std::nullopt);

  /// Seed used to train fold `fold` of a run with seed `run_seed`.
  static std::uint64_t fold_seed(std::uint64_t run_seed, std::size_t fold);

 private:
  void prepare(std::map<std::string, VideoTensor> rgb);

  ExperimentConfig config_;
  Manifest manifest_;
  std::map<std::string, VideoTensor> inputs_;
  std::size_t frame_size_ = 0;
  std::optional<Checkpoint> pretrained_;
};

/// report.json, metrics.csv and confusion.csv under dir.
void write_report(const std::filesystem::path& dir, const CvReport& report);

}  // namespace tsn
