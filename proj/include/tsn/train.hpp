#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tsn/augment.hpp"
#include "tsn/model.hpp"
#include "tsn/snippets.hpp"

namespace tsn {

enum class TrainMode { tsn, single_snippet };
enum class InitMode { pretrained, scratch };

TrainMode parse_train_mode(std::string_view name);
std::string_view train_mode_name(TrainMode mode);
InitMode parse_init_mode(std::string_view name);
std::string_view init_mode_name(InitMode mode);

struct TrainConfig {
  std::size_t segments = 10;  // K
  std::size_t kappa = 25;
  std::size_t epochs = 1200;
  std::size_t batch_videos = 2;
  double learning_rate = 1e-5;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::tsn;
  InitMode init = InitMode::pretrained;
  std::size_t single_snippet_factor = 0;  // epoch multiplier in single-snippet mode; 0 means K

  void validate() const;
  /// Epochs actually run: epochs, times the factor in single-snippet mode.
  std::size_t effective_epochs() const;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  double train_accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::uint64_t seed = 0;
  std::vector<EpochLog> epochs;

  /// One JSON object per line: epoch, loss, train_accuracy, seconds.
  std::string to_jsonl() const;
};

/// A training or test video, already converted to the model's modality.
struct LabeledVideo {
  std::string id;
  const VideoTensor* video = nullptr;
  int label = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainLog log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Mean of snippet logits within each of `videos` equal contiguous row blocks.
Var consensus(Tape& tape, Var snippet_logits, std::size_t videos);

/// Network input for one snippet start: window, optional augmentation, then
/// resize to the spec's input side (of2d windows are channel-stacked last).
Tensor snippet_input(const VideoTensor& video, std::size_t start, const SnippetSpec& snippets,
                     const AugmentDraw* draw, std::size_t side);

/// Adam on the trainable parameters of `initial` (freeze mask for
/// pretrained init, everything for scratch). Each step averages the
/// consensus losses of `batch_videos` videos. Deterministic in cfg.seed.
TrainResult train(std::span<const LabeledVideo> videos, const TrainConfig& cfg, const SnippetSpec& snippets,
                  const AugmentParams& augment, Checkpoint initial, const EpochCallback& on_epoch = {});

struct Prediction {
  int label = 0;
  std::array<double, 3> scores{};  // consensus logits
};

/// kappa equidistant snippets, eval-mode forward, consensus, argmax with
/// ties toward the lower class.
Prediction predict(const Checkpoint& ckpt, const VideoTensor& video, std::size_t kappa, const SnippetSpec& snippets);

int argmax_low(std::span<const double> scores);

}  // namespace tsn
