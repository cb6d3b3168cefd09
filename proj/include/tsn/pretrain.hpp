#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tsn/flow.hpp"
#include "tsn/model.hpp"

namespace tsn {

/// Desk-scale stand-in for large-scale image pretraining: a 2D net learns a
/// 3-class synthetic image task in the finetuning modality. For flow the
/// classes are tool-tip speed bins (still, slow, fast) measured by TV-L1 on
/// rendered frame pairs; for RGB they are the tip's horizontal third.
struct PretrainConfig {
  std::size_t images = 600;
  std::size_t epochs = 30;
  std::size_t batch = 16;
  double learning_rate = 1e-3;
  double dropout = 0.0;  // replaces the spec's dropout while pretraining
  std::uint64_t seed = 0x5eed;
  std::size_t frame_size = 32;
  double flow_bound = 20.0;
  flow::TvL1Params tvl1;
};

struct PretrainSet {
  std::vector<Tensor> images;  // [C, frame_size, frame_size]
  std::vector<int> labels;
};

/// channels: 2 (flow) or 3 (RGB). Classes are balanced.
PretrainSet pretrain_images(std::size_t channels, const PretrainConfig& cfg);

/// Fan-in uniform init, then Adam with random crops and flips. `spec2d`
/// must be 2D with 2 or 3 input channels.
Checkpoint pretrain_2d(const ModelSpec& spec2d, const PretrainConfig& cfg, std::vector<double>* epoch_loss = nullptr);

}  // namespace tsn
