#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tsn/rng.hpp"
#include "tsn/tape.hpp"

namespace tsn {

enum class LayerKind { conv, maxpool, global_avgpool, dropout, linear };

std::string_view layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

/// One layer of the network. Convolutions are followed by a ReLU. Temporal
/// fields are ignored by 2D specs.
struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::string name;
  std::size_t out_channels = 0;     // conv and linear
  std::size_t kernel = 3;           // spatial extent (conv) or window (pool)
  std::size_t temporal = 3;         // temporal extent (conv) or window (pool)
  std::size_t stride = 1;           // spatial stride (pool: also temporal stride)
  std::size_t padding = 1;          // spatial zero padding per side
  std::size_t temporal_padding = 1; // conv only
  double dropout = 0.7;
};

struct ModelSpec {
  std::vector<LayerSpec> layers;
  bool three_d = true;
  std::size_t in_channels = 2;
  std::size_t input_side = 32;
  std::size_t input_length = 64;  // frames per snippet; 3D only
  std::string freeze_boundary = "conv3";

  /// Throws on an empty stack, a head width other than 3, duplicate names,
  /// non-positive extents, or an unknown freeze boundary.
  void validate() const;
  const LayerSpec& layer(std::string_view name) const;
  /// Same layers without the temporal dimension.
  ModelSpec to_2d() const;
  /// Shape of one input item: [C,L,S,S] or [C,S,S].
  Shape input_shape() const;
};

struct CompactOptions {
  std::vector<std::size_t> widths{16, 32, 64};
  std::size_t temporal = 3;
  double dropout = 0.7;
  std::string freeze_boundary = "conv3";
  bool temporal_same_padding = true;
};

/// conv(w1) -> maxpool 2 -> conv(w2) -> maxpool 2 -> conv(w3) -> global avg
/// pool -> dropout -> linear(w3 -> 3). Pools are 2x2x2 in 3D.
ModelSpec compact_spec(bool three_d, std::size_t in_channels, std::size_t input_side, std::size_t input_length,
                       const CompactOptions& options = {});

nlohmann::ordered_json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  ModelSpec spec;
  std::vector<NamedTensor> params;  // declaration order
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();

  const Tensor& param(std::string_view name) const;
  Tensor& param(std::string_view name);
  bool has(std::string_view name) const;
  std::size_t parameter_count() const;
  /// Throws unless every spec layer has weights of the expected shape.
  void validate() const;
};

/// Parameter names and shapes implied by a spec, in declaration order.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelSpec& spec);

/// Every parameter uniform in (-sqrt(1/n), sqrt(1/n)), n = weight count of its
/// layer; the head uses n = fan-in.
Checkpoint build_scratch(const ModelSpec& spec, Rng& rng);

/// Inflates a 2D checkpoint to the temporal extents of `spec` (a 3D spec with
/// the same layers) and re-draws the head.
Checkpoint build_pretrained(const ModelSpec& spec, const Checkpoint& base, Rng& rng);

/// 2D kernel (Co,Ci,k,k) -> (Co,Ci,t,k,k), replicated and divided by t.
/// Biases and the head are copied.
Checkpoint inflate(const Checkpoint& base, const ModelSpec& spec3d);

/// Changes the first conv's input channels by tiling the existing kernels
/// cyclically and dividing by the repeat factor, so a stack of identical
/// copies of the input reproduces the original response.
Checkpoint adapt_input_channels(const Checkpoint& base, std::size_t in_channels);

/// True for parameters at or after the freeze boundary.
std::map<std::string, bool> freeze_mask(const ModelSpec& spec);

/// Parameters bound to a tape; frozen ones are constants.
struct BoundModel {
  const ModelSpec* spec = nullptr;
  std::map<std::string, Var> vars;
};

BoundModel bind_model(Tape& tape, const Checkpoint& ckpt, const std::map<std::string, bool>* trainable = nullptr);

/// Runs the layers up to but excluding `stop_before` (empty: all layers) on
/// input [N, ...input_shape]. Returns logits [N,3] for the full network.
Var forward(Tape& tape, const BoundModel& model, Var input, bool train, Rng& rng, std::string_view stop_before = {});

/// Eval-or-train forward without gradients.
Tensor logits(const Checkpoint& ckpt, const Tensor& input, bool train, Rng& rng);

/// Stacks snippet tensors into a batch: [L,C,H,W] items become [N,C,L,H,W];
/// [C,H,W] items become [N,C,H,W].
Tensor batch_inputs(const std::vector<const Tensor*>& items);

}  // namespace tsn
