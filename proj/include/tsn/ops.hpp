#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "tsn/rng.hpp"
#include "tsn/tape.hpp"

// Differentiable operations. Activations are laid out [N,C,T,H,W] for 3D
// and [N,C,H,W] for 2D; convolutions are cross-correlations (no kernel flip).
namespace tsn::ops {

struct Conv3dParams {
  std::array<std::size_t, 3> stride{1, 1, 1};   // t, h, w
  std::array<std::size_t, 3> padding{0, 0, 0};  // zero padding per side
};

struct Conv2dParams {
  std::array<std::size_t, 2> stride{1, 1};
  std::array<std::size_t, 2> padding{0, 0};
};

Var conv3d(Tape& tape, Var input, Var kernel, Var bias, const Conv3dParams& params = {});
Var conv2d(Tape& tape, Var input, Var kernel, Var bias, const Conv2dParams& params = {});

Var maxpool3d(Tape& tape, Var input, std::array<std::size_t, 3> window,
              std::array<std::size_t, 3> stride);
Var maxpool2d(Tape& tape, Var input, std::array<std::size_t, 2> window,
              std::array<std::size_t, 2> stride);

/// Mean over every axis after the first two: [N,C,...] -> [N,C].
Var global_avgpool(Tape& tape, Var input);

Var relu(Tape& tape, Var input);

/// x [N,F], weight [O,F], bias [O] -> [N,O].
Var linear(Tape& tape, Var input, Var weight, Var bias);

/// Inverted dropout: survivors scaled by 1/(1-p) in train mode; identity otherwise.
Var dropout(Tape& tape, Var input, double p, bool train, Rng& rng);

/// Mean over rows of -log softmax(logits[i])[labels[i]]; logits [N,K].
Var softmax_cross_entropy(Tape& tape, Var logits, std::span<const int> labels);

/// Splits the rows of x [N,F] into `groups` contiguous equal blocks and
/// averages each block: -> [groups,F].
Var group_mean(Tape& tape, Var input, std::size_t groups);

Var add(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var input, double factor);
Var square(Tape& tape, Var input);
/// Sum of all elements -> [1].
Var sum(Tape& tape, Var input);
Var reshape(Tape& tape, Var input, Shape shape);

}  // namespace tsn::ops
