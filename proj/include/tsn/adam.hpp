#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tsn/tensor.hpp"

namespace tsn {

struct AdamState {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;   // one per parameter slot, created on first step
  std::vector<Tensor> second_moment;
};

/// One bias-corrected Adam update. `grads[i] == nullptr` marks a frozen
/// parameter: it is skipped and its moments stay untouched.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, AdamState& state);

}  // namespace tsn
