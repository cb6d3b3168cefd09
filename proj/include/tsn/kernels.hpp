#pragma once

// Convolution and pooling kernels over NCTHW buffers.
//
// Two implementations with the same signatures:
//   serial::  direct loops with explicit bounds checks; the reference.
//   omp::     im2col-style loops parallelized over channels with OpenMP.
// Every output element of an omp kernel is produced by exactly one thread in a
// fixed summation order, so results do not depend on the thread count.

#include <array>
#include <cstddef>
#include <span>

#include "tsn/tensor.hpp"

namespace tsn::kernels {

struct ConvGeometry {
  std::size_t batch = 0, in_channels = 0, in_t = 0, in_h = 0, in_w = 0;
  std::size_t out_channels = 0, k_t = 0, k_h = 0, k_w = 0;
  std::size_t stride_t = 1, stride_h = 1, stride_w = 1;
  std::size_t pad_t = 0, pad_h = 0, pad_w = 0;
  std::size_t out_t = 0, out_h = 0, out_w = 0;

  std::size_t input_size() const { return batch * in_channels * in_t * in_h * in_w; }
  std::size_t output_size() const { return batch * out_channels * out_t * out_h * out_w; }
  std::size_t kernel_size() const { return out_channels * in_channels * k_t * k_h * k_w; }
};

/// Validates a [N,C,T,H,W] input against a [Cout,Cin,kt,kh,kw] kernel.
ConvGeometry make_conv_geometry(const Shape& input, const Shape& kernel,
                                std::array<std::size_t, 3> stride,
                                std::array<std::size_t, 3> padding);

struct PoolGeometry {
  std::size_t batch = 0, channels = 0, in_t = 0, in_h = 0, in_w = 0;
  std::size_t k_t = 1, k_h = 1, k_w = 1;
  std::size_t stride_t = 1, stride_h = 1, stride_w = 1;
  std::size_t out_t = 0, out_h = 0, out_w = 0;

  std::size_t input_size() const { return batch * channels * in_t * in_h * in_w; }
  std::size_t output_size() const { return batch * channels * out_t * out_h * out_w; }
};

/// Floor-mode pooling without padding over a [N,C,T,H,W] input.
PoolGeometry make_pool_geometry(const Shape& input, std::array<std::size_t, 3> window,
                                std::array<std::size_t, 3> stride);

#define TSN_KERNEL_DECLS                                                                        \
  void conv3d_forward(const ConvGeometry& g, std::span<const double> input,                    \
                      std::span<const double> kernel, std::span<const double> bias,            \
                      std::span<double> output);                                               \
  /* Overwrites grad_input. */                                                                 \
  void conv3d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,       \
                             std::span<const double> kernel, std::span<double> grad_input);    \
  /* Overwrites grad_kernel and grad_bias. */                                                  \
  void conv3d_backward_kernel(const ConvGeometry& g, std::span<const double> input,            \
                              std::span<const double> grad_output,                             \
                              std::span<double> grad_kernel, std::span<double> grad_bias);     \
  /* argmax receives flat input indices; ties resolve to the first maximum. */                 \
  void maxpool3d_forward(const PoolGeometry& g, std::span<const double> input,                 \
                         std::span<double> output, std::span<std::size_t> argmax);             \
  /* Overwrites grad_input. */                                                                 \
  void maxpool3d_backward(const PoolGeometry& g, std::span<const double> grad_output,          \
                          std::span<const std::size_t> argmax, std::span<double> grad_input);

namespace serial {
TSN_KERNEL_DECLS
}  // namespace serial

namespace omp {
TSN_KERNEL_DECLS
}  // namespace omp

#undef TSN_KERNEL_DECLS

}  // namespace tsn::kernels
