#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

#include "tsn/kernels.hpp"

namespace tsn::kernels {

namespace {

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                     const char* axis) {
  if (stride == 0) throw std::invalid_argument(std::string("conv: zero stride on ") + axis);
  if (in + 2 * pad < k) {
    throw std::invalid_argument(std::string("conv: kernel larger than padded input on ") + axis);
  }
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

ConvGeometry make_conv_geometry(const Shape& input, const Shape& kernel,
                                std::array<std::size_t, 3> stride,
                                std::array<std::size_t, 3> padding) {
  if (input.size() != 5 || kernel.size() != 5) {
    throw std::invalid_argument("conv: expected 5-d input and kernel, got " + to_string(input) +
                                " and " + to_string(kernel));
  }
  if (input[1] != kernel[1]) {
    throw std::invalid_argument("conv: input has " + std::to_string(input[1]) +
                                " channels, kernel expects " + std::to_string(kernel[1]));
  }
  ConvGeometry g;
  g.batch = input[0];
  g.in_channels = input[1];
  g.in_t = input[2];
  g.in_h = input[3];
  g.in_w = input[4];
  g.out_channels = kernel[0];
  g.k_t = kernel[2];
  g.k_h = kernel[3];
  g.k_w = kernel[4];
  g.stride_t = stride[0];
  g.stride_h = stride[1];
  g.stride_w = stride[2];
  g.pad_t = padding[0];
  g.pad_h = padding[1];
  g.pad_w = padding[2];
  g.out_t = conv_out(g.in_t, g.k_t, g.stride_t, g.pad_t, "t");
  g.out_h = conv_out(g.in_h, g.k_h, g.stride_h, g.pad_h, "h");
  g.out_w = conv_out(g.in_w, g.k_w, g.stride_w, g.pad_w, "w");
  return g;
}

PoolGeometry make_pool_geometry(const Shape& input, std::array<std::size_t, 3> window,
                                std::array<std::size_t, 3> stride) {
  if (input.size() != 5) throw std::invalid_argument("pool: expected 5-d input, got " + to_string(input));
  PoolGeometry g;
  g.batch = input[0];
  g.channels = input[1];
  g.in_t = input[2];
  g.in_h = input[3];
  g.in_w = input[4];
  g.k_t = window[0];
  g.k_h = window[1];
  g.k_w = window[2];
  g.stride_t = stride[0];
  g.stride_h = stride[1];
  g.stride_w = stride[2];
  g.out_t = conv_out(g.in_t, g.k_t, g.stride_t, 0, "t");
  g.out_h = conv_out(g.in_h, g.k_h, g.stride_h, 0, "h");
  g.out_w = conv_out(g.in_w, g.k_w, g.stride_w, 0, "w");
  return g;
}

namespace serial {

namespace {

// Input coordinate for output position o and tap k, or -1 when it lands in padding.
inline long tap(std::size_t o, std::size_t k, std::size_t stride, std::size_t pad, std::size_t extent) {
  const long i = static_cast<long>(o * stride + k) - static_cast<long>(pad);
  return (i < 0 || i >= static_cast<long>(extent)) ? -1 : i;
}

}  // namespace

void conv3d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> kernel, std::span<const double> bias,
                    std::span<double> output) {
  std::size_t idx = 0;
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t ot = 0; ot < g.out_t; ++ot)
        for (std::size_t oh = 0; oh < g.out_h; ++oh)
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            double s = bias.empty() ? 0.0 : bias[co];
            for (std::size_t ci = 0; ci < g.in_channels; ++ci)
              for (std::size_t kt = 0; kt < g.k_t; ++kt) {
                const long it = tap(ot, kt, g.stride_t, g.pad_t, g.in_t);
                if (it < 0) continue;
                for (std::size_t kh = 0; kh < g.k_h; ++kh) {
                  const long ih = tap(oh, kh, g.stride_h, g.pad_h, g.in_h);
                  if (ih < 0) continue;
                  for (std::size_t kw = 0; kw < g.k_w; ++kw) {
                    const long iw = tap(ow, kw, g.stride_w, g.pad_w, g.in_w);
                    if (iw < 0) continue;
                    const std::size_t xi =
                        (((n * g.in_channels + ci) * g.in_t + it) * g.in_h + ih) * g.in_w + iw;
                    const std::size_t wi =
                        (((co * g.in_channels + ci) * g.k_t + kt) * g.k_h + kh) * g.k_w + kw;
                    s += kernel[wi] * input[xi];
                  }
                }
              }
            output[idx++] = s;
          }
}

void conv3d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> kernel, std::span<double> grad_input) {
  std::fill(grad_input.begin(), grad_input.end(), 0.0);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t ot = 0; ot < g.out_t; ++ot)
        for (std::size_t oh = 0; oh < g.out_h; ++oh)
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const double go =
                grad_output[(((n * g.out_channels + co) * g.out_t + ot) * g.out_h + oh) * g.out_w + ow];
            for (std::size_t ci = 0; ci < g.in_channels; ++ci)
              for (std::size_t kt = 0; kt < g.k_t; ++kt) {
                const long it = tap(ot, kt, g.stride_t, g.pad_t, g.in_t);
                if (it < 0) continue;
                for (std::size_t kh = 0; kh < g.k_h; ++kh) {
                  const long ih = tap(oh, kh, g.stride_h, g.pad_h, g.in_h);
                  if (ih < 0) continue;
                  for (std::size_t kw = 0; kw < g.k_w; ++kw) {
                    const long iw = tap(ow, kw, g.stride_w, g.pad_w, g.in_w);
                    if (iw < 0) continue;
                    const std::size_t xi =
                        (((n * g.in_channels + ci) * g.in_t + it) * g.in_h + ih) * g.in_w + iw;
                    const std::size_t wi =
                        (((co * g.in_channels + ci) * g.k_t + kt) * g.k_h + kh) * g.k_w + kw;
                    grad_input[xi] += kernel[wi] * go;
                  }
                }
              }
          }
}

void conv3d_backward_kernel(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_kernel,
                            std::span<double> grad_bias) {
  std::fill(grad_kernel.begin(), grad_kernel.end(), 0.0);
  std::fill(grad_bias.begin(), grad_bias.end(), 0.0);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t ot = 0; ot < g.out_t; ++ot)
        for (std::size_t oh = 0; oh < g.out_h; ++oh)
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const double go =
                grad_output[(((n * g.out_channels + co) * g.out_t + ot) * g.out_h + oh) * g.out_w + ow];
            if (!grad_bias.empty()) grad_bias[co] += go;
            for (std::size_t ci = 0; ci < g.in_channels; ++ci)
              for (std::size_t kt = 0; kt < g.k_t; ++kt) {
                const long it = tap(ot, kt, g.stride_t, g.pad_t, g.in_t);
                if (it < 0) continue;
                for (std::size_t kh = 0; kh < g.k_h; ++kh) {
                  const long ih = tap(oh, kh, g.stride_h, g.pad_h, g.in_h);
                  if (ih < 0) continue;
                  for (std::size_t kw = 0; kw < g.k_w; ++kw) {
                    const long iw = tap(ow, kw, g.stride_w, g.pad_w, g.in_w);
                    if (iw < 0) continue;
                    const std::size_t xi =
                        (((n * g.in_channels + ci) * g.in_t + it) * g.in_h + ih) * g.in_w + iw;
                    const std::size_t wi =
                        (((co * g.in_channels + ci) * g.k_t + kt) * g.k_h + kh) * g.k_w + kw;
                    grad_kernel[wi] += input[xi] * go;
                  }
                }
              }
          }
}

void maxpool3d_forward(const PoolGeometry& g, std::span<const double> input,
                       std::span<double> output, std::span<std::size_t> argmax) {
  std::size_t idx = 0;
  for (std::size_t nc = 0; nc < g.batch * g.channels; ++nc)
    for (std::size_t ot = 0; ot < g.out_t; ++ot)
      for (std::size_t oh = 0; oh < g.out_h; ++oh)
        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_i = 0;
          for (std::size_t kt = 0; kt < g.k_t; ++kt)
            for (std::size_t kh = 0; kh < g.k_h; ++kh)
              for (std::size_t kw = 0; kw < g.k_w; ++kw) {
                const std::size_t i =
                    ((nc * g.in_t + ot * g.stride_t + kt) * g.in_h + oh * g.stride_h + kh) * g.in_w +
                    ow * g.stride_w + kw;
                if (input[i] > best) {
                  best = input[i];
                  best_i = i;
                }
              }
          output[idx] = best;
          argmax[idx] = best_i;
          ++idx;
        }
}

void maxpool3d_backward(const PoolGeometry& g, std::span<const double> grad_output,
                        std::span<const std::size_t> argmax, std::span<double> grad_input) {
  std::fill(grad_input.begin(), grad_input.end(), 0.0);
  for (std::size_t i = 0; i < g.output_size(); ++i) grad_input[argmax[i]] += grad_output[i];
}

}  // namespace serial
}  // namespace tsn::kernels
