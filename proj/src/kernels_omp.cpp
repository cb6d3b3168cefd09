#include <algorithm>
#include <cstring>
#include <limits>
#include <memory>
#include <vector>

#include "tsn/kernels.hpp"

namespace tsn::kernels::omp {

namespace {

// Column layout shared by the three convolution kernels: row k = ((ci*kt +
// dt)*kh + dh)*kw + dw, column P = n*out_plane + output position. Padding
// taps read as zero.
std::size_t col_rows(const ConvGeometry& g) { return g.in_channels * g.k_t * g.k_h * g.k_w; }
std::size_t out_plane(const ConvGeometry& g) { return g.out_t * g.out_h * g.out_w; }

struct Tap {
  std::size_t ci, dt, dh, dw;
};

Tap tap_of(const ConvGeometry& g, std::size_t k) {
  Tap t;
  t.dw = k % g.k_w;
  k /= g.k_w;
  t.dh = k % g.k_h;
  k /= g.k_h;
  t.dt = k % g.k_t;
  t.ci = k / g.k_t;
  return t;
}

// Input coordinate of output index o along one axis, or -1 when it falls in the padding.
inline long source(std::size_t o, std::size_t stride, std::size_t d, std::size_t pad, std::size_t extent) {
  const long x = static_cast<long>(o * stride + d) - static_cast<long>(pad);
  return x >= 0 && x < static_cast<long>(extent) ? x : -1;
}

std::unique_ptr<double[]> im2col(const ConvGeometry& g, std::span<const double> input) {
  const std::size_t rows = col_rows(g), op = out_plane(g), cols = g.batch * op;
  const std::size_t in_plane = g.in_t * g.in_h * g.in_w;
  std::unique_ptr<double[]> col(new double[rows * cols]);
#pragma omp parallel for schedule(static)
  for (std::size_t k = 0; k < rows; ++k) {
    const Tap tp = tap_of(g, k);
    // Output columns whose tap lands inside the row: ow in [lo, hi).
    std::size_t lo = 0, hi = 0;
    for (std::size_t ow = 0; ow < g.out_w; ++ow)
      if (source(ow, g.stride_w, tp.dw, g.pad_w, g.in_w) >= 0) {
        if (hi == 0) lo = ow;
        hi = ow + 1;
      }
    double* dst = col.get() + k * cols;
    for (std::size_t n = 0; n < g.batch; ++n) {
      const double* src = input.data() + (n * g.in_channels + tp.ci) * in_plane;
      for (std::size_t ot = 0; ot < g.out_t; ++ot) {
        const long it = source(ot, g.stride_t, tp.dt, g.pad_t, g.in_t);
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = source(oh, g.stride_h, tp.dh, g.pad_h, g.in_h);
          double* row = dst + (n * g.out_t + ot) * g.out_h * g.out_w + oh * g.out_w;
          if (it < 0 || ih < 0 || hi == 0) {
            std::fill(row, row + g.out_w, 0.0);
            continue;
          }
          const double* srow = src + (static_cast<std::size_t>(it) * g.in_h + static_cast<std::size_t>(ih)) * g.in_w +
                               (lo * g.stride_w + tp.dw - g.pad_w);
          std::fill(row, row + lo, 0.0);
          if (g.stride_w == 1) {
            std::memcpy(row + lo, srow, (hi - lo) * sizeof(double));
          } else {
            for (std::size_t ow = lo; ow < hi; ++ow) row[ow] = srow[(ow - lo) * g.stride_w];
          }
          std::fill(row + hi, row + g.out_w, 0.0);
        }
      }
    }
  }
  return col;
}

}  // namespace

void conv3d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> kernel, std::span<const double> bias,
                    std::span<double> output) {
  const std::size_t rows = col_rows(g), op = out_plane(g), cols = g.batch * op;
  const std::unique_ptr<double[]> col = im2col(g, input);
#pragma omp parallel
  {
    std::vector<double> acc(cols);
#pragma omp for schedule(static)
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      std::fill(acc.begin(), acc.end(), bias.empty() ? 0.0 : bias[co]);
      const double* w = kernel.data() + co * rows;
      for (std::size_t k = 0; k < rows; ++k) {
        const double wk = w[k];
        const double* c = col.get() + k * cols;
#pragma omp simd
        for (std::size_t j = 0; j < cols; ++j) acc[j] += wk * c[j];
      }
      for (std::size_t n = 0; n < g.batch; ++n)
        std::memcpy(output.data() + (n * g.out_channels + co) * op, acc.data() + n * op, op * sizeof(double));
    }
  }
}

void conv3d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> kernel, std::span<double> grad_input) {
  const std::size_t rows = col_rows(g), op = out_plane(g), cols = g.batch * op;
  const std::size_t in_plane = g.in_t * g.in_h * g.in_w;
  // gcol[k][P] = sum_co W[co][k] * dY[co][P]
  std::unique_ptr<double[]> gcol(new double[rows * cols]);
#pragma omp parallel for schedule(static)
  for (std::size_t k = 0; k < rows; ++k) {
    double* dst = gcol.get() + k * cols;
    std::fill(dst, dst + cols, 0.0);
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      const double wk = kernel[co * rows + k];
      for (std::size_t n = 0; n < g.batch; ++n) {
        const double* go = grad_output.data() + (n * g.out_channels + co) * op;
        double* d = dst + n * op;
#pragma omp simd
        for (std::size_t j = 0; j < op; ++j) d[j] += wk * go[j];
      }
    }
  }
  // Scatter back; each (n, ci) plane is owned by one thread and visited in tap order.
  const std::size_t taps = g.k_t * g.k_h * g.k_w;
#pragma omp parallel for schedule(static)
  for (std::size_t nc = 0; nc < g.batch * g.in_channels; ++nc) {
    const std::size_t n = nc / g.in_channels, ci = nc % g.in_channels;
    double* dst = grad_input.data() + nc * in_plane;
    std::fill(dst, dst + in_plane, 0.0);
    for (std::size_t tap = 0; tap < taps; ++tap) {
      const std::size_t k = ci * taps + tap;
      const Tap tp = tap_of(g, k);
      const double* src = gcol.get() + k * cols + n * op;
      for (std::size_t ot = 0; ot < g.out_t; ++ot) {
        const long it = source(ot, g.stride_t, tp.dt, g.pad_t, g.in_t);
        if (it < 0) continue;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = source(oh, g.stride_h, tp.dh, g.pad_h, g.in_h);
          if (ih < 0) continue;
          const double* srow = src + (ot * g.out_h + oh) * g.out_w;
          double* drow = dst + (static_cast<std::size_t>(it) * g.in_h + static_cast<std::size_t>(ih)) * g.in_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = source(ow, g.stride_w, tp.dw, g.pad_w, g.in_w);
            if (iw >= 0) drow[iw] += srow[ow];
          }
        }
      }
    }
  }
}

void conv3d_backward_kernel(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_kernel,
                            std::span<double> grad_bias) {
  const std::size_t rows = col_rows(g), op = out_plane(g), cols = g.batch * op;
  const std::unique_ptr<double[]> col = im2col(g, input);
#pragma omp parallel for schedule(static)
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    double* gk = grad_kernel.data() + co * rows;
    for (std::size_t k = 0; k < rows; ++k) {
      const double* c = col.get() + k * cols;
      double acc = 0.0;
      for (std::size_t n = 0; n < g.batch; ++n) {
        const double* go = grad_output.data() + (n * g.out_channels + co) * op;
        const double* cn = c + n * op;
#pragma omp simd reduction(+ : acc)
        for (std::size_t j = 0; j < op; ++j) acc += go[j] * cn[j];
      }
      gk[k] = acc;
    }
    if (!grad_bias.empty()) {
      double gb = 0.0;
      for (std::size_t n = 0; n < g.batch; ++n) {
        const double* go = grad_output.data() + (n * g.out_channels + co) * op;
        for (std::size_t j = 0; j < op; ++j) gb += go[j];
      }
      grad_bias[co] = gb;
    }
  }
}

void maxpool3d_forward(const PoolGeometry& g, std::span<const double> input,
                       std::span<double> output, std::span<std::size_t> argmax) {
  const std::size_t planes = g.batch * g.channels;
  const std::size_t in_plane = g.in_t * g.in_h * g.in_w;
  const std::size_t out_plane = g.out_t * g.out_h * g.out_w;
#pragma omp parallel for schedule(static)
  for (std::size_t nc = 0; nc < planes; ++nc) {
    const double* in = input.data() + nc * in_plane;
    std::size_t idx = nc * out_plane;
    for (std::size_t ot = 0; ot < g.out_t; ++ot)
      for (std::size_t oh = 0; oh < g.out_h; ++oh)
        for (std::size_t ow = 0; ow < g.out_w; ++ow, ++idx) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_i = 0;
          for (std::size_t kt = 0; kt < g.k_t; ++kt)
            for (std::size_t kh = 0; kh < g.k_h; ++kh) {
              const std::size_t row = ((ot * g.stride_t + kt) * g.in_h + oh * g.stride_h + kh) * g.in_w + ow * g.stride_w;
              for (std::size_t kw = 0; kw < g.k_w; ++kw)
                if (in[row + kw] > best) {
                  best = in[row + kw];
                  best_i = row + kw;
                }
            }
          output[idx] = best;
          argmax[idx] = nc * in_plane + best_i;
        }
  }
}

void maxpool3d_backward(const PoolGeometry& g, std::span<const double> grad_output,
                        std::span<const std::size_t> argmax, std::span<double> grad_input) {
  const std::size_t planes = g.batch * g.channels;
  const std::size_t in_plane = g.in_t * g.in_h * g.in_w;
  const std::size_t out_plane = g.out_t * g.out_h * g.out_w;
#pragma omp parallel for schedule(static)
  for (std::size_t nc = 0; nc < planes; ++nc) {
    std::fill(grad_input.begin() + nc * in_plane, grad_input.begin() + (nc + 1) * in_plane, 0.0);
    for (std::size_t i = nc * out_plane; i < (nc + 1) * out_plane; ++i) grad_input[argmax[i]] += grad_output[i];
  }
}

}  // namespace tsn::kernels::omp
