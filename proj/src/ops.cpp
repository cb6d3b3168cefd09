#include "tsn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "tsn/kernels.hpp"

namespace tsn::ops {

namespace k = tsn::kernels;

namespace {

void expect_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": " + what + " must be rank " +
                                std::to_string(rank) + ", got " + to_string(t.shape()));
  }
}

Var conv_impl(Tape& tape, const char* name, Var input, Var kernel, Var bias,
              const k::ConvGeometry& g, Shape out_shape) {
  const Tensor& w = tape.value(kernel);
  const Tensor& b = tape.value(bias);
  if (b.rank() != 1 || b.dim(0) != g.out_channels) {
    throw std::invalid_argument(std::string(name) + ": bias shape " + to_string(b.shape()) +
                                " does not match " + std::to_string(g.out_channels) + " output channels");
  }
  Tensor out(std::move(out_shape));
  k::omp::conv3d_forward(g, tape.value(input).data(), w.data(), b.data(), out.data());
  return tape.record(name, std::move(out), {input, kernel, bias},
                     [input, kernel, bias, g](Tape& t, const Tensor& grad) {
                       if (t.requires_grad(input)) {
                         Tensor gx(t.value(input).shape());
                         k::omp::conv3d_backward_input(g, grad.data(), t.value(kernel).data(), gx.data());
                         t.accumulate(input, gx);
                       }
                       if (t.requires_grad(kernel) || t.requires_grad(bias)) {
                         Tensor gw(t.value(kernel).shape());
                         Tensor gb(t.value(bias).shape());
                         k::omp::conv3d_backward_kernel(g, t.value(input).data(), grad.data(), gw.data(),
                                                        gb.data());
                         t.accumulate(kernel, gw);
                         t.accumulate(bias, gb);
                       }
                     });
}

Var pool_impl(Tape& tape, const char* name, Var input, const k::PoolGeometry& g, Shape out_shape) {
  Tensor out(std::move(out_shape));
  auto argmax = std::make_shared<std::vector<std::size_t>>(g.output_size());
  k::omp::maxpool3d_forward(g, tape.value(input).data(), out.data(), *argmax);
  return tape.record(name, std::move(out), {input}, [input, g, argmax](Tape& t, const Tensor& grad) {
    Tensor gx(t.value(input).shape());
    k::omp::maxpool3d_backward(g, grad.data(), *argmax, gx.data());
    t.accumulate(input, gx);
  });
}

}  // namespace

Var conv3d(Tape& tape, Var input, Var kernel, Var bias, const Conv3dParams& params) {
  const Tensor& x = tape.value(input);
  const Tensor& w = tape.value(kernel);
  expect_rank(x, 5, "conv3d", "input");
  expect_rank(w, 5, "conv3d", "kernel");
  const k::ConvGeometry g = k::make_conv_geometry(x.shape(), w.shape(), params.stride, params.padding);
  return conv_impl(tape, "conv3d", input, kernel, bias, g,
                   {g.batch, g.out_channels, g.out_t, g.out_h, g.out_w});
}

Var conv2d(Tape& tape, Var input, Var kernel, Var bias, const Conv2dParams& params) {
  const Tensor& x = tape.value(input);
  const Tensor& w = tape.value(kernel);
  expect_rank(x, 4, "conv2d", "input");
  expect_rank(w, 4, "conv2d", "kernel");
  // A 2D convolution is the 3D kernel on a singleton time axis.
  const k::ConvGeometry g = k::make_conv_geometry(
      {x.dim(0), x.dim(1), 1, x.dim(2), x.dim(3)}, {w.dim(0), w.dim(1), 1, w.dim(2), w.dim(3)},
      {1, params.stride[0], params.stride[1]}, {0, params.padding[0], params.padding[1]});
  return conv_impl(tape, "conv2d", input, kernel, bias, g, {g.batch, g.out_channels, g.out_h, g.out_w});
}

Var maxpool3d(Tape& tape, Var input, std::array<std::size_t, 3> window,
              std::array<std::size_t, 3> stride) {
  const Tensor& x = tape.value(input);
  expect_rank(x, 5, "maxpool3d", "input");
  const k::PoolGeometry g = k::make_pool_geometry(x.shape(), window, stride);
  return pool_impl(tape, "maxpool3d", input, g, {g.batch, g.channels, g.out_t, g.out_h, g.out_w});
}

Var maxpool2d(Tape& tape, Var input, std::array<std::size_t, 2> window,
              std::array<std::size_t, 2> stride) {
  const Tensor& x = tape.value(input);
  expect_rank(x, 4, "maxpool2d", "input");
  const k::PoolGeometry g = k::make_pool_geometry({x.dim(0), x.dim(1), 1, x.dim(2), x.dim(3)},
                                                  {1, window[0], window[1]}, {1, stride[0], stride[1]});
  return pool_impl(tape, "maxpool2d", input, g, {g.batch, g.channels, g.out_h, g.out_w});
}

Var global_avgpool(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  if (x.rank() < 2) throw std::invalid_argument("global_avgpool: rank < 2 input " + to_string(x.shape()));
  const std::size_t rows = x.dim(0) * x.dim(1);
  const std::size_t inner = rows == 0 ? 0 : x.size() / rows;
  if (inner == 0) throw std::invalid_argument("global_avgpool: empty spatial extent");
  Tensor out({x.dim(0), x.dim(1)});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < inner; ++i) s += x[r * inner + i];
    out[r] = s / static_cast<double>(inner);
  }
  return tape.record("global_avgpool", std::move(out), {input},
                     [input, rows, inner](Tape& t, const Tensor& grad) {
                       Tensor& gx = t.grad_buffer(input);
                       const double inv = 1.0 / static_cast<double>(inner);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t i = 0; i < inner; ++i) gx[r * inner + i] += grad[r] * inv;
                     });
}

Var relu(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return tape.record("relu", std::move(out), {input}, [input](Tape& t, const Tensor& grad) {
    const Tensor& xv = t.value(input);
    Tensor& gx = t.grad_buffer(input);
    for (std::size_t i = 0; i < xv.size(); ++i)
      if (xv[i] > 0.0) gx[i] += grad[i];
  });
}

Var linear(Tape& tape, Var input, Var weight, Var bias) {
  const Tensor& x = tape.value(input);
  const Tensor& w = tape.value(weight);
  const Tensor& b = tape.value(bias);
  expect_rank(x, 2, "linear", "input");
  expect_rank(w, 2, "linear", "weight");
  const std::size_t n = x.dim(0), f = x.dim(1), o = w.dim(0);
  if (w.dim(1) != f || b.rank() != 1 || b.dim(0) != o) {
    throw std::invalid_argument("linear: input " + to_string(x.shape()) + ", weight " +
                                to_string(w.shape()) + ", bias " + to_string(b.shape()));
  }
  Tensor out({n, o});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < o; ++j) {
      double s = b[j];
      for (std::size_t i = 0; i < f; ++i) s += w[j * f + i] * x[r * f + i];
      out[r * o + j] = s;
    }
  return tape.record("linear", std::move(out), {input, weight, bias},
                     [input, weight, bias, n, f, o](Tape& t, const Tensor& grad) {
                       if (t.requires_grad(input)) {
                         const Tensor& wv = t.value(weight);
                         Tensor& gx = t.grad_buffer(input);
                         for (std::size_t r = 0; r < n; ++r)
                           for (std::size_t j = 0; j < o; ++j)
                             for (std::size_t i = 0; i < f; ++i) gx[r * f + i] += grad[r * o + j] * wv[j * f + i];
                       }
                       if (t.requires_grad(weight)) {
                         const Tensor& xv = t.value(input);
                         Tensor& gw = t.grad_buffer(weight);
                         for (std::size_t r = 0; r < n; ++r)
                           for (std::size_t j = 0; j < o; ++j)
                             for (std::size_t i = 0; i < f; ++i) gw[j * f + i] += grad[r * o + j] * xv[r * f + i];
                       }
                       if (t.requires_grad(bias)) {
                         Tensor& gb = t.grad_buffer(bias);
                         for (std::size_t r = 0; r < n; ++r)
                           for (std::size_t j = 0; j < o; ++j) gb[j] += grad[r * o + j];
                       }
                     });
}

Var dropout(Tape& tape, Var input, double p, bool train, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must lie in [0,1), got " + std::to_string(p));
  const Tensor& x = tape.value(input);
  if (!train || p == 0.0) {
    return tape.record("dropout", x, {input}, [input](Tape& t, const Tensor& grad) { t.accumulate(input, grad); });
  }
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    (*mask)[i] = bernoulli(rng, p) ? 0.0 : keep_scale;
    out[i] = x[i] * (*mask)[i];
  }
  return tape.record("dropout", std::move(out), {input}, [input, mask](Tape& t, const Tensor& grad) {
    Tensor& gx = t.grad_buffer(input);
    for (std::size_t i = 0; i < grad.size(); ++i) gx[i] += grad[i] * (*mask)[i];
  });
}

Var softmax_cross_entropy(Tape& tape, Var logits, std::span<const int> labels) {
  const Tensor& z = tape.value(logits);
  expect_rank(z, 2, "softmax_cross_entropy", "logits");
  const std::size_t n = z.dim(0), c = z.dim(1);
  if (labels.size() != n) {
    throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(n) + " rows");
  }
  for (int label : labels)
    if (label < 0 || static_cast<std::size_t>(label) >= c) {
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                  " outside [0," + std::to_string(c) + ")");
    }
  auto probs = std::make_shared<std::vector<double>>(n * c);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = z.raw() + r * c;
    const double m = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < c; ++j) (*probs)[r * c + j] = std::exp(row[j] - lse);
    loss += lse - row[labels[r]];
  }
  loss /= static_cast<double>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return tape.record("softmax_cross_entropy", Tensor({1}, {loss}), {logits},
                     [logits, probs, lab = std::move(lab), n, c](Tape& t, const Tensor& grad) {
                       Tensor& gz = t.grad_buffer(logits);
                       const double s = grad[0] / static_cast<double>(n);
                       for (std::size_t r = 0; r < n; ++r)
                         for (std::size_t j = 0; j < c; ++j) {
                           const double onehot = static_cast<std::size_t>(lab[r]) == j ? 1.0 : 0.0;
                           gz[r * c + j] += s * ((*probs)[r * c + j] - onehot);
                         }
                     });
}

Var group_mean(Tape& tape, Var input, std::size_t groups) {
  const Tensor& x = tape.value(input);
  expect_rank(x, 2, "group_mean", "input");
  const std::size_t n = x.dim(0), f = x.dim(1);
  if (groups == 0 || n == 0 || n % groups != 0) {
    throw std::invalid_argument("group_mean: " + std::to_string(n) + " rows do not split into " +
                                std::to_string(groups) + " groups");
  }
  const std::size_t per = n / groups;
  Tensor out({groups, f});
  for (std::size_t gi = 0; gi < groups; ++gi)
    for (std::size_t j = 0; j < f; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < per; ++r) s += x[(gi * per + r) * f + j];
      out[gi * f + j] = s / static_cast<double>(per);
    }
  return tape.record("group_mean", std::move(out), {input}, [input, per, groups, f](Tape& t, const Tensor& grad) {
    Tensor& gx = t.grad_buffer(input);
    const double inv = 1.0 / static_cast<double>(per);
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (std::size_t r = 0; r < per; ++r)
        for (std::size_t j = 0; j < f; ++j) gx[(gi * per + r) * f + j] += grad[gi * f + j] * inv;
  });
}

Var add(Tape& tape, Var a, Var b) {
  const Tensor& x = tape.value(a);
  const Tensor& y = tape.value(b);
  if (x.shape() != y.shape()) {
    throw std::invalid_argument("add: shape " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  }
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return tape.record("add", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& grad) {
    t.accumulate(a, grad);
    t.accumulate(b, grad);
  });
}

Var scale(Tape& tape, Var input, double factor) {
  const Tensor& x = tape.value(input);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  return tape.record("scale", std::move(out), {input}, [input, factor](Tape& t, const Tensor& grad) {
    Tensor& gx = t.grad_buffer(input);
    for (std::size_t i = 0; i < grad.size(); ++i) gx[i] += grad[i] * factor;
  });
}

Var square(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * x[i];
  return tape.record("square", std::move(out), {input}, [input](Tape& t, const Tensor& grad) {
    const Tensor& xv = t.value(input);
    Tensor& gx = t.grad_buffer(input);
    for (std::size_t i = 0; i < grad.size(); ++i) gx[i] += 2.0 * xv[i] * grad[i];
  });
}

Var sum(Tape& tape, Var input) {
  return tape.record("sum", Tensor({1}, {tape.value(input).sum()}), {input},
                     [input](Tape& t, const Tensor& grad) {
                       Tensor& gx = t.grad_buffer(input);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += grad[0];
                     });
}

Var reshape(Tape& tape, Var input, Shape shape) {
  Tensor out = tape.value(input).reshaped(std::move(shape));
  return tape.record("reshape", std::move(out), {input}, [input](Tape& t, const Tensor& grad) {
    t.accumulate(input, grad.reshaped(t.value(input).shape()));
  });
}

}  // namespace tsn::ops
