#include "tsn/flow.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <stdexcept>
#include <string>

namespace tsn::flow {

namespace {

constexpr double kGradIsZero = 1e-10;

// lambda is calibrated for 8-bit intensities; images in [0,1] are scaled up.
constexpr double kIntensityScale = 255.0;

// Bilinear sample with edge replication.
double sample(const GrayImage& img, double x, double y) {
  const double maxx = static_cast<double>(img.width - 1);
  const double maxy = static_cast<double>(img.height - 1);
  x = std::clamp(x, 0.0, maxx);
  y = std::clamp(y, 0.0, maxy);
  const std::size_t x0 = static_cast<std::size_t>(x);
  const std::size_t y0 = static_cast<std::size_t>(y);
  const std::size_t x1 = std::min(x0 + 1, img.width - 1);
  const std::size_t y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const double top = img.at(x0, y0) * (1.0 - fx) + img.at(x1, y0) * fx;
  const double bottom = img.at(x0, y1) * (1.0 - fx) + img.at(x1, y1) * fx;
  return top * (1.0 - fy) + bottom * fy;
}

// Centered differences with replicated borders.
void centered_gradient(const GrayImage& img, GrayImage& gx, GrayImage& gy) {
  const std::size_t w = img.width, h = img.height;
  gx = GrayImage(w, h);
  gy = GrayImage(w, h);
#pragma omp parallel for schedule(static)
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t xm = x == 0 ? 0 : x - 1, xp = std::min(x + 1, w - 1);
      const std::size_t ym = y == 0 ? 0 : y - 1, yp = std::min(y + 1, h - 1);
      gx.at(x, y) = 0.5 * (img.at(xp, y) - img.at(xm, y));
      gy.at(x, y) = 0.5 * (img.at(x, yp) - img.at(x, ym));
    }
}

// Forward differences, zero on the last column/row.
void forward_gradient(const std::vector<double>& f, std::size_t w, std::size_t h, std::vector<double>& fx,
                      std::vector<double>& fy) {
#pragma omp parallel for schedule(static)
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      fx[i] = x + 1 < w ? f[i + 1] - f[i] : 0.0;
      fy[i] = y + 1 < h ? f[i + w] - f[i] : 0.0;
    }
}

// Negative adjoint of forward_gradient.
void divergence(const std::vector<double>& p1, const std::vector<double>& p2, std::size_t w, std::size_t h,
                std::vector<double>& div) {
#pragma omp parallel for schedule(static)
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      double d1, d2;
      if (x == 0) d1 = p1[i];
      else if (x + 1 == w) d1 = -p1[i - 1];
      else d1 = p1[i] - p1[i - 1];
      if (y == 0) d2 = p2[i];
      else if (y + 1 == h) d2 = -p2[i - w];
      else d2 = p2[i] - p2[i - w];
      div[i] = d1 + d2;
    }
}

double total_variation(const std::vector<double>& f, std::size_t w, std::size_t h) {
  double tv = 0.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      const double fx = x + 1 < w ? f[i + 1] - f[i] : 0.0;
      const double fy = y + 1 < h ? f[i + w] - f[i] : 0.0;
      tv += std::sqrt(fx * fx + fy * fy);
    }
  return tv;
}

void median3x3(std::vector<double>& f, std::size_t w, std::size_t h) {
  const std::vector<double> src = f;
#pragma omp parallel for schedule(static)
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      std::array<double, 9> win;
      std::size_t k = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const std::size_t xx = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(x) + dx, 0, static_cast<long>(w) - 1));
          const std::size_t yy = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(y) + dy, 0, static_cast<long>(h) - 1));
          win[k++] = src[yy * w + xx];
        }
      std::nth_element(win.begin(), win.begin() + 4, win.end());
      f[y * w + x] = win[4];
    }
}

GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) norm += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= norm;
  const long w = static_cast<long>(img.width), h = static_cast<long>(img.height);
  GrayImage tmp(img.width, img.height), out(img.width, img.height);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) s += k[i + radius] * img.at(std::clamp(x + i, 0L, w - 1), y);
      tmp.at(x, y) = s;
    }
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp.at(x, std::clamp(y + i, 0L, h - 1));
      out.at(x, y) = s;
    }
  return out;
}

// Bilinear resampling on pixel centers.
std::vector<double> resample(const std::vector<double>& f, std::size_t w, std::size_t h, std::size_t nw,
                             std::size_t nh) {
  GrayImage src(w, h);
  src.pixels = f;
  std::vector<double> out(nw * nh);
  const double sx = static_cast<double>(w) / static_cast<double>(nw);
  const double sy = static_cast<double>(h) / static_cast<double>(nh);
  for (std::size_t y = 0; y < nh; ++y)
    for (std::size_t x = 0; x < nw; ++x)
      out[y * nw + x] = sample(src, (static_cast<double>(x) + 0.5) * sx - 0.5, (static_cast<double>(y) + 0.5) * sy - 0.5);
  return out;
}

GrayImage downsample(const GrayImage& img, double factor, std::size_t nw, std::size_t nh) {
  const GrayImage blurred = gaussian_blur(img, 0.6 * std::sqrt(1.0 / (factor * factor) - 1.0));
  GrayImage out(nw, nh);
  out.pixels = resample(blurred.pixels, img.width, img.height, nw, nh);
  return out;
}

std::size_t scaled(std::size_t side, double factor) {
  return static_cast<std::size_t>(std::lround(static_cast<double>(side) * factor));
}

std::size_t level_count(std::size_t w, std::size_t h, const TvL1Params& p) {
  const std::size_t min_side = std::min(w, h);
  if (min_side < p.min_coarse_side) {
    throw std::invalid_argument("compute_flow: image " + std::to_string(w) + "x" + std::to_string(h) +
                                " is smaller than the coarsest pyramid side " + std::to_string(p.min_coarse_side));
  }
  std::size_t possible = 1;
  std::size_t side = min_side;
  while (scaled(side, p.scale) >= p.min_coarse_side) {
    side = scaled(side, p.scale);
    ++possible;
  }
  if (p.levels == 0) return possible;
  if (p.levels > possible) {
    throw std::invalid_argument("compute_flow: " + std::to_string(p.levels) + " pyramid levels would shrink a " +
                                std::to_string(w) + "x" + std::to_string(h) + " image below " +
                                std::to_string(p.min_coarse_side) + " px");
  }
  return p.levels;
}

double energy_at_scale(const GrayImage& prev, const GrayImage& next, const FlowField& flow, double lambda) {
  if (prev.width != next.width || prev.height != next.height || flow.width != prev.width ||
      flow.height != prev.height || flow.u.size() != prev.pixels.size() || flow.v.size() != prev.pixels.size()) {
    throw std::invalid_argument("tv_l1_energy: image and flow dimensions differ");
  }
  const std::size_t w = prev.width, h = prev.height;
  double data = 0.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      data += std::abs(sample(next, static_cast<double>(x) + flow.u[i], static_cast<double>(y) + flow.v[i]) -
                       prev.pixels[i]);
    }
  return total_variation(flow.u, w, h) + total_variation(flow.v, w, h) + lambda * data;
}

GrayImage scaled_image(const GrayImage& img) {
  GrayImage out = img;
  for (double& v : out.pixels) v *= kIntensityScale;
  return out;
}

// Primal-dual TV-L1 iterations on one pyramid level, warps in sequence.
void solve_level(const GrayImage& i0, const GrayImage& i1, FlowField& flow, const TvL1Params& p,
                 LevelTrace& trace) {
  const std::size_t w = i0.width, h = i0.height, n = w * h;
  GrayImage i1x, i1y;
  centered_gradient(i1, i1x, i1y);

  std::vector<double> p11(n, 0.0), p12(n, 0.0), p21(n, 0.0), p22(n, 0.0);
  std::vector<double> v1(n), v2(n), div1(n), div2(n), u1x(n), u1y(n), u2x(n), u2y(n);
  std::vector<double> warped(n), wx(n), wy(n), grad(n), rho_c(n);
  std::vector<double> row_err(h);
  const double lt = p.lambda * p.theta;
  const double taut = p.tau / p.theta;

  double energy = energy_at_scale(i0, i1, flow, p.lambda);
  trace.energy_before = energy;

  for (std::size_t warp = 0; warp < p.warps; ++warp) {
    const FlowField previous = flow;
    const std::vector<double> dual[4] = {p11, p12, p21, p22};

#pragma omp parallel for schedule(static)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t i = y * w + x;
        const double xx = static_cast<double>(x) + flow.u[i];
        const double yy = static_cast<double>(y) + flow.v[i];
        warped[i] = sample(i1, xx, yy);
        wx[i] = sample(i1x, xx, yy);
        wy[i] = sample(i1y, xx, yy);
        grad[i] = wx[i] * wx[i] + wy[i] * wy[i];
        rho_c[i] = warped[i] - wx[i] * flow.u[i] - wy[i] * flow.v[i] - i0.pixels[i];
      }

    for (std::size_t iter = 0; iter < p.inner_iterations; ++iter) {
#pragma omp parallel for schedule(static)
      for (std::size_t i = 0; i < n; ++i) {
        const double rho = rho_c[i] + wx[i] * flow.u[i] + wy[i] * flow.v[i];
        double d1, d2;
        if (rho < -lt * grad[i]) {
          d1 = lt * wx[i];
          d2 = lt * wy[i];
        } else if (rho > lt * grad[i]) {
          d1 = -lt * wx[i];
          d2 = -lt * wy[i];
        } else if (grad[i] < kGradIsZero) {
          d1 = d2 = 0.0;
        } else {
          const double fi = -rho / grad[i];
          d1 = fi * wx[i];
          d2 = fi * wy[i];
        }
        v1[i] = flow.u[i] + d1;
        v2[i] = flow.v[i] + d2;
      }
      divergence(p11, p12, w, h, div1);
      divergence(p21, p22, w, h, div2);
#pragma omp parallel for schedule(static)
      for (std::size_t y = 0; y < h; ++y) {
        double err = 0.0;
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t i = y * w + x;
          const double nu = v1[i] + p.theta * div1[i];
          const double nv = v2[i] + p.theta * div2[i];
          err += (nu - flow.u[i]) * (nu - flow.u[i]) + (nv - flow.v[i]) * (nv - flow.v[i]);
          flow.u[i] = nu;
          flow.v[i] = nv;
        }
        row_err[y] = err;
      }
      forward_gradient(flow.u, w, h, u1x, u1y);
      forward_gradient(flow.v, w, h, u2x, u2y);
#pragma omp parallel for schedule(static)
      for (std::size_t i = 0; i < n; ++i) {
        const double ng1 = 1.0 + taut * std::sqrt(u1x[i] * u1x[i] + u1y[i] * u1y[i]);
        const double ng2 = 1.0 + taut * std::sqrt(u2x[i] * u2x[i] + u2y[i] * u2y[i]);
        p11[i] = (p11[i] + taut * u1x[i]) / ng1;
        p12[i] = (p12[i] + taut * u1y[i]) / ng1;
        p21[i] = (p21[i] + taut * u2x[i]) / ng2;
        p22[i] = (p22[i] + taut * u2y[i]) / ng2;
      }
      double err = 0.0;
      for (double e : row_err) err += e;  // fixed order keeps the stopping rule thread-count independent
      if (err / static_cast<double>(n) < p.epsilon * p.epsilon) break;
    }

    median3x3(flow.u, w, h);
    median3x3(flow.v, w, h);

    // Monotone descent: a warp that raises the energy is undone and ends the level.
    const double after = energy_at_scale(i0, i1, flow, p.lambda);
    if (after > energy) {
      flow = previous;
      p11 = dual[0];
      p12 = dual[1];
      p21 = dual[2];
      p22 = dual[3];
      trace.energy_after_warp.push_back(energy);
      ++trace.rejected_warps;
      break;
    }
    energy = after;
    trace.energy_after_warp.push_back(energy);
  }
}

}  // namespace

void TvL1Params::validate() const {
  if (!(lambda > 0.0)) throw std::invalid_argument("tvl1: lambda must be positive");
  if (!(theta > 0.0)) throw std::invalid_argument("tvl1: theta must be positive");
  if (!(tau > 0.0 && tau <= 0.125)) throw std::invalid_argument("tvl1: tau must lie in (0, 1/8]");
  if (!(scale > 0.0 && scale < 1.0)) throw std::invalid_argument("tvl1: scale must lie in (0,1)");
  if (warps < 1 || inner_iterations < 1) throw std::invalid_argument("tvl1: warps and inner iterations must be >= 1");
  if (min_coarse_side < 1) throw std::invalid_argument("tvl1: min_coarse_side must be >= 1");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("tvl1: epsilon must be non-negative");
}

double tv_l1_energy(const GrayImage& prev, const GrayImage& next, const FlowField& flow, double lambda) {
  return energy_at_scale(prev, next, flow, lambda);
}

FlowField compute_flow(const GrayImage& prev, const GrayImage& next, const TvL1Params& params, FlowTrace* trace) {
  params.validate();
  if (prev.width != next.width || prev.height != next.height) {
    throw std::invalid_argument("compute_flow: frame sizes " + std::to_string(prev.width) + "x" +
                                std::to_string(prev.height) + " and " + std::to_string(next.width) + "x" +
                                std::to_string(next.height) + " differ");
  }
  if (prev.pixels.size() != prev.width * prev.height || next.pixels.size() != next.width * next.height) {
    throw std::invalid_argument("compute_flow: pixel buffer does not match image size");
  }
  const std::size_t levels = level_count(prev.width, prev.height, params);

  std::vector<GrayImage> pyr0{scaled_image(prev)}, pyr1{scaled_image(next)};
  for (std::size_t l = 1; l < levels; ++l) {
    const std::size_t nw = scaled(pyr0.back().width, params.scale);
    const std::size_t nh = scaled(pyr0.back().height, params.scale);
    pyr0.push_back(downsample(pyr0.back(), params.scale, nw, nh));
    pyr1.push_back(downsample(pyr1.back(), params.scale, nw, nh));
  }

  FlowField flow(pyr0.back().width, pyr0.back().height);
  if (trace) trace->levels.clear();
  for (std::size_t l = levels; l-- > 0;) {
    const GrayImage& i0 = pyr0[l];
    const GrayImage& i1 = pyr1[l];
    if (flow.width != i0.width || flow.height != i0.height) {
      const double rx = static_cast<double>(i0.width) / static_cast<double>(flow.width);
      const double ry = static_cast<double>(i0.height) / static_cast<double>(flow.height);
      FlowField up(i0.width, i0.height);
      up.u = resample(flow.u, flow.width, flow.height, i0.width, i0.height);
      up.v = resample(flow.v, flow.width, flow.height, i0.width, i0.height);
      for (double& x : up.u) x *= rx;
      for (double& x : up.v) x *= ry;
      flow = std::move(up);
    }
    LevelTrace lt;
    lt.width = i0.width;
    lt.height = i0.height;
    solve_level(i0, i1, flow, params, lt);
    if (trace) trace->levels.push_back(std::move(lt));
  }
  for (std::size_t i = 0; i < flow.u.size(); ++i)
    if (!std::isfinite(flow.u[i]) || !std::isfinite(flow.v[i])) throw NonFiniteError("compute_flow: non-finite flow");
  return flow;
}

GrayImage luma(const VideoTensor& video, std::size_t t) {
  if (video.channels() != 3) throw std::invalid_argument("luma: expected an RGB video");
  const std::size_t h = video.height(), w = video.width(), plane = h * w;
  GrayImage g(w, h);
  const double* f = video.frames.raw() + t * 3 * plane;
  for (std::size_t i = 0; i < plane; ++i) g.pixels[i] = 0.299 * f[i] + 0.587 * f[plane + i] + 0.114 * f[2 * plane + i];
  return g;
}

double quantize(double flow, double bound) { return (std::clamp(flow, -bound, bound) + bound) / (2.0 * bound); }

double dequantize(double code, double bound) { return code * 2.0 * bound - bound; }

VideoTensor flow_stack(const VideoTensor& rgb, const TvL1Params& params, double bound) {
  rgb.validate();
  if (rgb.channels() != 3) throw std::invalid_argument("flow_stack: expected an RGB video");
  if (rgb.length() < 2) throw std::invalid_argument("flow_stack: need at least 2 frames");
  if (!(bound > 0.0)) throw std::invalid_argument("flow_stack: bound must be positive");
  const std::size_t pairs = rgb.length() - 1;
  const std::size_t h = rgb.height(), w = rgb.width(), plane = h * w;
  VideoTensor out;
  out.frames = Tensor({pairs, 2, h, w});
  out.source_rate_hz = rgb.source_rate_hz;
  out.rate_hz = rgb.rate_hz;
  std::vector<GrayImage> gray(rgb.length());
  for (std::size_t t = 0; t < rgb.length(); ++t) gray[t] = luma(rgb, t);
  std::exception_ptr failure;
  // Pairs are independent; each writes only its own output frame.
#pragma omp parallel for schedule(dynamic)
  for (std::size_t t = 0; t < pairs; ++t) {
    try {
      const FlowField f = compute_flow(gray[t], gray[t + 1], params);
      double* dst = out.frames.raw() + t * 2 * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        dst[i] = quantize(f.u[i], bound);
        dst[plane + i] = quantize(f.v[i], bound);
      }
    } catch (...) {
#pragma omp critical(tsn_flow_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace tsn::flow
