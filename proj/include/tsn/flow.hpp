#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "tsn/video.hpp"

namespace tsn::flow {

/// Single-channel image, row-major, values nominally in [0,1].
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), pixels(w * h, fill) {}
  double& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  double at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
};

/// Per-pixel displacement in pixels: u horizontal (+x right), v vertical (+y down).
struct FlowField {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> u;
  std::vector<double> v;

  FlowField() = default;
  FlowField(std::size_t w, std::size_t h) : width(w), height(h), u(w * h, 0.0), v(w * h, 0.0) {}
};

struct TvL1Params {
  double lambda = 0.15;         // data attachment weight
  double theta = 0.3;           // coupling between u and the auxiliary field
  double tau = 0.125;           // dual step; stable for tau <= 1/8
  std::size_t warps = 5;        // per pyramid level
  std::size_t inner_iterations = 10;
  std::size_t levels = 0;       // 0 = as many as keep the coarsest side >= min_coarse_side
  double scale = 0.5;           // pyramid downsampling factor
  double epsilon = 0.01;        // stopping threshold on the RMS update
  std::size_t min_coarse_side = 16;

  void validate() const;
};

/// Energy after each warp of one pyramid level, plus the value on entry.
/// Energies are on the solver's 0-255 intensity scale, i.e. tv_l1_energy of
/// the level's [0,1] images with lambda * 255.
struct LevelTrace {
  std::size_t width = 0, height = 0;
  double energy_before = 0.0;
  std::vector<double> energy_after_warp;
  std::size_t rejected_warps = 0;
};

struct FlowTrace {
  std::vector<LevelTrace> levels;  // coarsest first
};

/// Coarse-to-fine TV-L1 flow from `prev` to `next`: next(x + flow(x)) ~ prev(x).
/// Intensities are scaled to 0-255 internally, the scale lambda is usually
/// quoted for.
FlowField compute_flow(const GrayImage& prev, const GrayImage& next, const TvL1Params& params,
                       FlowTrace* trace = nullptr);

/// TV(u) + TV(v) + lambda * sum |next(x + flow) - prev(x)| with forward-difference
/// isotropic TV and bilinear, edge-replicating warping. Intensities are used
/// as given.
double tv_l1_energy(const GrayImage& prev, const GrayImage& next, const FlowField& flow, double lambda);

/// Luma 0.299 R + 0.587 G + 0.114 B of frame t of an RGB video.
GrayImage luma(const VideoTensor& video, std::size_t t);

/// Maps flow to [0,1]: clamp to [-bound, bound], then (f + bound) / (2 bound).
double quantize(double flow, double bound);
double dequantize(double code, double bound);

/// T-1 quantized two-channel flow frames from a T-frame RGB video.
VideoTensor flow_stack(const VideoTensor& rgb, const TvL1Params& params, double bound = 20.0);

/// Middlebury .flo: "PIEH", i32 width, i32 height, interleaved (u,v) f32, all LE.
void write_flo(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flo(const std::filesystem::path& path);

}  // namespace tsn::flow
