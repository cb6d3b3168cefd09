#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tsn/manifest.hpp"
#include "tsn/rng.hpp"
#include "tsn/tensor.hpp"

namespace tsn {

/// Motion statistics of one skill class. Distances are pixels at a 32 px
/// frame and scale linearly with the frame side; durations are seconds.
struct MotionProfile {
  double segment_seconds = 1.2;      // mean duration of one waypoint move
  double jitter_px = 0.05;           // std of high-frequency positional noise
  double tremor_duty = 1.0;          // fraction of time the noise is present
  double tremor_seconds = 2.0;       // mean length of one noisy episode
  double pause_probability = 0.0;    // chance of a hold after a move
  double pause_seconds = 0.0;        // mean hold duration
  double overshoot_probability = 0.0;
  double overshoot = 0.0;            // overshoot as a fraction of the move length
};

/// Default profiles indexed by skill class (novice, intermediate, expert).
std::array<MotionProfile, 3> default_motion_profiles();

struct SynthSpec {
  std::size_t participants = 8;
  std::size_t trials = 5;
  std::vector<int> participant_labels;  // empty: max(1,P/4) experts and intermediates, rest novices
  std::size_t frame_size = 32;
  std::size_t min_frames = 180;
  std::size_t max_frames = 220;
  double native_rate_hz = 10.0;
  double drop_probability = 0.0;  // chance that a trial is missing (trial 1 is always kept)
  std::string task = "synthetic";
  std::uint64_t seed = 0;
  std::array<MotionProfile, 3> profiles = default_motion_profiles();

  void validate() const;
};

struct Trajectory {
  std::vector<double> x, y;  // tool tip position per frame, pixels
};

/// Per-participant variation layered on top of the class profile.
struct ParticipantStyle {
  double speed = 1.0;   // multiplies move durations
  double jitter = 1.0;  // multiplies jitter std
  double radius = 3.0;  // tool tip radius, pixels at 32 px
  std::array<double, 3> background{0.55, 0.45, 0.4};
  double shaft_angle = 0.8;  // radians; direction the instrument shaft leaves the tip
};

Trajectory generate_trajectory(const MotionProfile& profile, const ParticipantStyle& style, std::size_t frames,
                               std::size_t frame_size, double rate_hz, Rng& rng);

/// Mean over t of |third difference of position|^2 (pixels / frame^3).
double mean_squared_jerk(const Trajectory& path);

/// Renders [T,3,S,S] frames in [0,1]: textured background, instrument shaft, bright tip.
Tensor render_video(const Trajectory& path, const ParticipantStyle& style, std::size_t frame_size, Rng& rng);

struct SynthVideo {
  VideoRecord record;
  Trajectory path;
  Tensor frames;
};

std::vector<int> participant_labels(const SynthSpec& spec);

/// Generates every video in memory; deterministic in spec.seed.
std::vector<SynthVideo> synth_videos(const SynthSpec& spec);

/// Writes videos/<id>.tsnv, manifest.csv and dataset.json under out_dir.
Manifest synth_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace tsn
