#include "tsn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "tsn/video.hpp"

namespace tsn {

namespace {

// 10 s^3 - 15 s^4 + 6 s^5: minimum-jerk position profile on [0,1].
double min_jerk(double s) { return s * s * s * (10.0 + s * (-15.0 + 6.0 * s)); }

void append_move(Trajectory& path, double x0, double y0, double x1, double y1, std::size_t frames) {
  for (std::size_t i = 1; i <= frames; ++i) {
    const double s = min_jerk(static_cast<double>(i) / static_cast<double>(frames));
    path.x.push_back(x0 + (x1 - x0) * s);
    path.y.push_back(y0 + (y1 - y0) * s);
  }
}

ParticipantStyle draw_style(Rng& rng) {
  ParticipantStyle s;
  s.speed = uniform(rng, 0.85, 1.15);
  s.jitter = uniform(rng, 0.8, 1.2);
  s.radius = uniform(rng, 2.6, 3.4);
  s.background = {uniform(rng, 0.45, 0.65), uniform(rng, 0.35, 0.5), uniform(rng, 0.3, 0.45)};
  s.shaft_angle = uniform(rng, 0.4, 1.2);
  return s;
}

}  // namespace

std::array<MotionProfile, 3> default_motion_profiles() {
  MotionProfile novice{2.0, 4.5, 0.4, 2.5, 0.4, 1.5, 0.6, 0.45};
  MotionProfile intermediate{1.5, 1.5, 1.0, 1.5, 0.15, 0.8, 0.3, 0.2};
  MotionProfile expert{1.2, 0.05, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0};
  return {novice, intermediate, expert};
}

void SynthSpec::validate() const {
  if (participants < 3) throw std::invalid_argument("synth: need at least 3 participants");
  if (trials < 1) throw std::invalid_argument("synth: need at least 1 trial");
  if (frame_size < 16) throw std::invalid_argument("synth: frame size must be at least 16");
  if (min_frames < 2 || max_frames < min_frames) throw std::invalid_argument("synth: invalid frame count range");
  if (!(native_rate_hz > 0.0)) throw std::invalid_argument("synth: native rate must be positive");
  if (!(drop_probability >= 0.0 && drop_probability < 1.0)) throw std::invalid_argument("synth: drop probability outside [0,1)");
  for (const MotionProfile& m : profiles)
    if (!(m.tremor_duty > 0.0 && m.tremor_duty <= 1.0) || !(m.tremor_seconds > 0.0) || m.jitter_px < 0.0)
      throw std::invalid_argument("synth: tremor needs jitter >= 0, duty in (0,1] and a positive episode length");
  if (!participant_labels.empty()) {
    if (participant_labels.size() != participants) throw std::invalid_argument("synth: participant_labels size != participants");
    std::array<int, 3> seen{};
    for (int l : participant_labels) {
      if (l < 0 || l > 2) throw std::invalid_argument("synth: label outside {0,1,2}");
      ++seen[static_cast<std::size_t>(l)];
    }
    if (!seen[0] || !seen[1] || !seen[2]) throw std::invalid_argument("synth: every class needs at least one participant");
  }
}

std::vector<int> participant_labels(const SynthSpec& spec) {
  if (!spec.participant_labels.empty()) return spec.participant_labels;
  const std::size_t per = std::max<std::size_t>(1, spec.participants / 4);
  std::vector<int> labels;
  for (std::size_t i = 0; i < per; ++i) labels.push_back(kExpert);
  for (std::size_t i = 0; i < per; ++i) labels.push_back(kIntermediate);
  while (labels.size() < spec.participants) labels.push_back(kNovice);
  // Deterministic shuffle so participant ids do not encode the class.
  Rng rng(mix_seed(spec.seed, 0x1abe1));
  for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[uniform_index(rng, i)]);
  return labels;
}

Trajectory generate_trajectory(const MotionProfile& profile, const ParticipantStyle& style, std::size_t frames,
                               std::size_t frame_size, double rate_hz, Rng& rng) {
  const double unit = static_cast<double>(frame_size) / 32.0;
  const double margin = 6.0 * unit;
  const double hi = static_cast<double>(frame_size) - margin;
  auto random_point = [&](double& x, double& y) {
    x = uniform(rng, margin, hi);
    y = uniform(rng, margin, hi);
  };

  Trajectory path;
  double x = 0, y = 0;
  random_point(x, y);
  path.x.push_back(x);
  path.y.push_back(y);
  while (path.x.size() < frames) {
    double tx = 0, ty = 0;
    do {
      random_point(tx, ty);
    } while (std::hypot(tx - x, ty - y) < 8.0 * unit);
    const double seconds = profile.segment_seconds * style.speed * uniform(rng, 0.8, 1.2);
    const std::size_t move = std::max<std::size_t>(3, static_cast<std::size_t>(std::lround(seconds * rate_hz)));
    if (bernoulli(rng, profile.overshoot_probability)) {
      const double k = 1.0 + profile.overshoot * uniform(rng, 0.7, 1.3);
      const double ox = std::clamp(x + (tx - x) * k, 2.0 * unit, static_cast<double>(frame_size) - 2.0 * unit);
      const double oy = std::clamp(y + (ty - y) * k, 2.0 * unit, static_cast<double>(frame_size) - 2.0 * unit);
      append_move(path, x, y, ox, oy, move);
      append_move(path, ox, oy, tx, ty, std::max<std::size_t>(3, move / 2));
    } else {
      append_move(path, x, y, tx, ty, move);
    }
    x = tx;
    y = ty;
    if (bernoulli(rng, profile.pause_probability)) {
      const double hold = profile.pause_seconds * uniform(rng, 0.5, 1.5) * rate_hz;
      for (long i = 0; i < std::lround(hold); ++i) {
        path.x.push_back(x);
        path.y.push_back(y);
      }
    }
  }
  path.x.resize(frames);
  path.y.resize(frames);

  // Tremor: lightly correlated noise on top of the planned path, switched on
  // and off in episodes (a two-state chain with geometric dwell times).
  const double sigma = profile.jitter_px * style.jitter * unit;
  const double a = 0.2, innov = std::sqrt(1.0 - a * a);
  const bool episodic = profile.tremor_duty < 1.0;
  const double on_frames = std::max(1.0, profile.tremor_seconds * rate_hz);
  const double off_frames = on_frames * (1.0 - profile.tremor_duty) / std::max(profile.tremor_duty, 1e-9);
  bool on = !episodic || bernoulli(rng, profile.tremor_duty);
  double ex = 0.0, ey = 0.0;
  const double lo_clamp = 2.0 * unit, hi_clamp = static_cast<double>(frame_size) - 2.0 * unit;
  for (std::size_t t = 0; t < frames; ++t) {
    ex = a * ex + innov * sigma * normal(rng);
    ey = a * ey + innov * sigma * normal(rng);
    if (episodic && t > 0 && bernoulli(rng, 1.0 / (on ? on_frames : off_frames))) on = !on;
    if (!on) continue;
    path.x[t] = std::clamp(path.x[t] + ex, lo_clamp, hi_clamp);
    path.y[t] = std::clamp(path.y[t] + ey, lo_clamp, hi_clamp);
  }
  return path;
}

double mean_squared_jerk(const Trajectory& path) {
  const std::size_t n = path.x.size();
  if (n < 4) throw std::invalid_argument("mean_squared_jerk: need at least 4 samples");
  double s = 0.0;
  for (std::size_t t = 0; t + 3 < n; ++t) {
    const double jx = path.x[t + 3] - 3.0 * path.x[t + 2] + 3.0 * path.x[t + 1] - path.x[t];
    const double jy = path.y[t + 3] - 3.0 * path.y[t + 2] + 3.0 * path.y[t + 1] - path.y[t];
    s += jx * jx + jy * jy;
  }
  return s / static_cast<double>(n - 3);
}

Tensor render_video(const Trajectory& path, const ParticipantStyle& style, std::size_t frame_size, Rng& rng) {
  const std::size_t s = frame_size, plane = s * s, frames = path.x.size();
  const double unit = static_cast<double>(s) / 32.0;

  // Smooth texture: box-blurred noise, normalized to zero mean and unit peak.
  std::vector<double> noise(plane), tex(plane, 0.0);
  for (double& v : noise) v = normal(rng);
  const long r = std::max(1L, std::lround(2.0 * unit));
  for (long y = 0; y < static_cast<long>(s); ++y)
    for (long x = 0; x < static_cast<long>(s); ++x) {
      double acc = 0.0;
      long cnt = 0;
      for (long dy = -r; dy <= r; ++dy)
        for (long dx = -r; dx <= r; ++dx) {
          const long yy = std::clamp(y + dy, 0L, static_cast<long>(s) - 1);
          const long xx = std::clamp(x + dx, 0L, static_cast<long>(s) - 1);
          acc += noise[yy * s + xx];
          ++cnt;
        }
      tex[y * s + x] = acc / static_cast<double>(cnt);
    }
  double peak = 1e-12;
  for (double v : tex) peak = std::max(peak, std::abs(v));
  for (double& v : tex) v /= peak;

  const double radius = style.radius * unit;
  const double shaft_half_width = 0.9 * unit;
  const double shaft_len = 3.0 * static_cast<double>(s);
  const double dxs = std::cos(style.shaft_angle), dys = -std::sin(style.shaft_angle);
  const std::array<double, 3> shaft_rgb{0.22, 0.22, 0.25};
  const std::array<double, 3> tip_rgb{0.97, 0.96, 0.9};

  Tensor out({frames, 3, s, s});
  for (std::size_t t = 0; t < frames; ++t) {
    const double cx = path.x[t], cy = path.y[t];
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        // Shaft: segment from the tip outward along the shaft direction.
        const double along = std::clamp((px - cx) * dxs + (py - cy) * dys, 0.0, shaft_len);
        const double dist_shaft = std::hypot(px - (cx + along * dxs), py - (cy + along * dys));
        const double a_shaft = std::clamp(shaft_half_width + 0.5 - dist_shaft, 0.0, 1.0);
        const double a_tip = std::clamp(radius + 0.5 - std::hypot(px - cx, py - cy), 0.0, 1.0);
        // Specular ring inside the tip gives the tip internal texture.
        const double ring = 0.15 * std::cos(2.5 * std::hypot(px - cx, py - cy) / unit);
        for (std::size_t c = 0; c < 3; ++c) {
          double v = style.background[c] + 0.18 * tex[y * s + x];
          v = v * (1.0 - a_shaft) + shaft_rgb[c] * a_shaft;
          v = v * (1.0 - a_tip) + (tip_rgb[c] - ring) * a_tip;
          out[((t * 3 + c) * s + y) * s + x] = std::clamp(v, 0.0, 1.0);
        }
      }
  }
  return out;
}

std::vector<SynthVideo> synth_videos(const SynthSpec& spec) {
  spec.validate();
  const std::vector<int> labels = participant_labels(spec);
  std::vector<SynthVideo> out;
  for (std::size_t p = 0; p < spec.participants; ++p) {
    Rng style_rng(mix_seed(spec.seed, 1000 + p));
    const ParticipantStyle style = draw_style(style_rng);
    char pid[16];
    std::snprintf(pid, sizeof pid, "P%02zu", p + 1);
    for (std::size_t trial = 1; trial <= spec.trials; ++trial) {
      Rng rng(mix_seed(spec.seed, 100000 + p * 1000 + trial));
      if (trial > 1 && bernoulli(rng, spec.drop_probability)) continue;
      const std::size_t frames = spec.min_frames + uniform_index(rng, spec.max_frames - spec.min_frames + 1);
      SynthVideo v;
      v.record.participant_id = pid;
      v.record.trial_index = static_cast<int>(trial);
      v.record.task = spec.task;
      v.record.label = labels[p];
      v.record.video_id = spec.task + "_" + pid + "_T" + std::to_string(trial);
      v.record.path = "videos/" + v.record.video_id + ".tsnv";
      v.path = generate_trajectory(spec.profiles[static_cast<std::size_t>(labels[p])], style, frames,
                                   spec.frame_size, spec.native_rate_hz, rng);
      v.frames = render_video(v.path, style, spec.frame_size, rng);
      out.push_back(std::move(v));
    }
  }
  return out;
}

Manifest synth_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "videos", ec);
  if (ec) throw std::runtime_error(out_dir.string() + ": cannot create output directory: " + ec.message());
  Manifest m;
  m.base_dir = out_dir;
  for (SynthVideo& v : synth_videos(spec)) {
    write_raw_video(out_dir / v.record.path, v.frames);
    m.records.push_back(std::move(v.record));
  }
  m.validate();
  write_manifest(out_dir / "manifest.csv", m);
  nlohmann::ordered_json meta = {{"native_rate_hz", spec.native_rate_hz},
                                 {"frame_size", spec.frame_size},
                                 {"participants", spec.participants},
                                 {"trials", spec.trials},
                                 {"min_frames", spec.min_frames},
                                 {"max_frames", spec.max_frames},
                                 {"task", spec.task},
                                 {"seed", spec.seed}};
  std::ofstream os(out_dir / "dataset.json");
  if (!os) throw std::runtime_error((out_dir / "dataset.json").string() + ": cannot open for writing");
  os << meta.dump(2) << '\n';
  return m;
}

}  // namespace tsn
