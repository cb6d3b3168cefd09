#include "tsn/pretrain.hpp"

#include <cmath>
#include <stdexcept>

#include "tsn/adam.hpp"
#include "tsn/augment.hpp"
#include "tsn/ops.hpp"
#include "tsn/synth.hpp"
#include "tsn/train.hpp"

namespace tsn {

namespace {

ParticipantStyle random_style(Rng& rng) {
  ParticipantStyle s;
  s.radius = uniform(rng, 2.6, 3.4);
  s.background = {uniform(rng, 0.45, 0.65), uniform(rng, 0.35, 0.5), uniform(rng, 0.3, 0.45)};
  s.shaft_angle = uniform(rng, 0.4, 1.2);
  return s;
}

// Speed bins in pixels per frame at a 32 px frame.
constexpr double kSpeedLo[3] = {0.0, 0.6, 2.0};
constexpr double kSpeedHi[3] = {0.3, 1.6, 3.5};

}  // namespace

PretrainSet pretrain_images(std::size_t channels, const PretrainConfig& cfg) {
  if (channels != 2 && channels != 3) throw std::invalid_argument("pretrain: channels must be 2 or 3");
  const std::size_t s = cfg.frame_size;
  const double unit = static_cast<double>(s) / 32.0;
  PretrainSet set;
  for (std::size_t i = 0; i < cfg.images; ++i) {
    Rng rng(mix_seed(cfg.seed, i));
    const int label = static_cast<int>(i % 3);
    const ParticipantStyle style = random_style(rng);
    Trajectory path;
    if (channels == 2) {
      const double speed = uniform(rng, kSpeedLo[label], kSpeedHi[label]) * unit;
      const double angle = uniform(rng, 0.0, 6.283185307179586);
      const double x = uniform(rng, 8.0 * unit, static_cast<double>(s) - 8.0 * unit);
      const double y = uniform(rng, 8.0 * unit, static_cast<double>(s) - 8.0 * unit);
      path.x = {x, x + speed * std::cos(angle)};
      path.y = {y, y + speed * std::sin(angle)};
      VideoTensor pair;
      pair.frames = render_video(path, style, s, rng);
      pair.rate_hz = pair.source_rate_hz = 10.0;
      const VideoTensor f = flow::flow_stack(pair, cfg.tvl1, cfg.flow_bound);
      set.images.push_back(f.frames.reshaped({2, s, s}));
    } else {
      const double third = static_cast<double>(s) / 3.0;
      const double x = uniform(rng, label * third + 2.0 * unit, (label + 1) * third - 2.0 * unit);
      path.x = {x};
      path.y = {uniform(rng, 4.0 * unit, static_cast<double>(s) - 4.0 * unit)};
      set.images.push_back(render_video(path, style, s, rng).reshaped({3, s, s}));
    }
    set.labels.push_back(label);
  }
  return set;
}

Checkpoint pretrain_2d(const ModelSpec& spec2d, const PretrainConfig& cfg, std::vector<double>* epoch_loss) {
  if (spec2d.three_d) throw std::invalid_argument("pretrain: spec must be 2D");
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) throw std::invalid_argument("pretrain: dropout outside [0,1)");
  if (cfg.images < 3 || cfg.epochs < 1 || cfg.batch < 1 || !(cfg.learning_rate > 0.0))
    throw std::invalid_argument("pretrain: invalid configuration");
  const PretrainSet set = pretrain_images(spec2d.in_channels, cfg);
  const std::size_t side = spec2d.input_side;

  Rng rng(mix_seed(cfg.seed, 0x9e7));
  Checkpoint ckpt;
  ckpt.spec = spec2d;
  for (LayerSpec& l : ckpt.spec.layers)
    if (l.kind == LayerKind::dropout) l.dropout = cfg.dropout;
  for (auto& [name, shape] : parameter_shapes(spec2d)) ckpt.params.push_back({name, Tensor(shape)});
  for (std::size_t i = 0; i < ckpt.params.size(); i += 2) {
    Tensor& w = ckpt.params[i].value;
    const double bound = std::sqrt(6.0 / static_cast<double>(w.size() / w.dim(0)));
    for (double& v : w.data()) v = uniform(rng, -bound, bound);
  }

  std::map<std::string, bool> all;
  for (const NamedTensor& p : ckpt.params) all[p.name] = true;
  AugmentParams aug;
  aug.output_side = side;
  AdamState adam;
  adam.learning_rate = cfg.learning_rate;
  std::vector<std::size_t> order(set.images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    double total = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch);
      std::vector<Tensor> views;
      std::vector<int> labels;
      for (std::size_t i = b0; i < b1; ++i) {
        const Tensor& img = set.images[order[i]];
        const Tensor as_video = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
        const Tensor v = apply_augment(as_video, draw_augment(aug, rng), side);
        views.push_back(v.reshaped({img.dim(0), side, side}));
        labels.push_back(set.labels[order[i]]);
      }
      std::vector<const Tensor*> ptrs;
      for (const Tensor& v : views) ptrs.push_back(&v);
      Tape tape;
      const BoundModel bound = bind_model(tape, ckpt, &all);
      const Var z = forward(tape, bound, tape.constant(batch_inputs(ptrs)), true, rng);
      const Var loss = ops::softmax_cross_entropy(tape, z, labels);
      tape.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(ckpt.params.size());
      std::vector<Tensor*> params;
      std::vector<const Tensor*> gp;
      for (NamedTensor& p : ckpt.params) {
        params.push_back(&p.value);
        grads.push_back(tape.grad(bound.vars.at(p.name)));
        gp.push_back(&grads.back());
      }
      adam_step(params, gp, adam);
      total += tape.value(loss)[0] * static_cast<double>(labels.size());
    }
    if (epoch_loss) epoch_loss->push_back(total / static_cast<double>(order.size()));
  }
  ckpt.spec = spec2d;
  ckpt.metadata["init"] = "pretrained-2d";
  ckpt.metadata["pretrain_seed"] = cfg.seed;
  ckpt.metadata["pretrain_epochs"] = cfg.epochs;
  return ckpt;
}

}  // namespace tsn
