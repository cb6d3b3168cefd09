#include "tsn/train.hpp"

#include <chrono>
#include <set>
#include <sstream>
#include <stdexcept>

#include "tsn/adam.hpp"
#include "tsn/ops.hpp"

namespace tsn {

TrainMode parse_train_mode(std::string_view name) {
  if (name == "tsn") return TrainMode::tsn;
  if (name == "single-snippet") return TrainMode::single_snippet;
  throw std::invalid_argument("unknown mode '" + std::string(name) + "' (expected tsn or single-snippet)");
}

std::string_view train_mode_name(TrainMode mode) { return mode == TrainMode::tsn ? "tsn" : "single-snippet"; }

InitMode parse_init_mode(std::string_view name) {
  if (name == "pretrained") return InitMode::pretrained;
  if (name == "scratch") return InitMode::scratch;
  throw std::invalid_argument("unknown init '" + std::string(name) + "' (expected pretrained or scratch)");
}

std::string_view init_mode_name(InitMode mode) { return mode == InitMode::pretrained ? "pretrained" : "scratch"; }

void TrainConfig::validate() const {
  if (segments < 1) throw std::invalid_argument("train: K must be at least 1");
  if (kappa < 1) throw std::invalid_argument("train: kappa must be at least 1");
  if (epochs < 1) throw std::invalid_argument("train: epochs must be positive");
  if (batch_videos < 1) throw std::invalid_argument("train: batch size must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
}

std::size_t TrainConfig::effective_epochs() const {
  if (mode == TrainMode::tsn) return epochs;
  return epochs * (single_snippet_factor ? single_snippet_factor : segments);
}

std::string TrainLog::to_jsonl() const {
  std::ostringstream os;
  for (const EpochLog& e : epochs) {
    nlohmann::ordered_json j = {
        {"epoch", e.epoch}, {"loss", e.loss}, {"train_accuracy", e.train_accuracy}, {"seconds", e.seconds}};
    os << j.dump() << '\n';
  }
  return os.str();
}

Var consensus(Tape& tape, Var snippet_logits, std::size_t videos) {
  return ops::group_mean(tape, snippet_logits, videos);
}

int argmax_low(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return static_cast<int>(best);
}

Tensor snippet_input(const VideoTensor& video, std::size_t start, const SnippetSpec& snippets,
                     const AugmentDraw* draw, std::size_t side) {
  const Tensor window = extract_window(video.frames, start, snippets.window());
  Tensor view = draw ? apply_augment(window, *draw, side) : evaluation_view(window, side);
  if (snippets.modality == Modality::of2d) return view.reshaped({2 * snippets.stack_depth, side, side});
  return view;
}

namespace {

void check_compatible(const ModelSpec& spec, const SnippetSpec& snippets) {
  if (spec.in_channels != snippets.channels())
    throw std::invalid_argument("model expects " + std::to_string(spec.in_channels) + " input channels, modality " +
                                std::string(modality_name(snippets.modality)) + " gives " +
                                std::to_string(snippets.channels()));
  if (spec.three_d == (snippets.modality == Modality::of2d))
    throw std::invalid_argument("modality " + std::string(modality_name(snippets.modality)) +
                                (spec.three_d ? " needs a 2D model" : " needs a 3D model"));
  if (spec.three_d && spec.input_length != snippets.length)
    throw std::invalid_argument("model input length " + std::to_string(spec.input_length) +
                                " differs from snippet length " + std::to_string(snippets.length));
}

}  // namespace

TrainResult train(std::span<const LabeledVideo> videos, const TrainConfig& cfg, const SnippetSpec& snippets,
                  const AugmentParams& augment, Checkpoint initial, const EpochCallback& on_epoch) {
  cfg.validate();
  snippets.validate();
  if (videos.empty()) throw std::invalid_argument("train: empty training set");
  std::set<int> classes;
  for (const LabeledVideo& v : videos) {
    if (!v.video || v.video->length() == 0) throw std::invalid_argument("train: video " + v.id + " has no frames");
    classes.insert(v.label);
  }
  if (classes.size() < 2) throw std::invalid_argument("train: training set covers a single class");
  initial.validate();
  check_compatible(initial.spec, snippets);

  TrainResult result;
  Checkpoint& ckpt = result.checkpoint;
  ckpt = std::move(initial);
  const std::size_t side = ckpt.spec.input_side;
  AugmentParams aug = augment;
  aug.output_side = side;

  std::map<std::string, bool> mask = freeze_mask(ckpt.spec);
  if (cfg.init == InitMode::scratch)
    for (auto& [name, flag] : mask) flag = true;

  AdamState adam;
  adam.learning_rate = cfg.learning_rate;
  Rng rng(mix_seed(cfg.seed, 0x7a1));
  const std::size_t per_video = cfg.mode == TrainMode::tsn ? cfg.segments : 1;
  const std::size_t epochs = cfg.effective_epochs();
  std::vector<std::size_t> order(videos.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  result.log.seed = cfg.seed;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_videos) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_videos);
      std::vector<Tensor> inputs;
      std::vector<int> labels;
      for (std::size_t i = b0; i < b1; ++i) {
        const LabeledVideo& v = videos[order[i]];
        const AugmentDraw draw = draw_augment(aug, rng);
        for (std::size_t s : train_starts(v.video->length(), per_video, snippets.window(), rng))
          inputs.push_back(snippet_input(*v.video, s, snippets, &draw, side));
        labels.push_back(v.label);
      }
      std::vector<const Tensor*> ptrs;
      for (const Tensor& t : inputs) ptrs.push_back(&t);

      Tape tape;
      const BoundModel bound = bind_model(tape, ckpt, &mask);
      const Var z = forward(tape, bound, tape.constant(batch_inputs(ptrs)), true, rng);
      const Var c = consensus(tape, z, labels.size());
      const Var loss = ops::softmax_cross_entropy(tape, c, labels);
      tape.backward(loss);

      std::vector<Tensor> grads;
      grads.reserve(ckpt.params.size());
      std::vector<Tensor*> params;
      std::vector<const Tensor*> grad_ptrs;
      for (NamedTensor& p : ckpt.params) {
        params.push_back(&p.value);
        if (mask.at(p.name)) {
          grads.push_back(tape.grad(bound.vars.at(p.name)));
          grad_ptrs.push_back(&grads.back());
        } else {
          grad_ptrs.push_back(nullptr);
        }
      }
      adam_step(params, grad_ptrs, adam);

      loss_sum += tape.value(loss)[0] * static_cast<double>(labels.size());
      const Tensor& cv = tape.value(c);
      for (std::size_t r = 0; r < labels.size(); ++r)
        if (argmax_low(std::span<const double>(cv.raw() + 3 * r, 3)) == labels[r]) ++correct;
    }
    EpochLog e;
    e.epoch = epoch;
    e.loss = loss_sum / static_cast<double>(videos.size());
    e.train_accuracy = static_cast<double>(correct) / static_cast<double>(videos.size());
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.epochs.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  ckpt.metadata["epochs"] = epochs;
  ckpt.metadata["seed"] = cfg.seed;
  ckpt.metadata["mode"] = train_mode_name(cfg.mode);
  ckpt.metadata["init"] = init_mode_name(cfg.init);
  return result;
}

Prediction predict(const Checkpoint& ckpt, const VideoTensor& video, std::size_t kappa, const SnippetSpec& snippets) {
  check_compatible(ckpt.spec, snippets);
  const std::size_t side = ckpt.spec.input_side;
  std::vector<Tensor> inputs;
  for (std::size_t s : test_starts(video.length(), kappa, snippets.window()))
    inputs.push_back(snippet_input(video, s, snippets, nullptr, side));
  std::vector<const Tensor*> ptrs;
  for (const Tensor& t : inputs) ptrs.push_back(&t);
  Rng unused(0);
  Tape tape;
  const BoundModel bound = bind_model(tape, ckpt);
  const Var z = forward(tape, bound, tape.constant(batch_inputs(ptrs)), false, unused);
  const Tensor& c = tape.value(consensus(tape, z, 1));
  Prediction p;
  for (std::size_t j = 0; j < 3; ++j) p.scores[j] = c[j];
  p.label = argmax_low(p.scores);
  return p;
}

}  // namespace tsn
