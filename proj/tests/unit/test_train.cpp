#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "tsn/checkpoint_io.hpp"
#include "tsn/experiment.hpp"
#include "tsn/ops.hpp"
#include "tsn/synth.hpp"
#include "tsn/train.hpp"

using namespace tsn;
using namespace tsn::test;

namespace {

// Frames tinted by class plus noise, so every class is trivially separable.
VideoTensor tinted_video(int label, std::size_t frames, Rng& rng, std::size_t side = 8) {
  VideoTensor v;
  v.frames = Tensor({frames, 3, side, side});
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < side * side; ++p)
        v.frames[(t * 3 + c) * side * side + p] = (static_cast<int>(c) == label ? 0.7 : 0.3) + uniform(rng, -0.1, 0.1);
  v.rate_hz = v.source_rate_hz = 10.0;
  return v;
}

struct SmallSetup {
  std::vector<VideoTensor> store;
  std::vector<LabeledVideo> videos;
  SnippetSpec snippets;
  AugmentParams augment;
  TrainConfig cfg;
  ModelSpec spec;

  explicit SmallSetup(std::size_t per_class = 1) {
    Rng rng(11);
    for (int label = 0; label < 3; ++label)
      for (std::size_t i = 0; i < per_class; ++i) store.push_back(tinted_video(label, 20, rng));
    for (std::size_t i = 0; i < store.size(); ++i)
      videos.push_back({"v" + std::to_string(i), &store[i], static_cast<int>(i / per_class)});
    snippets.modality = Modality::rgb;
    snippets.length = 4;
    augment.output_side = 8;
    cfg.segments = 2;
    cfg.kappa = 3;
    cfg.epochs = 10;
    cfg.learning_rate = 1e-2;
    cfg.seed = 5;
    CompactOptions o;
    o.widths = {3, 4, 5};
    o.dropout = 0.2;
    spec = compact_spec(true, 3, 8, 4, o);
  }

  Checkpoint init(std::uint64_t seed = 1) const {
    Rng rng(seed);
    return build_scratch(spec, rng);
  }
};

bool same_params(const Checkpoint& a, const Checkpoint& b) {
  if (a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i)
    if (!(a.params[i].value == b.params[i].value)) return false;
  return true;
}

}  // namespace

TEST_CASE("consensus examples") {
  Tape t;
  SUBCASE("mean of two snippets") {
    const Var z = t.constant(Tensor({2, 3}, {1, 0, 0, 0, 1, 0}));
    CHECK(t.value(consensus(t, z, 1)) == Tensor({1, 3}, {0.5, 0.5, 0.0}));
  }
  SUBCASE("a single snippet is its own consensus") {
    const Tensor one({1, 3}, {0.3, -1.2, 4.0});
    CHECK(t.value(consensus(t, t.constant(one), 1)) == one);
  }
  SUBCASE("permuting snippets leaves the consensus unchanged") {
    Rng rng(1);
    const Tensor z = random_tensor({5, 3}, rng);
    Tensor p({5, 3});
    const std::size_t perm[5] = {3, 0, 4, 1, 2};
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 3; ++j) p[i * 3 + j] = z[perm[i] * 3 + j];
    const Tensor a = t.value(consensus(t, t.constant(z), 1));
    const Tensor b = t.value(consensus(t, t.constant(p), 1));
    CHECK(max_abs_diff(a, b) < 1e-15);
  }
  SUBCASE("rows split into per-video blocks") {
    const Var z = t.constant(Tensor({4, 3}, {1, 1, 1, 3, 3, 3, 0, 2, 4, 0, 0, 0}));
    CHECK(t.value(consensus(t, z, 2)) == Tensor({2, 3}, {2, 2, 2, 0, 1, 2}));
    CHECK_THROWS(consensus(t, z, 3));
  }
}

TEST_CASE("each snippet receives 1/K of the consensus gradient") {
  Rng rng(2);
  for (std::size_t K : {1, 3, 7}) {
    const Tensor z = random_tensor({K, 3}, rng, -2, 2);
    const std::vector<int> label{1};
    Tape t;
    const Var zv = t.leaf(z);
    const Var c = consensus(t, zv, 1);
    t.backward(ops::softmax_cross_entropy(t, c, label));
    const Tensor g = t.grad(zv);

    // Loss applied directly at the consensus value.
    Tape d;
    const Var cv = d.leaf(t.value(c));
    d.backward(ops::softmax_cross_entropy(d, cv, label));
    const Tensor gc = d.grad(cv);
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = 0; j < 3; ++j) CHECK(g[i * 3 + j] == doctest::Approx(gc[j] / static_cast<double>(K)).epsilon(1e-14));
  }
}

TEST_CASE("train validates its input") {
  SmallSetup s;
  CHECK_THROWS(train(std::span<const LabeledVideo>{}, s.cfg, s.snippets, s.augment, s.init()));
  std::vector<LabeledVideo> one_class{s.videos[0], s.videos[0]};
  one_class[1].id = "copy";
  CHECK_THROWS(train(one_class, s.cfg, s.snippets, s.augment, s.init()));
  SnippetSpec flow = s.snippets;
  flow.modality = Modality::of;
  CHECK_THROWS(train(s.videos, s.cfg, flow, s.augment, s.init()));
  TrainConfig bad = s.cfg;
  bad.segments = 0;
  CHECK_THROWS(train(s.videos, bad, s.snippets, s.augment, s.init()));
}

TEST_CASE("training is deterministic in the seed") {
  SmallSetup s;
  const TrainResult a = train(s.videos, s.cfg, s.snippets, s.augment, s.init());
  const TrainResult b = train(s.videos, s.cfg, s.snippets, s.augment, s.init());
  CHECK(checkpoint_to_bytes(a.checkpoint) == checkpoint_to_bytes(b.checkpoint));
  for (std::size_t e = 0; e < a.log.epochs.size(); ++e) CHECK(a.log.epochs[e].loss == b.log.epochs[e].loss);
  CHECK(a.log.epochs.size() == s.cfg.epochs);
  TrainConfig other = s.cfg;
  other.seed = 6;
  CHECK_FALSE(same_params(train(s.videos, other, s.snippets, s.augment, s.init()).checkpoint, a.checkpoint));
}

TEST_CASE("frozen parameters do not move") {
  SmallSetup s;
  s.cfg.epochs = 50;  // 100 steps at batch 2 over 3 videos
  s.cfg.init = InitMode::pretrained;
  const Checkpoint before = s.init();
  const Checkpoint after = train(s.videos, s.cfg, s.snippets, s.augment, before).checkpoint;
  const auto mask = freeze_mask(s.spec);
  for (std::size_t i = 0; i < before.params.size(); ++i) {
    const std::string& name = before.params[i].name;
    if (mask.at(name))
      CHECK_FALSE(after.params[i].value == before.params[i].value);
    else
      CHECK(after.params[i].value == before.params[i].value);
  }
  // Scratch init trains everything.
  s.cfg.init = InitMode::scratch;
  const Checkpoint all = train(s.videos, s.cfg, s.snippets, s.augment, before).checkpoint;
  for (std::size_t i = 0; i < before.params.size(); ++i) CHECK_FALSE(all.params[i].value == before.params[i].value);
}

TEST_CASE("K = 1 TSN training is single-snippet training") {
  SmallSetup s;
  s.cfg.segments = 1;
  const TrainResult tsn = train(s.videos, s.cfg, s.snippets, s.augment, s.init());
  TrainConfig single = s.cfg;
  single.mode = TrainMode::single_snippet;
  single.single_snippet_factor = 1;
  const TrainResult one = train(s.videos, single, s.snippets, s.augment, s.init());
  for (std::size_t e = 0; e < tsn.log.epochs.size(); ++e) CHECK(tsn.log.epochs[e].loss == one.log.epochs[e].loss);
  CHECK(same_params(tsn.checkpoint, one.checkpoint));
  single.single_snippet_factor = 0;
  single.segments = 4;
  CHECK(single.effective_epochs() == 4 * s.cfg.epochs);
}

TEST_CASE("single-snippet mode multiplies the epoch count") {
  SmallSetup s;
  s.cfg.epochs = 2;
  s.cfg.mode = TrainMode::single_snippet;
  const TrainResult r = train(s.videos, s.cfg, s.snippets, s.augment, s.init());
  CHECK(r.log.epochs.size() == 2 * s.cfg.segments);
  CHECK(r.checkpoint.metadata["mode"] == "single-snippet");
}

TEST_CASE("predict") {
  SmallSetup s;
  const Checkpoint ck = s.init();
  SUBCASE("kappa = 1 classifies the centred snippet") {
    const VideoTensor& v = s.store[1];
    const Prediction p = predict(ck, v, 1, s.snippets);
    const std::size_t start = (20 - 4) / 2;
    Rng unused(0);
    const Tensor x = snippet_input(v, start, s.snippets, nullptr, 8);
    const Tensor z = logits(ck, batch_inputs({&x}), false, unused);
    for (std::size_t j = 0; j < 3; ++j) CHECK(p.scores[j] == z[j]);
    CHECK(p.label == argmax_low(p.scores));
  }
  SUBCASE("kappa snippets are averaged") {
    const VideoTensor& v = s.store[2];
    const Prediction p = predict(ck, v, 3, s.snippets);
    Rng unused(0);
    std::array<double, 3> mean{};
    for (std::size_t start : {0, 8, 16}) {
      const Tensor x = snippet_input(v, start, s.snippets, nullptr, 8);
      const Tensor z = logits(ck, batch_inputs({&x}), false, unused);
      for (std::size_t j = 0; j < 3; ++j) mean[j] += z[j] / 3.0;
    }
    for (std::size_t j = 0; j < 3; ++j) CHECK(p.scores[j] == doctest::Approx(mean[j]).epsilon(1e-12));
  }
  SUBCASE("a video shorter than the snippet is padded") {
    Rng rng(3);
    const VideoTensor v = tinted_video(0, 2, rng);
    const Prediction p = predict(ck, v, 5, s.snippets);
    VideoTensor padded = v;
    padded.frames = extract_window(v.frames, 0, 4);
    const Prediction q = predict(ck, padded, 1, s.snippets);
    for (std::size_t j = 0; j < 3; ++j) CHECK(p.scores[j] == doctest::Approx(q.scores[j]).epsilon(1e-12));
  }
  SUBCASE("ties go to the lower class") {
    const std::array<double, 3> tie{0.5, 2.0, 2.0};
    CHECK(argmax_low(tie) == 1);
    const std::array<double, 3> flat{1.0, 1.0, 1.0};
    CHECK(argmax_low(flat) == 0);
  }
}

TEST_CASE("three synthetic videos, one per class, are fitted") {
  SynthSpec synth;
  synth.seed = 7;
  Manifest m;
  std::map<std::string, VideoTensor> rgb;
  std::vector<std::string> ids;
  bool have[3] = {false, false, false};
  for (SynthVideo& v : synth_videos(synth)) {
    if (have[v.record.label]) continue;
    have[v.record.label] = true;
    ids.push_back(v.record.video_id);
    m.records.push_back(v.record);
    VideoTensor t;
    t.frames = std::move(v.frames);
    t.rate_hz = t.source_rate_hz = synth.native_rate_hz;
    rgb[v.record.video_id] = std::move(t);
  }
  REQUIRE(ids.size() == 3);
  const ExperimentConfig cfg = resolve_config(std::nullopt, {{"modality", "rgb"},
                                                             {"snippet.length", "8"},
                                                             {"augment.input_side", "16"},
                                                             {"augment.scales", "[1]"},
                                                             {"augment.flip_probability", "0"},
                                                             {"model.widths", "[8,16,32]"},
                                                             {"model.dropout", "0"},
                                                             {"model.freeze_boundary", "conv1"},
                                                             {"pretrain.epochs", "60"},
                                                             {"pretrain.lr", "3e-3"},
                                                             {"train.k", "2"},
                                                             {"train.epochs", "300"},
                                                             {"train.lr", "3e-3"}});
  Experiment ex(cfg, m, rgb);
  const TrainResult r = ex.train_on(ids, 1);
  REQUIRE(r.log.epochs.size() == 300);
  CHECK(r.log.epochs.back().loss < 0.05);
  CHECK(r.log.epochs.back().train_accuracy == 1.0);
  for (const std::string& id : ids) CHECK(ex.predict(r.checkpoint, id).label == m.find(id).label);
}
