#include "tsn/experiment.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "tsn/checkpoint_io.hpp"

namespace tsn {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

const char* const kPositionNames[] = {"center", "top_left", "top_right", "bottom_left", "bottom_right"};

std::string position_name(CropPosition p) { return kPositionNames[static_cast<int>(p)]; }

CropPosition parse_position(const std::string& name, const std::string& path) {
  for (int i = 0; i < 5; ++i)
    if (name == kPositionNames[i]) return static_cast<CropPosition>(i);
  throw std::invalid_argument(path + ": unknown crop position '" + name + "'");
}

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& path, const std::string& what) : std::invalid_argument(path + ": " + what) {}
};

// Typed field access that names the offending path.
template <typename T>
T field(const json& root, const std::string& path) {
  const json* node = &root;
  std::size_t pos = 0;
  while (pos <= path.size()) {
    const std::size_t dot = std::min(path.find('.', pos), path.size());
    node = &node->at(path.substr(pos, dot - pos));
    pos = dot + 1;
  }
  try {
    return node->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path, "has the wrong type (" + std::string(node->type_name()) + ")");
  }
}

template <typename T>
void require(bool ok, const std::string& path, const T& message) {
  if (!ok) throw ConfigError(path, message);
}

void check_known(const ordered_json& defaults, const json& given, const std::string& prefix) {
  if (!given.is_object()) throw ConfigError(prefix.empty() ? "config" : prefix, "expected an object");
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!defaults.contains(it.key())) throw ConfigError(path, "unknown field");
    const ordered_json& d = defaults.at(it.key());
    if (d.is_object()) check_known(d, it.value(), path);
  }
}

}  // namespace

ordered_json ExperimentConfig::to_json() const {
  ordered_json positions = ordered_json::array();
  for (CropPosition p : augment.positions) positions.push_back(position_name(p));
  return {
      {"manifest", manifest.string()},
      {"out", out.string()},
      {"modality", modality_name(snippets.modality)},
      {"native_rate_hz", native_rate_hz},
      {"snippet",
       {{"length", snippets.length},
        {"rate_hz", snippets.rate_hz},
        {"stack_depth", snippets.stack_depth},
        {"stack_rate_hz", snippets.stack_rate_hz}}},
      {"augment",
       {{"scales", augment.scales},
        {"positions", positions},
        {"flip_probability", augment.flip_probability},
        {"input_side", augment.output_side}}},
      {"flow",
       {{"lambda", tvl1.lambda},
        {"theta", tvl1.theta},
        {"tau", tvl1.tau},
        {"warps", tvl1.warps},
        {"inner_iterations", tvl1.inner_iterations},
        {"levels", tvl1.levels},
        {"scale", tvl1.scale},
        {"epsilon", tvl1.epsilon},
        {"min_coarse_side", tvl1.min_coarse_side},
        {"bound", flow_bound}}},
      {"model",
       {{"widths", model.widths},
        {"temporal", model.temporal},
        {"dropout", model.dropout},
        {"freeze_boundary", model.freeze_boundary},
        {"temporal_padding", model.temporal_same_padding ? "same" : "valid"}}},
      {"train",
       {{"k", train.segments},
        {"kappa", train.kappa},
        {"epochs", train.epochs},
        {"batch", train.batch_videos},
        {"lr", train.learning_rate},
        {"seed", train.seed},
        {"mode", train_mode_name(train.mode)},
        {"init", init_mode_name(train.init)},
        {"single_snippet_factor", train.single_snippet_factor}}},
      {"pretrain",
       {{"images", pretrain.images},
        {"epochs", pretrain.epochs},
        {"batch", pretrain.batch},
        {"lr", pretrain.learning_rate},
        {"dropout", pretrain.dropout},
        {"seed", pretrain.seed}}},
      {"cv", {{"scheme", fold_scheme_name(scheme)}, {"runs", runs}, {"parallel", parallel}}},
  };
}

ExperimentConfig ExperimentConfig::from_json(const json& given) {
  const ordered_json defaults = ExperimentConfig{}.to_json();
  check_known(defaults, given, "");
  json j = defaults;
  j.merge_patch(given);

  ExperimentConfig c;
  c.manifest = field<std::string>(j, "manifest");
  c.out = field<std::string>(j, "out");
  try {
    c.snippets.modality = parse_modality(field<std::string>(j, "modality"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("modality", e.what());
  }
  c.native_rate_hz = field<double>(j, "native_rate_hz");
  require(c.native_rate_hz >= 0.0, "native_rate_hz", "must be non-negative");

  c.snippets.length = field<std::size_t>(j, "snippet.length");
  require(c.snippets.length >= 1, "snippet.length", "must be at least 1");
  c.snippets.rate_hz = field<double>(j, "snippet.rate_hz");
  require(c.snippets.rate_hz > 0.0, "snippet.rate_hz", "must be positive");
  c.snippets.stack_depth = field<std::size_t>(j, "snippet.stack_depth");
  require(c.snippets.stack_depth >= 1, "snippet.stack_depth", "must be at least 1");
  c.snippets.stack_rate_hz = field<double>(j, "snippet.stack_rate_hz");
  require(c.snippets.stack_rate_hz > 0.0 && c.snippets.stack_rate_hz <= c.snippets.rate_hz * 2.0,
          "snippet.stack_rate_hz", "must be positive and not exceed the extraction rate");

  c.augment.scales = field<std::vector<double>>(j, "augment.scales");
  require(!c.augment.scales.empty(), "augment.scales", "must not be empty");
  for (double s : c.augment.scales) require(s > 0.0 && s <= 1.0, "augment.scales", "values must lie in (0,1]");
  c.augment.positions.clear();
  for (const std::string& p : field<std::vector<std::string>>(j, "augment.positions"))
    c.augment.positions.push_back(parse_position(p, "augment.positions"));
  require(!c.augment.positions.empty(), "augment.positions", "must not be empty");
  c.augment.flip_probability = field<double>(j, "augment.flip_probability");
  require(c.augment.flip_probability >= 0.0 && c.augment.flip_probability <= 1.0, "augment.flip_probability",
          "must lie in [0,1]");
  c.augment.output_side = field<std::size_t>(j, "augment.input_side");
  require(c.augment.output_side >= 8, "augment.input_side", "must be at least 8");

  c.tvl1.lambda = field<double>(j, "flow.lambda");
  c.tvl1.theta = field<double>(j, "flow.theta");
  c.tvl1.tau = field<double>(j, "flow.tau");
  c.tvl1.warps = field<std::size_t>(j, "flow.warps");
  c.tvl1.inner_iterations = field<std::size_t>(j, "flow.inner_iterations");
  c.tvl1.levels = field<std::size_t>(j, "flow.levels");
  c.tvl1.scale = field<double>(j, "flow.scale");
  c.tvl1.epsilon = field<double>(j, "flow.epsilon");
  c.tvl1.min_coarse_side = field<std::size_t>(j, "flow.min_coarse_side");
  try {
    c.tvl1.validate();
  } catch (const std::exception& e) {
    throw ConfigError("flow", e.what());
  }
  c.flow_bound = field<double>(j, "flow.bound");
  require(c.flow_bound > 0.0, "flow.bound", "must be positive");

  c.model.widths = field<std::vector<std::size_t>>(j, "model.widths");
  require(c.model.widths.size() == 3, "model.widths", "must list three widths");
  for (std::size_t w : c.model.widths) require(w >= 1, "model.widths", "widths must be positive");
  c.model.temporal = field<std::size_t>(j, "model.temporal");
  require(c.model.temporal >= 1, "model.temporal", "must be at least 1");
  c.model.dropout = field<double>(j, "model.dropout");
  require(c.model.dropout >= 0.0 && c.model.dropout < 1.0, "model.dropout", "must lie in [0,1)");
  c.model.freeze_boundary = field<std::string>(j, "model.freeze_boundary");
  const std::string tpad = field<std::string>(j, "model.temporal_padding");
  require(tpad == "same" || tpad == "valid", "model.temporal_padding", "must be same or valid");
  c.model.temporal_same_padding = tpad == "same";

  c.train.segments = field<std::size_t>(j, "train.k");
  require(c.train.segments >= 1, "train.k", "must be at least 1");
  c.train.kappa = field<std::size_t>(j, "train.kappa");
  require(c.train.kappa >= 1, "train.kappa", "must be at least 1");
  c.train.epochs = field<std::size_t>(j, "train.epochs");
  require(c.train.epochs >= 1, "train.epochs", "must be at least 1");
  c.train.batch_videos = field<std::size_t>(j, "train.batch");
  require(c.train.batch_videos >= 1, "train.batch", "must be at least 1");
  c.train.learning_rate = field<double>(j, "train.lr");
  require(c.train.learning_rate > 0.0, "train.lr", "must be positive");
  c.train.seed = field<std::uint64_t>(j, "train.seed");
  try {
    c.train.mode = parse_train_mode(field<std::string>(j, "train.mode"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("train.mode", e.what());
  }
  try {
    c.train.init = parse_init_mode(field<std::string>(j, "train.init"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("train.init", e.what());
  }
  c.train.single_snippet_factor = field<std::size_t>(j, "train.single_snippet_factor");

  c.pretrain.images = field<std::size_t>(j, "pretrain.images");
  require(c.pretrain.images >= 3, "pretrain.images", "must be at least 3");
  c.pretrain.epochs = field<std::size_t>(j, "pretrain.epochs");
  require(c.pretrain.epochs >= 1, "pretrain.epochs", "must be at least 1");
  c.pretrain.batch = field<std::size_t>(j, "pretrain.batch");
  require(c.pretrain.batch >= 1, "pretrain.batch", "must be at least 1");
  c.pretrain.learning_rate = field<double>(j, "pretrain.lr");
  require(c.pretrain.learning_rate > 0.0, "pretrain.lr", "must be positive");
  c.pretrain.dropout = field<double>(j, "pretrain.dropout");
  require(c.pretrain.dropout >= 0.0 && c.pretrain.dropout < 1.0, "pretrain.dropout", "must lie in [0,1)");
  c.pretrain.seed = field<std::uint64_t>(j, "pretrain.seed");

  try {
    c.scheme = parse_fold_scheme(field<std::string>(j, "cv.scheme"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("cv.scheme", e.what());
  }
  c.runs = field<std::size_t>(j, "cv.runs");
  require(c.runs >= 1, "cv.runs", "must be at least 1");
  c.parallel = field<std::size_t>(j, "cv.parallel");
  require(c.parallel >= 1, "cv.parallel", "must be at least 1");

  try {
    c.model_spec();
  } catch (const std::exception& e) {
    throw ConfigError("model", e.what());
  }
  return c;
}

ModelSpec ExperimentConfig::model_spec() const {
  const bool three_d = snippets.modality != Modality::of2d;
  return compact_spec(three_d, snippets.channels(), augment.output_side, snippets.length, model);
}

std::vector<std::uint64_t> ExperimentConfig::run_seeds() const {
  std::vector<std::uint64_t> s;
  for (std::size_t r = 0; r < runs; ++r) s.push_back(train.seed + r);
  return s;
}

void apply_override(ordered_json& config, const std::string& path, const std::string& value) {
  ordered_json* node = &config;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (!node->is_object() || !node->contains(key)) throw ConfigError(path, "unknown field");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  ordered_json parsed = ordered_json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = value;
  if (node->is_string() && !parsed.is_string()) parsed = value;
  *node = parsed;
}

ExperimentConfig resolve_config(const std::optional<fs::path>& file,
                                const std::vector<std::pair<std::string, std::string>>& overrides) {
  ordered_json j = ExperimentConfig{}.to_json();
  if (file) {
    std::ifstream is(*file);
    if (!is) throw std::runtime_error(file->string() + ": cannot open config");
    ordered_json given;
    try {
      given = ordered_json::parse(is);
    } catch (const json::exception& e) {
      throw std::runtime_error(file->string() + ": invalid JSON: " + e.what());
    }
    check_known(j, given, "");
    j.merge_patch(given);
  }
  for (const auto& [path, value] : overrides) apply_override(j, path, value);
  return ExperimentConfig::from_json(j);
}

Experiment::Experiment(ExperimentConfig config, Manifest manifest)
    : config_(std::move(config)), manifest_(std::move(manifest)) {
  manifest_.validate();
  double native = config_.native_rate_hz;
  if (native == 0.0) {
    native = 30.0;
    const fs::path meta = manifest_.base_dir / "dataset.json";
    if (fs::exists(meta)) {
      std::ifstream is(meta);
      const json d = json::parse(is);
      if (d.contains("native_rate_hz")) native = d.at("native_rate_hz").get<double>();
    }
  }
  LoadOptions load;
  load.rate_hz = config_.snippets.rate_hz;
  load.native_rate_hz = native;
  std::map<std::string, VideoTensor> rgb;
  for (const VideoRecord& r : manifest_.records) {
    try {
      rgb[r.video_id] = load_video(manifest_.resolve(r), load);
    } catch (const std::exception& e) {
      throw std::runtime_error("video " + r.video_id + ": " + e.what());
    }
  }
  prepare(std::move(rgb));
}

Experiment::Experiment(ExperimentConfig config, Manifest manifest, std::map<std::string, VideoTensor> rgb)
    : config_(std::move(config)), manifest_(std::move(manifest)) {
  manifest_.validate();
  prepare(std::move(rgb));
}

void Experiment::prepare(std::map<std::string, VideoTensor> rgb) {
  config_.snippets.validate();
  for (const VideoRecord& r : manifest_.records) {
    auto it = rgb.find(r.video_id);
    if (it == rgb.end()) throw std::invalid_argument("video " + r.video_id + ": no frames supplied");
    const VideoTensor& v = it->second;
    v.validate();
    if (v.channels() != 3) throw std::invalid_argument("video " + r.video_id + ": expected RGB frames");
    if (frame_size_ == 0) frame_size_ = std::min(v.height(), v.width());
    if (std::min(v.height(), v.width()) < config_.augment.output_side)
      throw std::invalid_argument("video " + r.video_id + ": frames smaller than augment.input_side");
    inputs_[r.video_id] = prepare_modality(v, config_.snippets, config_.tvl1, config_.flow_bound);
  }
}

const VideoTensor& Experiment::input(const std::string& video_id) const {
  auto it = inputs_.find(video_id);
  if (it == inputs_.end()) throw std::invalid_argument("unknown video id '" + video_id + "'");
  return it->second;
}

Checkpoint Experiment::initial_checkpoint(std::uint64_t seed) {
  const ModelSpec spec = config_.model_spec();
  Rng rng(mix_seed(seed, 0x1417));
  if (config_.train.init == InitMode::scratch) return build_scratch(spec, rng);
  if (!pretrained_) {
    PretrainConfig p = config_.pretrain;
    p.frame_size = frame_size_;
    p.flow_bound = config_.flow_bound;
    p.tvl1 = config_.tvl1;
    ModelSpec base = spec.to_2d();
    base.in_channels = config_.snippets.modality == Modality::rgb ? 3 : 2;
    pretrained_ = pretrain_2d(base, p);
  }
  return build_pretrained(spec, *pretrained_, rng);
}

TrainResult Experiment::train_on(const std::vector<std::string>& video_ids, std::uint64_t seed,
                                 const EpochCallback& on_epoch) {
  std::vector<LabeledVideo> videos;
  std::string task;
  for (const std::string& id : video_ids) {
    const VideoRecord& r = manifest_.find(id);
    if (task.empty()) task = r.task;
    if (r.task != task) throw std::invalid_argument("training videos mix tasks '" + task + "' and '" + r.task + "'");
    videos.push_back({id, &input(id), r.label});
  }
  TrainConfig cfg = config_.train;
  cfg.seed = seed;
  return train(videos, cfg, config_.snippets, config_.augment, initial_checkpoint(seed), on_epoch);
}

Prediction Experiment::predict(const Checkpoint& ckpt, const std::string& video_id) const {
  return tsn::predict(ckpt, input(video_id), config_.train.kappa, config_.snippets);
}

std::uint64_t Experiment::fold_seed(std::uint64_t run_seed, std::size_t fold) { return mix_seed(run_seed, fold); }

CvReport Experiment::cross_validate(const std::optional<fs::path>& save_dir) {
  if (config_.train.init == InitMode::pretrained) initial_checkpoint(0);  // build the shared base up front
  const std::vector<std::uint64_t> seeds = config_.run_seeds();
  FoldTrainer trainer = [&](std::size_t run, std::uint64_t seed, std::size_t fold,
                            const std::vector<std::string>& train_ids, const std::vector<std::string>& test_ids) {
    TrainResult r = train_on(train_ids, fold_seed(seed, fold));
    if (save_dir) {
      const fs::path dir = *save_dir / ("run" + std::to_string(run));
      fs::create_directories(dir);
      save_checkpoint(dir / ("fold" + std::to_string(fold) + ".tsnc"), r.checkpoint);
      std::ofstream(dir / ("fold" + std::to_string(fold) + ".jsonl")) << r.log.to_jsonl();
    }
    std::vector<int> labels;
    for (const std::string& id : test_ids) labels.push_back(predict(r.checkpoint, id).label);
    return labels;
  };
  CvReport report = tsn::cross_validate(manifest_, config_.scheme, seeds, trainer, config_.parallel);
  report.config = config_.to_json();
  return report;
}

void write_report(const fs::path& dir, const CvReport& report) {
  fs::create_directories(dir);
  std::ofstream(dir / "report.json") << report.to_json().dump(2) << '\n';
  std::ofstream(dir / "metrics.csv") << report.metrics_csv();
  std::ofstream(dir / "confusion.csv") << report.confusion_csv();
}

}  // namespace tsn
