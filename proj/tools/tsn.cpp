// Command-line driver: synth, flow, train, cv, report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tsn/checkpoint_io.hpp"
#include "tsn/experiment.hpp"
#include "tsn/flow.hpp"
#include "tsn/synth.hpp"
#include "tsn/video.hpp"

namespace fs = std::filesystem;

namespace {

// Flags shared by train and cv; each maps to a dotted config path.
struct Overrides {
  std::optional<std::string> config;
  std::vector<std::string> set;
  std::optional<std::string> manifest, out, modality, mode, init, scheme;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> parallel, size, epochs, k, kappa, runs;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--set", set, "Override a config field, e.g. --set train.lr=1e-4");
    app->add_option("--manifest", manifest, "Manifest CSV");
    app->add_option("--out", out, "Output directory");
    app->add_option("--seed", seed, "Training seed (run r uses seed + r)");
    app->add_option("--parallel", parallel, "Concurrent fold trainings");
    app->add_option("--size", size, "Network input side in pixels");
    app->add_option("--epochs", epochs, "Training epochs");
    app->add_option("--k", k, "Training segments per video");
    app->add_option("--kappa", kappa, "Test snippets per video");
    app->add_option("--runs", runs, "Evaluation runs");
    app->add_option("--modality", modality, "rgb, of or of2d");
    app->add_option("--mode", mode, "tsn or single-snippet");
    app->add_option("--init", init, "pretrained or scratch");
    app->add_option("--scheme", scheme, "loso or louo");
  }

  tsn::ExperimentConfig resolve() const {
    std::vector<std::pair<std::string, std::string>> o;
    for (const std::string& s : set) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects path=value, got '" + s + "'");
      o.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    auto str = [&](const char* path, const std::optional<std::string>& v) {
      if (v) o.emplace_back(path, nlohmann::json(*v).dump());
    };
    auto num = [&](const char* path, const auto& v) {
      if (v) o.emplace_back(path, std::to_string(*v));
    };
    str("manifest", manifest);
    str("out", out);
    str("modality", modality);
    str("train.mode", mode);
    str("train.init", init);
    str("cv.scheme", scheme);
    num("train.seed", seed);
    num("cv.parallel", parallel);
    num("augment.input_side", size);
    num("train.epochs", epochs);
    num("train.k", k);
    num("train.kappa", kappa);
    num("cv.runs", runs);
    return tsn::resolve_config(config ? std::optional<fs::path>(*config) : std::nullopt, o);
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  os << text;
}

tsn::Manifest require_manifest(const tsn::ExperimentConfig& cfg) {
  if (cfg.manifest.empty()) throw std::invalid_argument("manifest: no manifest given (use --manifest or the config)");
  return tsn::read_manifest(cfg.manifest);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal segment network skill classification"};
  app.require_subcommand(1);

  // synth
  tsn::SynthSpec synth;
  std::string synth_out = "data/synthetic";
  std::optional<std::size_t> synth_frames;
  auto* cmd_synth = app.add_subcommand("synth", "Generate a synthetic skill-video dataset");
  cmd_synth->add_option("--participants", synth.participants, "Participants")->capture_default_str();
  cmd_synth->add_option("--trials", synth.trials, "Trials per participant")->capture_default_str();
  cmd_synth->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  cmd_synth->add_option("--size", synth.frame_size, "Frame side in pixels")->capture_default_str();
  cmd_synth->add_option("--frames", synth_frames, "Frames per video (overrides the length range)");
  cmd_synth->add_option("--min-frames", synth.min_frames, "Shortest video")->capture_default_str();
  cmd_synth->add_option("--max-frames", synth.max_frames, "Longest video")->capture_default_str();
  cmd_synth->add_option("--drop", synth.drop_probability, "Chance that a trial is missing")->capture_default_str();
  cmd_synth->add_option("--labels", synth.participant_labels, "Class per participant (0 novice, 1, 2 expert)");
  cmd_synth->add_option("--out", synth_out, "Output directory")->capture_default_str();

  // flow
  std::string flow_input, flow_out = "flow";
  tsn::LoadOptions flow_load;
  tsn::flow::TvL1Params tvl1;
  double flow_bound = 20.0;
  bool flow_write_flo = true;
  auto* cmd_flow = app.add_subcommand("flow", "TV-L1 optical flow for one video");
  cmd_flow->add_option("input", flow_input, "Raw .tsnv video or directory of .ppm frames")->required();
  cmd_flow->add_option("--out", flow_out, "Output directory")->capture_default_str();
  cmd_flow->add_option("--rate", flow_load.rate_hz, "Extraction rate in Hz")->capture_default_str();
  cmd_flow->add_option("--native-rate", flow_load.native_rate_hz, "Source frame rate in Hz")->capture_default_str();
  cmd_flow->add_option("--lambda", tvl1.lambda, "Data term weight")->capture_default_str();
  cmd_flow->add_option("--theta", tvl1.theta, "Coupling weight")->capture_default_str();
  cmd_flow->add_option("--tau", tvl1.tau, "Dual step (<= 0.125)")->capture_default_str();
  cmd_flow->add_option("--warps", tvl1.warps, "Warps per pyramid level")->capture_default_str();
  cmd_flow->add_option("--bound", flow_bound, "Quantization bound in pixels")->capture_default_str();
  cmd_flow->add_flag("!--no-flo", flow_write_flo, "Skip the per-pair .flo files");

  Overrides train_o, cv_o;
  auto* cmd_train = app.add_subcommand("train", "Train one model on every manifest video");
  train_o.attach(cmd_train);
  auto* cmd_cv = app.add_subcommand("cv", "Cross-validate (LOSO or LOUO) over several runs");
  cv_o.attach(cmd_cv);

  std::string report_input;
  std::optional<std::string> report_out;
  auto* cmd_report = app.add_subcommand("report", "Summarize a cross-validation report");
  cmd_report->add_option("input", report_input, "report.json from cv")->required()->check(CLI::ExistingFile);
  cmd_report->add_option("--out", report_out, "Also write metrics.csv and confusion.csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "tsn: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*cmd_synth) {
      if (synth_frames) synth.min_frames = synth.max_frames = *synth_frames;
      const tsn::Manifest m = tsn::synth_dataset(synth, synth_out);
      std::cout << "wrote " << m.records.size() << " videos to " << synth_out << '\n';
    } else if (*cmd_flow) {
      const tsn::VideoTensor rgb = tsn::load_video(flow_input, flow_load);
      if (rgb.channels() != 3) throw std::invalid_argument(flow_input + ": expected RGB frames");
      fs::create_directories(flow_out);
      if (flow_write_flo) {
        for (std::size_t t = 0; t + 1 < rgb.length(); ++t) {
          const tsn::flow::FlowField f =
              tsn::flow::compute_flow(tsn::flow::luma(rgb, t), tsn::flow::luma(rgb, t + 1), tvl1);
          char name[32];
          std::snprintf(name, sizeof name, "flow_%05zu.flo", t);
          tsn::flow::write_flo(fs::path(flow_out) / name, f);
        }
      }
      const tsn::VideoTensor of = tsn::flow::flow_stack(rgb, tvl1, flow_bound);
      tsn::write_raw_video(fs::path(flow_out) / "flow.tsnv", of.frames);
      std::cout << "wrote " << of.length() << " flow fields to " << flow_out << '\n';
    } else if (*cmd_train) {
      const tsn::ExperimentConfig cfg = train_o.resolve();
      tsn::Experiment exp(cfg, require_manifest(cfg));
      std::vector<std::string> ids;
      for (const tsn::VideoRecord& r : exp.manifest().records) ids.push_back(r.video_id);
      fs::create_directories(cfg.out);
      std::ofstream log(cfg.out / "train.jsonl");
      const tsn::TrainResult r = exp.train_on(ids, cfg.train.seed, [&](const tsn::EpochLog& e) {
        log << nlohmann::ordered_json{{"epoch", e.epoch}, {"loss", e.loss}, {"train_accuracy", e.train_accuracy},
                                      {"seconds", e.seconds}}.dump()
            << '\n' << std::flush;
      });
      tsn::save_checkpoint(cfg.out / "model.tsnc", r.checkpoint);
      write_text(cfg.out / "config.json", cfg.to_json().dump(2) + "\n");
      std::cout << "final loss " << r.log.epochs.back().loss << ", checkpoint " << (cfg.out / "model.tsnc").string()
                << '\n';
    } else if (*cmd_cv) {
      const tsn::ExperimentConfig cfg = cv_o.resolve();
      tsn::Experiment exp(cfg, require_manifest(cfg));
      const tsn::CvReport report = exp.cross_validate(cfg.out);
      tsn::write_report(cfg.out, report);
      std::printf("%s %s: accuracy %.4f +- %.4f, macro recall %.4f +- %.4f, macro F1 %.4f +- %.4f\n",
                  std::string(tsn::fold_scheme_name(report.scheme)).c_str(),
                  std::string(tsn::modality_name(cfg.snippets.modality)).c_str(), report.accuracy.mean,
                  report.accuracy.std, report.macro_recall.mean, report.macro_recall.std, report.macro_f1.mean,
                  report.macro_f1.std);
    } else if (*cmd_report) {
      std::ifstream is(report_input);
      const nlohmann::json j = nlohmann::json::parse(is);
      const auto& agg = j.at("aggregate");
      std::printf("scheme %s, %zu runs\n", j.at("scheme").get<std::string>().c_str(),
                  agg.at("runs").get<std::size_t>());
      for (const char* m : {"accuracy", "macro_recall", "macro_f1"})
        std::printf("  %-13s %.4f +- %.4f\n", m, agg.at(m).at("mean").get<double>(), agg.at(m).at("std").get<double>());
      std::printf("  confusion (rows truth, columns predicted):\n");
      for (const auto& row : agg.at("confusion"))
        std::printf("    %6lld %6lld %6lld\n", row[0].get<long long>(), row[1].get<long long>(),
                    row[2].get<long long>());
      if (report_out) {
        tsn::CvReport r;
        r.scheme = tsn::parse_fold_scheme(j.at("scheme").get<std::string>());
        std::vector<double> acc, rec, f1;
        for (const auto& run : j.at("runs")) {
          tsn::RunResult rr;
          rr.run = run.at("run").get<std::size_t>();
          rr.seed = run.at("seed").get<std::uint64_t>();
          for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t b = 0; b < 3; ++b)
              rr.metrics.confusion.counts[a][b] = run.at("confusion")[a][b].get<std::int64_t>();
          rr.metrics = tsn::compute_metrics(rr.metrics.confusion);
          r.pooled += rr.metrics.confusion;
          acc.push_back(rr.metrics.accuracy);
          rec.push_back(rr.metrics.macro_recall);
          f1.push_back(rr.metrics.macro_f1);
          r.runs.push_back(rr);
        }
        r.accuracy = tsn::mean_std(acc);
        r.macro_recall = tsn::mean_std(rec);
        r.macro_f1 = tsn::mean_std(f1);
        fs::create_directories(*report_out);
        write_text(fs::path(*report_out) / "metrics.csv", r.metrics_csv());
        write_text(fs::path(*report_out) / "confusion.csv", r.confusion_csv());
      }
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg)
      if (c == '\n') c = ' ';
    std::cerr << "tsn: error: " << msg << '\n';
    return 1;
  }
  return 0;
}
