#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tsn/manifest.hpp"

namespace tsn {

enum class FoldScheme { loso, louo };

FoldScheme parse_fold_scheme(std::string_view name);
std::string_view fold_scheme_name(FoldScheme scheme);

struct Fold {
  std::string key;  // trial index (LOSO) or participant id (LOUO)
  std::vector<std::string> video_ids;
};

struct FoldPlan {
  FoldScheme scheme = FoldScheme::loso;
  std::vector<Fold> folds;

  /// Every video outside fold i, in manifest order.
  std::vector<std::string> train_ids(std::size_t fold, const Manifest& manifest) const;
};

/// LOSO: one fold per trial index (ascending); LOUO: one fold per
/// participant (sorted by id). Videos keep manifest order within a fold.
FoldPlan plan_folds(const Manifest& manifest, FoldScheme scheme);

/// counts[i][j]: videos of true class i predicted as class j.
struct ConfusionMatrix {
  std::array<std::array<std::int64_t, 3>, 3> counts{};

  void add(int truth, int predicted);
  std::int64_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
};

struct MetricsReport {
  double accuracy = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::array<double, 3> precision{};
  std::array<double, 3> recall{};
  std::array<double, 3> f1{};
  ConfusionMatrix confusion;
};

/// Rates with an empty row or column count as 0 (as does F1 when both
/// precision and recall are 0). Throws on an empty matrix.
MetricsReport compute_metrics(const ConfusionMatrix& cm);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over runs
};

MeanStd mean_std(std::span<const double> values);

struct VideoPrediction {
  std::string video_id;
  std::size_t fold = 0;
  int truth = 0;
  int predicted = 0;
};

struct RunResult {
  std::size_t run = 0;
  std::uint64_t seed = 0;
  std::vector<VideoPrediction> predictions;  // fold order, then manifest order
  MetricsReport metrics;
};

struct CvReport {
  FoldScheme scheme = FoldScheme::loso;
  std::vector<RunResult> runs;
  MeanStd accuracy, macro_recall, macro_f1;
  ConfusionMatrix pooled;  // summed over runs
  nlohmann::ordered_json config = nlohmann::ordered_json::object();

  nlohmann::ordered_json to_json() const;
  /// run,metric,value rows, then aggregate rows with run "mean" and "std".
  std::string metrics_csv() const;
  /// Pooled confusion matrix: header, then one row per true class.
  std::string confusion_csv() const;
};

/// Trains on `train_ids` and returns predicted labels for `test_ids`.
using FoldTrainer = std::function<std::vector<int>(std::size_t run, std::uint64_t seed, std::size_t fold,
                                                   const std::vector<std::string>& train_ids,
                                                   const std::vector<std::string>& test_ids)>;

/// Runs every (run, fold) task, `parallel` at a time, and assembles the
/// report in (run, fold) order. Metrics are pooled over folds per run.
CvReport cross_validate(const Manifest& manifest, FoldScheme scheme, std::span<const std::uint64_t> seeds,
                        const FoldTrainer& trainer, std::size_t parallel = 1);

}  // namespace tsn
