#include "tsn/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <omp.h>

namespace tsn {

FoldScheme parse_fold_scheme(std::string_view name) {
  if (name == "loso") return FoldScheme::loso;
  if (name == "louo") return FoldScheme::louo;
  throw std::invalid_argument("unknown scheme '" + std::string(name) + "' (expected loso or louo)");
}

std::string_view fold_scheme_name(FoldScheme scheme) { return scheme == FoldScheme::loso ? "loso" : "louo"; }

std::vector<std::string> FoldPlan::train_ids(std::size_t fold, const Manifest& manifest) const {
  const std::vector<std::string>& held = folds.at(fold).video_ids;
  std::vector<std::string> out;
  for (const VideoRecord& r : manifest.records)
    if (std::find(held.begin(), held.end(), r.video_id) == held.end()) out.push_back(r.video_id);
  return out;
}

FoldPlan plan_folds(const Manifest& manifest, FoldScheme scheme) {
  if (manifest.records.empty()) throw std::invalid_argument("plan_folds: empty manifest");
  FoldPlan plan;
  plan.scheme = scheme;
  if (scheme == FoldScheme::loso) {
    std::map<int, std::vector<std::string>> by_trial;
    for (const VideoRecord& r : manifest.records) by_trial[r.trial_index].push_back(r.video_id);
    for (auto& [trial, ids] : by_trial) plan.folds.push_back({std::to_string(trial), std::move(ids)});
  } else {
    std::map<std::string, std::vector<std::string>> by_user;
    for (const VideoRecord& r : manifest.records) by_user[r.participant_id].push_back(r.video_id);
    for (auto& [user, ids] : by_user) plan.folds.push_back({user, std::move(ids)});
  }
  return plan;
}

void ConfusionMatrix::add(int truth, int predicted) {
  if (truth < 0 || truth > 2 || predicted < 0 || predicted > 2)
    throw std::invalid_argument("confusion matrix: class index outside {0,1,2}");
  ++counts[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predicted)];
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t n = 0;
  for (const auto& row : counts)
    for (std::int64_t c : row) n += c;
  return n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) counts[i][j] += other.counts[i][j];
  return *this;
}

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total <= 0) throw std::invalid_argument("compute_metrics: empty confusion matrix");
  for (const auto& row : cm.counts)
    for (std::int64_t c : row)
      if (c < 0) throw std::invalid_argument("compute_metrics: negative count");
  MetricsReport m;
  m.confusion = cm;
  std::int64_t trace = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    std::int64_t row = 0, col = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      row += cm.counts[i][j];
      col += cm.counts[j][i];
    }
    const double tp = static_cast<double>(cm.counts[i][i]);
    trace += cm.counts[i][i];
    m.recall[i] = row > 0 ? tp / static_cast<double>(row) : 0.0;
    m.precision[i] = col > 0 ? tp / static_cast<double>(col) : 0.0;
    const double pr = m.precision[i] + m.recall[i];
    m.f1[i] = pr > 0.0 ? 2.0 * m.precision[i] * m.recall[i] / pr : 0.0;
  }
  m.accuracy = static_cast<double>(trace) / static_cast<double>(total);
  m.macro_recall = (m.recall[0] + m.recall[1] + m.recall[2]) / 3.0;
  m.macro_f1 = (m.f1[0] + m.f1[1] + m.f1[2]) / 3.0;
  return m;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean_std: no values");
  MeanStd r;
  for (double v : values) r.mean += v;
  r.mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(values.size()));
  return r;
}

namespace {

nlohmann::ordered_json matrix_json(const ConfusionMatrix& cm) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& row : cm.counts) rows.push_back({row[0], row[1], row[2]});
  return rows;
}

nlohmann::ordered_json mean_std_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}}; }

}  // namespace

nlohmann::ordered_json CvReport::to_json() const {
  nlohmann::ordered_json j;
  j["scheme"] = fold_scheme_name(scheme);
  j["config"] = config;
  j["runs"] = nlohmann::ordered_json::array();
  for (const RunResult& r : runs) {
    nlohmann::ordered_json preds = nlohmann::ordered_json::array();
    for (const VideoPrediction& p : r.predictions)
      preds.push_back({{"video_id", p.video_id}, {"fold", p.fold}, {"truth", p.truth}, {"predicted", p.predicted}});
    j["runs"].push_back({{"run", r.run},
                         {"seed", r.seed},
                         {"accuracy", r.metrics.accuracy},
                         {"macro_recall", r.metrics.macro_recall},
                         {"macro_f1", r.metrics.macro_f1},
                         {"precision", r.metrics.precision},
                         {"recall", r.metrics.recall},
                         {"f1", r.metrics.f1},
                         {"confusion", matrix_json(r.metrics.confusion)},
                         {"predictions", preds}});
  }
  j["aggregate"] = {{"runs", runs.size()},
                    {"accuracy", mean_std_json(accuracy)},
                    {"macro_recall", mean_std_json(macro_recall)},
                    {"macro_f1", mean_std_json(macro_f1)},
                    {"confusion", matrix_json(pooled)}};
  return j;
}

std::string CvReport::metrics_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "run,metric,value\n";
  for (const RunResult& r : runs) {
    os << r.run << ",accuracy," << r.metrics.accuracy << '\n';
    os << r.run << ",macro_recall," << r.metrics.macro_recall << '\n';
    os << r.run << ",macro_f1," << r.metrics.macro_f1 << '\n';
  }
  const std::pair<const char*, const MeanStd*> agg[] = {
      {"accuracy", &accuracy}, {"macro_recall", &macro_recall}, {"macro_f1", &macro_f1}};
  for (const auto& [name, m] : agg) os << "mean," << name << ',' << m->mean << '\n';
  for (const auto& [name, m] : agg) os << "std," << name << ',' << m->std << '\n';
  return os.str();
}

std::string CvReport::confusion_csv() const {
  std::ostringstream os;
  os << "truth\\predicted,novice,intermediate,expert\n";
  for (std::size_t i = 0; i < 3; ++i) {
    os << skill_name(static_cast<int>(i));
    for (std::size_t j = 0; j < 3; ++j) os << ',' << pooled.counts[i][j];
    os << '\n';
  }
  return os.str();
}

CvReport cross_validate(const Manifest& manifest, FoldScheme scheme, std::span<const std::uint64_t> seeds,
                        const FoldTrainer& trainer, std::size_t parallel) {
  if (seeds.empty()) throw std::invalid_argument("cross_validate: need at least one run");
  if (parallel < 1) throw std::invalid_argument("cross_validate: parallel must be at least 1");
  const FoldPlan plan = plan_folds(manifest, scheme);
  const std::size_t folds = plan.folds.size();
  const std::size_t tasks = seeds.size() * folds;

  std::vector<std::vector<int>> predicted(tasks);
  std::vector<std::exception_ptr> errors(tasks);
  auto run_task = [&](std::size_t task) {
    const std::size_t run = task / folds, fold = task % folds;
    try {
      const std::vector<std::string>& test = plan.folds[fold].video_ids;
      predicted[task] = trainer(run, seeds[run], fold, plan.train_ids(fold, manifest), test);
      if (predicted[task].size() != test.size()) throw std::runtime_error("trainer returned the wrong number of labels");
    } catch (const std::exception& e) {
      errors[task] = std::make_exception_ptr(std::runtime_error("run " + std::to_string(run) + ", fold " +
                                                                plan.folds[fold].key + ": " + e.what()));
    }
  };

  if (parallel == 1) {
    for (std::size_t t = 0; t < tasks; ++t) run_task(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(parallel, tasks); ++w)
      pool.emplace_back([&] {
        omp_set_num_threads(1);
        for (std::size_t t = next++; t < tasks; t = next++) run_task(t);
      });
    for (std::thread& th : pool) th.join();
  }
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);

  CvReport report;
  report.scheme = scheme;
  std::vector<double> acc, rec, f1;
  for (std::size_t run = 0; run < seeds.size(); ++run) {
    RunResult r;
    r.run = run;
    r.seed = seeds[run];
    ConfusionMatrix cm;
    for (std::size_t fold = 0; fold < folds; ++fold) {
      const std::vector<std::string>& ids = plan.folds[fold].video_ids;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const int truth = manifest.find(ids[i]).label;
        const int pred = predicted[run * folds + fold][i];
        cm.add(truth, pred);
        r.predictions.push_back({ids[i], fold, truth, pred});
      }
    }
    r.metrics = compute_metrics(cm);
    report.pooled += cm;
    acc.push_back(r.metrics.accuracy);
    rec.push_back(r.metrics.macro_recall);
    f1.push_back(r.metrics.macro_f1);
    report.runs.push_back(std::move(r));
  }
  report.accuracy = mean_std(acc);
  report.macro_recall = mean_std(rec);
  report.macro_f1 = mean_std(f1);
  return report;
}

}  // namespace tsn
