#include <doctest.h>

#include <algorithm>

#include "test_util.hpp"
#include "tsn/eval.hpp"

using namespace tsn;
using namespace tsn::test;

namespace {

Manifest grid_manifest(std::size_t participants, std::size_t trials) {
  Manifest m;
  for (std::size_t p = 0; p < participants; ++p)
    for (std::size_t t = 1; t <= trials; ++t) {
      VideoRecord r;
      r.participant_id = "P" + std::to_string(p);
      r.trial_index = static_cast<int>(t);
      r.video_id = r.participant_id + "_T" + std::to_string(t);
      r.task = "synthetic";
      r.label = static_cast<int>(p % 3);
      m.records.push_back(r);
    }
  return m;
}

ConfusionMatrix matrix(std::array<std::array<std::int64_t, 3>, 3> counts) {
  ConfusionMatrix cm;
  cm.counts = counts;
  return cm;
}

// Rates counted straight from (truth, prediction) pairs.
struct BruteForce {
  double accuracy = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
};

BruteForce brute_force(const std::vector<std::pair<int, int>>& pairs) {
  BruteForce b;
  std::size_t hits = 0;
  for (const auto& [t, p] : pairs) hits += t == p;
  b.accuracy = static_cast<double>(hits) / static_cast<double>(pairs.size());
  for (int c = 0; c < 3; ++c) {
    double tp = 0, truth = 0, pred = 0;
    for (const auto& [t, p] : pairs) {
      tp += t == c && p == c;
      truth += t == c;
      pred += p == c;
    }
    const double r = truth > 0 ? tp / truth : 0.0;
    const double pr = pred > 0 ? tp / pred : 0.0;
    b.macro_recall += r / 3.0;
    b.macro_f1 += (r + pr > 0 ? 2 * r * pr / (r + pr) : 0.0) / 3.0;
  }
  return b;
}

}  // namespace

TEST_CASE("fold plans") {
  const Manifest m = grid_manifest(8, 5);
  const FoldPlan loso = plan_folds(m, FoldScheme::loso);
  REQUIRE(loso.folds.size() == 5);
  for (std::size_t f = 0; f < 5; ++f) {
    CHECK(loso.folds[f].key == std::to_string(f + 1));
    CHECK(loso.folds[f].video_ids.size() == 8);
    for (const std::string& id : loso.folds[f].video_ids) CHECK(m.find(id).trial_index == static_cast<int>(f + 1));
    CHECK(loso.train_ids(f, m).size() == 32);
  }
  const FoldPlan louo = plan_folds(m, FoldScheme::louo);
  REQUIRE(louo.folds.size() == 8);
  for (const Fold& f : louo.folds) {
    CHECK(f.video_ids.size() == 5);
    for (const std::string& id : f.video_ids) CHECK(m.find(id).participant_id == f.key);
  }
  for (const FoldPlan* plan : {&loso, &louo}) {
    std::vector<std::string> all;
    for (const Fold& f : plan->folds) all.insert(all.end(), f.video_ids.begin(), f.video_ids.end());
    std::sort(all.begin(), all.end());
    CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
    CHECK(all.size() == 40);
  }

  Manifest missing = m;
  missing.records.erase(std::remove_if(missing.records.begin(), missing.records.end(),
                                       [](const VideoRecord& r) { return r.participant_id == "P3" && r.trial_index == 5; }),
                        missing.records.end());
  CHECK(plan_folds(missing, FoldScheme::loso).folds[4].video_ids.size() == 7);
  CHECK_THROWS(plan_folds(Manifest{}, FoldScheme::loso));
  CHECK_THROWS(parse_fold_scheme("kfold"));
  CHECK(parse_fold_scheme("louo") == FoldScheme::louo);
}

TEST_CASE("worked confusion matrix") {
  // Recall 4/5, 3/5, 5/5; precision 4/5, 3/4, 5/6.
  // F1: 0.8, 2/3, 10/11 -> mean 0.7919191...
  const MetricsReport r = compute_metrics(matrix({{{4, 1, 0}, {1, 3, 1}, {0, 0, 5}}}));
  CHECK(r.accuracy == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(r.macro_recall == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(std::abs(r.macro_f1 - (0.8 + 2.0 / 3.0 + 10.0 / 11.0) / 3.0) < 1e-15);
  CHECK(std::abs(r.macro_f1 - 0.791919) < 1e-4);
  CHECK(r.precision[1] == 0.75);
  CHECK(r.recall[1] == 0.6);
}

TEST_CASE("degenerate matrices") {
  const MetricsReport perfect = compute_metrics(matrix({{{5, 0, 0}, {0, 5, 0}, {0, 0, 5}}}));
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.macro_recall == 1.0);
  CHECK(perfect.macro_f1 == 1.0);
  const MetricsReport zeros = compute_metrics(matrix({{{4, 0, 0}, {4, 0, 0}, {4, 0, 0}}}));
  CHECK(zeros.accuracy == doctest::Approx(1.0 / 3.0));
  CHECK(zeros.macro_recall == doctest::Approx(1.0 / 3.0));
  CHECK(zeros.precision[1] == 0.0);
  CHECK(zeros.f1[2] == 0.0);
  // Empty row for class 2.
  const MetricsReport absent = compute_metrics(matrix({{{2, 1, 0}, {0, 3, 0}, {0, 0, 0}}}));
  CHECK(absent.recall[2] == 0.0);
  CHECK(absent.macro_recall == doctest::Approx((2.0 / 3.0 + 1.0) / 3.0));
  CHECK_THROWS(compute_metrics(ConfusionMatrix{}));
}

TEST_CASE("metrics agree with brute-force counting") {
  Rng rng(1);
  for (int set = 0; set < 100; ++set) {
    const std::size_t n = 1 + uniform_index(rng, 60);
    std::vector<std::pair<int, int>> pairs;
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < n; ++i) {
      const int t = static_cast<int>(uniform_index(rng, 3)), p = static_cast<int>(uniform_index(rng, 3));
      pairs.emplace_back(t, p);
      cm.add(t, p);
    }
    const MetricsReport r = compute_metrics(cm);
    const BruteForce b = brute_force(pairs);
    CHECK(cm.total() == static_cast<std::int64_t>(n));
    CHECK(r.accuracy == b.accuracy);
    CHECK(std::abs(r.macro_recall - b.macro_recall) < 1e-15);
    CHECK(std::abs(r.macro_f1 - b.macro_f1) < 1e-15);
    CHECK(r.accuracy == doctest::Approx(static_cast<double>(cm.counts[0][0] + cm.counts[1][1] + cm.counts[2][2]) / n));

    // Relabelling classes consistently leaves the macro rates unchanged.
    const int perm[3] = {2, 0, 1};
    ConfusionMatrix q;
    for (const auto& [t, p] : pairs) q.add(perm[t], perm[p]);
    const MetricsReport rq = compute_metrics(q);
    CHECK(rq.accuracy == r.accuracy);
    CHECK(std::abs(rq.macro_recall - r.macro_recall) < 1e-15);
    CHECK(std::abs(rq.macro_f1 - r.macro_f1) < 1e-15);
  }
  ConfusionMatrix cm;
  CHECK_THROWS(cm.add(3, 0));
}

TEST_CASE("mean and population std") {
  const std::vector<double> v{0.8, 0.9, 1.0, 0.9};
  const MeanStd s = mean_std(v);
  CHECK(s.mean == doctest::Approx(0.9));
  CHECK(s.std == doctest::Approx(std::sqrt(0.005)));
  const std::vector<double> one{0.7};
  CHECK(mean_std(one).std == 0.0);
}

TEST_CASE("cross_validate with a fake trainer") {
  const Manifest m = grid_manifest(8, 5);
  const std::vector<std::uint64_t> seeds{10, 11, 12};
  // Predicts the truth except for trial 1 of participant (seed % 8).
  const FoldTrainer trainer = [&](std::size_t, std::uint64_t seed, std::size_t fold,
                                  const std::vector<std::string>& train_ids, const std::vector<std::string>& test_ids) {
    for (const std::string& id : test_ids) CHECK(std::find(train_ids.begin(), train_ids.end(), id) == train_ids.end());
    CHECK(train_ids.size() + test_ids.size() == 40);
    std::vector<int> out;
    for (const std::string& id : test_ids) {
      const VideoRecord& r = m.find(id);
      const bool miss = fold == 0 && r.participant_id == "P" + std::to_string(seed % 8);
      out.push_back(miss ? (r.label + 1) % 3 : r.label);
    }
    return out;
  };
  const CvReport serial = cross_validate(m, FoldScheme::loso, seeds, trainer, 1);
  REQUIRE(serial.runs.size() == 3);
  for (const RunResult& run : serial.runs) {
    CHECK(run.predictions.size() == 40);
    CHECK(run.metrics.confusion.total() == 40);
    CHECK(run.metrics.accuracy == doctest::Approx(39.0 / 40.0));
  }
  CHECK(serial.runs[1].seed == 11);
  CHECK(serial.accuracy.mean == doctest::Approx(39.0 / 40.0));
  CHECK(serial.accuracy.std == doctest::Approx(0.0));
  CHECK(serial.pooled.total() == 120);

  const CvReport parallel = cross_validate(m, FoldScheme::loso, seeds, trainer, 4);
  CHECK(parallel.to_json().dump() == serial.to_json().dump());
  CHECK(parallel.metrics_csv() == serial.metrics_csv());
  CHECK(serial.confusion_csv().rfind("truth", 0) == 0);

  const FoldTrainer failing = [](std::size_t, std::uint64_t, std::size_t fold, const std::vector<std::string>&,
                                 const std::vector<std::string>& test) {
    if (fold == 2) throw std::runtime_error("boom");
    return std::vector<int>(test.size(), 0);
  };
  CHECK_THROWS_WITH(cross_validate(m, FoldScheme::loso, seeds, failing, 1), doctest::Contains("fold 3"));
}
