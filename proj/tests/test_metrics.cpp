#include "aumask/error.hpp"
#include "aumask/metrics.hpp"

#include "support/published_metrics.hpp"

#include <doctest.h>

#include <random>

using namespace aumask;

namespace {

struct Batch {
  LabelMatrix preds, labels;
  MaskMatrix mask;
};

// Ten entries of AU1 with tp=3, fp=1, fn=1, tn=5; every other AU is masked.
Batch hand_built() {
  const int p[10] = {1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
  const int y[10] = {1, 1, 1, 0, 1, 0, 0, 0, 0, 0};
  Batch b{LabelMatrix::Zero(10, kNumAus), LabelMatrix::Constant(10, kNumAus, -1), MaskMatrix::Zero(10, kNumAus)};
  for (int i = 0; i < 10; ++i) {
    b.preds(i, 0) = p[i];
    b.labels(i, 0) = y[i];
    b.mask(i, 0) = 1;
  }
  return b;
}

}  // namespace

TEST_CASE("confusion counts") {
  SUBCASE("hand-built single AU") {
    const auto b = hand_built();
    const auto c = confusion(b.preds, b.labels, b.mask);
    CHECK(c[0] == AuConfusion{3, 1, 5, 1});
    for (std::size_t k = 1; k < c.size(); ++k) CHECK(c[k].total() == 0);
  }
  SUBCASE("perfect predictions") {
    std::mt19937_64 rng(1);
    LabelMatrix labels(20, kNumAus);
    for (Eigen::Index i = 0; i < labels.size(); ++i) labels.data()[i] = static_cast<int>(rng() % 2);
    const auto c = confusion(labels, labels, build_mask_matrix(labels));
    for (const auto& x : c) {
      CHECK(x.fp == 0);
      CHECK(x.fn == 0);
      CHECK(x.total() == 20);
    }
  }
  SUBCASE("fully masked") {
    const LabelMatrix labels = LabelMatrix::Constant(4, kNumAus, -1);
    const auto c = confusion(LabelMatrix::Ones(4, kNumAus), labels, build_mask_matrix(labels));
    for (const auto& x : c) CHECK(x.total() == 0);
  }
  SUBCASE("errors") {
    auto b = hand_built();
    b.preds(2, 3) = 2;
    CHECK_THROWS_AS(confusion(b.preds, b.labels, b.mask), ValidationError);
    b = hand_built();
    b.mask(0, 5) = 1;
    CHECK_THROWS_AS(confusion(b.preds, b.labels, b.mask), ValidationError);
  }
}

TEST_CASE("counts partition the unmasked entries") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng() % 30);
    LabelMatrix labels(n, kNumAus), preds(n, kNumAus);
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
      labels.data()[i] = static_cast<int>(rng() % 3) - 1;
      preds.data()[i] = static_cast<int>(rng() % 2);
    }
    const auto mask = build_mask_matrix(labels);
    const auto c = confusion(preds, labels, mask);
    for (Eigen::Index k = 0; k < kNumAus; ++k) CHECK(c[static_cast<std::size_t>(k)].total() == mask.col(k).sum());
    const auto report = MetricsReport::from_counts(c);
    for (const auto& m : report.per_au) {
      if (!m) continue;
      CHECK(m->f1 >= 0.0);
      CHECK(m->f1 <= 1.0);
      CHECK(m->accuracy >= 0.0);
      CHECK(m->accuracy <= 1.0);
    }
  }
}

TEST_CASE("f1 and accuracy") {
  const auto m = f1_accuracy({3, 1, 5, 1});
  CHECK(m.f1 == doctest::Approx(0.75));
  CHECK(m.accuracy == doctest::Approx(0.8));
  const auto perfect = f1_accuracy({4, 0, 6, 0});
  CHECK(perfect.f1 == 1.0);
  CHECK(perfect.accuracy == 1.0);
  const auto none = f1_accuracy({0, 0, 10, 0});
  CHECK(none.f1 == 0.0);
  CHECK(none.accuracy == 1.0);
  CHECK_THROWS_WITH_AS(f1_accuracy({}), doctest::Contains("no data"), ValidationError);
}

TEST_CASE("means of the published table") {
  const auto report = fixtures::published_report();
  const auto [f1, acc] = mean_metrics(report);
  CHECK(f1 == doctest::Approx(10.27 / 18.0).epsilon(1e-12));
  CHECK(acc == doctest::Approx(15.93 / 18.0).epsilon(1e-12));
  CHECK(round_to(f1, 2) == 0.57);
  CHECK(round_to(acc, 2) == 0.89);

  MetricsReport ones;
  for (auto& m : ones.per_au) m = AuMetrics{1.0, 1.0};
  CHECK(mean_metrics(ones).first == 1.0);

  auto missing = report;
  missing.per_au[4].reset();
  CHECK_THROWS_WITH_AS(mean_metrics(missing), doctest::Contains("AU7"), ValidationError);
}

TEST_CASE("inclusion filter") {
  const auto report = fixtures::published_report();
  CHECK(inclusion_filter(report) == std::set<int>{1, 2, 6, 7, 10, 12, 17, 23, 25, 26, 43});
  CHECK(inclusion_filter(report, 0.0, 0.0).size() == 18);
  CHECK(inclusion_filter(report, 1.01, 0.0).empty());
  // Monotone in both thresholds.
  for (double f = 0.0; f <= 1.0; f += 0.05) {
    for (double a = 0.0; a <= 1.0; a += 0.05) {
      const auto base = inclusion_filter(report, f, a);
      for (const int au : inclusion_filter(report, f + 0.05, a)) CHECK(base.contains(au));
      for (const int au : inclusion_filter(report, f, a + 0.05)) CHECK(base.contains(au));
    }
  }
}

TEST_CASE("threshold predictions") {
  Eigen::Matrix<double, 1, kNumAus> p = Eigen::Matrix<double, 1, kNumAus>::Constant(0.2);
  p(3) = 0.5;
  p(4) = 0.9;
  const auto preds = threshold_predictions(p);
  CHECK(preds.sum() == 2);
  CHECK(preds(0, 3) == 1);
}

TEST_CASE("report file round trip") {
  auto report = fixtures::published_report();
  report.per_au[2].reset();
  const auto text = format_metrics_report(report);
  CHECK(text.find("4,,\n") != std::string::npos);
  CHECK(text.find("\nmean,") != std::string::npos);
  const auto back = parse_metrics_report(text, "m.csv");
  for (std::size_t k = 0; k < report.per_au.size(); ++k) {
    REQUIRE(back.per_au[k].has_value() == report.per_au[k].has_value());
    if (back.per_au[k]) {
      CHECK(back.per_au[k]->f1 == report.per_au[k]->f1);
      CHECK(back.per_au[k]->accuracy == report.per_au[k]->accuracy);
    }
  }
  CHECK_THROWS_AS(parse_metrics_report("au,f1,accuracy\n5,0.5,0.5\n"), ValidationError);
  CHECK_THROWS_AS(parse_metrics_report("au,f1,accuracy\n1,1.5,0.5\n"), ValidationError);
}
