// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Pass criterion numbers as arguments to run a subset.

#include "aumask/align.hpp"
#include "aumask/association.hpp"
#include "aumask/cli.hpp"
#include "aumask/dataops.hpp"
#include "aumask/io.hpp"
#include "aumask/labelspace.hpp"
#include "aumask/masked_loss.hpp"
#include "aumask/metrics.hpp"
#include "aumask/model.hpp"
#include "aumask/phenotypes.hpp"
#include "aumask/trainer.hpp"

#include "support/glmm_oracles.hpp"
#include "support/gradcheck.hpp"
#include "support/pipeline_fixture.hpp"
#include "support/synthetic.hpp"
#include "support/published_metrics.hpp"
#include "support/vignette.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace aumask;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

// ---------------------------------------------------------------------------
// 1, 2: masked loss

using Logits = Eigen::Matrix<double, Eigen::Dynamic, kNumAus, Eigen::RowMajor>;

struct LossBatch {
  Logits logits;
  LabelMatrix labels;
  MaskMatrix mask;
};

std::vector<LossBatch> loss_batches() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> rows(1, 64);
  std::uniform_real_distribution<double> density(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 2.0);
  std::vector<LossBatch> out;
  for (int t = 0; t < 100; ++t) {
    const Eigen::Index n = rows(rng);
    std::bernoulli_distribution keep(density(rng)), coin(0.5);
    LossBatch b{Logits(n, kNumAus), LabelMatrix(n, kNumAus), MaskMatrix(n, kNumAus)};
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < kNumAus; ++k) {
        b.logits(i, k) = normal(rng);
        const bool labeled = keep(rng);
        b.labels(i, k) = labeled ? (coin(rng) ? 1 : 0) : kDummyLabel;
        b.mask(i, k) = labeled ? 1 : 0;
      }
    }
    out.push_back(std::move(b));
  }
  return out;
}

// Textbook BCE on probabilities over the labeled entries only.
double brute_force_bce(const LossBatch& b) {
  double sum = 0.0;
  int n = 0;
  for (Eigen::Index i = 0; i < b.logits.rows(); ++i) {
    for (Eigen::Index k = 0; k < kNumAus; ++k) {
      if (b.labels(i, k) == kDummyLabel) continue;
      const double p = 1.0 / (1.0 + std::exp(-b.logits(i, k)));
      const double y = b.labels(i, k);
      sum -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / n;
}

Outcome criterion_loss_oracle() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (const auto& b : loss_batches()) {
    const double got = masked_bce(b.logits, b.labels, b.mask).value;
    const double want = brute_force_bce(b);
    const double err = want == 0.0 ? std::abs(got) : std::abs(got - want) / std::abs(want);
    worst = std::max(worst, err);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst <= 1e-12 && secs < 5.0, "max rel err " + fmt("%.2e", worst) + ", " + fmt("%.3f", secs) + " s"};
}

Outcome criterion_gradient_masking() {
  // Central differences run in long double so their rounding noise stays far
  // below the 1e-6 tolerance even for 64 x 18 batches.
  using Wide = Eigen::Matrix<long double, Eigen::Dynamic, kNumAus, Eigen::RowMajor>;
  const long double h = 1e-5L;
  double worst = 0.0;
  std::int64_t masked = 0, nonzero_masked = 0, checked = 0;
  for (const auto& b : loss_batches()) {
    const auto grad = masked_bce_grad(b.logits, b.labels, b.mask);
    Wide z = b.logits.cast<long double>();
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      for (Eigen::Index k = 0; k < kNumAus; ++k) {
        if (b.mask(i, k) == 0) {
          ++masked;
          if (grad(i, k) != 0.0) ++nonzero_masked;
          continue;
        }
        const long double z0 = z(i, k);
        z(i, k) = z0 + h;
        const long double up = masked_bce(z, b.labels, b.mask).value;
        z(i, k) = z0 - h;
        const long double down = masked_bce(z, b.labels, b.mask).value;
        z(i, k) = z0;
        const double fd = static_cast<double>((up - down) / (2 * h));
        worst = std::max(worst, std::abs(grad(i, k) - fd) / std::abs(fd));
        ++checked;
      }
    }
  }
  return {nonzero_masked == 0 && worst <= 1e-6,
          std::to_string(masked) + " masked entries, " + std::to_string(nonzero_masked) + " nonzero; " +
              std::to_string(checked) + " unmasked, max rel err " + fmt("%.2e", worst)};
}

// ---------------------------------------------------------------------------
// 3: full model gradient check

Outcome criterion_model_gradcheck() {
  const auto start = std::chrono::steady_clock::now();
  const ModelConfig config;
  ParameterSet<double> params = init_parameters<double>(config);
  std::mt19937_64 rng(303);
  testing::perturb(params, rng, 0.1);
  std::vector<Image> images{testing::random_image(config, rng), testing::random_image(config, rng)};
  const auto batch = testing::random_labels(2, 0.6, rng);
  const auto report = testing::check_gradients(images, batch.labels, batch.mask, params, config, 1e-5, 1e-6);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {report.checked == parameter_count(params) && report.max_rel_error <= 1e-4 && secs < 120.0,
          std::to_string(report.checked) + " parameters, max rel err " + fmt("%.2e", report.max_rel_error) +
              " at " + report.worst_tensor + ", " + fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------------------
// 4: data-parallel equivalence

double max_abs_diff(const ParameterSet<double>& a, const ParameterSet<double>& b) {
  double out = 0.0;
  for_each_tensor([&](const std::string&, const auto& x, const auto& y) {
    out = std::max(out, (x - y).cwiseAbs().maxCoeff());
  }, a, b);
  return out;
}

double max_rel_diff(const ParameterSet<double>& a, const ParameterSet<double>& b) {
  double num = 0.0, den = 0.0;
  for_each_tensor([&](const std::string&, const auto& x, const auto& y) {
    num = std::max(num, (x - y).cwiseAbs().maxCoeff());
    den = std::max(den, y.cwiseAbs().maxCoeff());
  }, a, b);
  return den == 0.0 ? num : num / den;
}

ModelConfig synthetic_model() {
  ModelConfig c;
  c.channels = 3;
  c.seed = 4;
  return c;
}

std::vector<fixtures::SyntheticSample> two_datasets(int subjects, int per_subject, std::uint64_t seed) {
  const DatasetCoverage a{"A", {1, 2, 4, 6, 7, 9, 10, 12, 14}};
  const DatasetCoverage b{"B", {15, 17, 20, 23, 24, 25, 26, 27, 43}};
  auto da = fixtures::make_dataset(a, subjects, per_subject, seed, {}, "a");
  const auto db = fixtures::make_dataset(b, subjects, per_subject, seed + 1, {}, "b");
  da.insert(da.end(), db.begin(), db.end());
  return da;
}

Outcome criterion_data_parallel() {
  const ModelConfig model = synthetic_model();
  const auto data = fixtures::to_training(two_datasets(16, 16, 404));
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 32;
  tc.learning_rate = 3e-3;
  tc.seed = 5;
  const auto init = init_parameters<double>(model);

  const auto base = train<double>(model, init, data, {}, tc);
  double param_diff = 0.0;
  for (const int k : {2, 4}) {
    tc.workers = k;
    param_diff = std::max(param_diff, max_abs_diff(train<double>(model, init, data, {}, tc).params, base.params));
  }

  // Along one epoch of K=1 steps, the reduced gradient of every batch for K=2
  // and K=4 against K=1.
  double grad_diff = 0.0;
  auto params = init;
  auto state = AdamState<double>::zeros(params);
  TrainConfig step_cfg = tc;
  step_cfg.workers = 1;
  const auto order = seeded_permutation(data.size(), epoch_seed(tc.seed, 0));
  int steps = 0;
  for (std::size_t s = 0; s < order.size(); s += 32) {
    std::vector<const TrainingSample<double>*> batch;
    for (std::size_t i = s; i < std::min(order.size(), s + 32); ++i) batch.push_back(&data[order[i]]);
    const auto [g1, loss1] = sharded_gradient<double>(batch, params, model, 1, false);
    for (const int k : {2, 4}) {
      const auto [gk, lossk] = sharded_gradient<double>(batch, params, model, k, true);
      grad_diff = std::max(grad_diff, max_rel_diff(gk.grad, g1.grad));
    }
    adam_step(params, g1.grad, state, step_cfg);
    ++steps;
  }
  return {param_diff <= 1e-8 && grad_diff <= 1e-10,
          "512 samples, final params max |diff| " + fmt("%.2e", param_diff) + ", " + std::to_string(steps) +
              " steps max grad rel diff " + fmt("%.2e", grad_diff)};
}

// ---------------------------------------------------------------------------
// 5, 6: published arithmetic and the masking grid

Outcome criterion_published_metrics() {
  const auto report = fixtures::published_report();
  const auto [f1, acc] = mean_metrics(report);
  const auto included = inclusion_filter(report, 0.5, 0.8);
  const std::set<int> expected = {1, 2, 6, 7, 10, 12, 17, 23, 25, 26, 43};
  const bool ok = round_to(f1, 2) == 0.57 && round_to(acc, 2) == 0.89 && included == expected;
  std::string aus;
  for (const int au : included) aus += (aus.empty() ? "" : ",") + std::to_string(au);
  return {ok, "mean F1 " + fmt("%.2f", round_to(f1, 2)) + ", mean accuracy " + fmt("%.2f", round_to(acc, 2)) +
                  ", included {" + aus + "}"};
}

Outcome criterion_mask_grid() {
  constexpr std::array<int, 8> columns = {1, 4, 6, 9, 14, 20, 27, 43};
  constexpr std::array<std::array<int, 8>, 4> labels = {{
      {-1, 1, 0, 0, -1, 0, 1, 0},
      {0, 0, 1, -1, 0, -1, -1, -1},
      {1, 0, 1, 0, -1, 1, -1, -1},
      {-1, 0, 0, -1, -1, 0, -1, 1},
  }};
  constexpr std::array<std::array<int, 8>, 4> masks = {{
      {0, 1, 1, 1, 0, 1, 1, 1},
      {1, 1, 1, 0, 1, 0, 0, 0},
      {1, 1, 1, 1, 0, 1, 0, 0},
      {0, 1, 1, 0, 0, 1, 0, 1},
  }};
  int matching = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    LabelVector row = LabelVector::Constant(kDummyLabel);
    for (std::size_t c = 0; c < columns.size(); ++c) row(require_au_index(columns[c])) = labels[r][c];
    const LabelMask m = build_mask(row);
    bool same = true;
    for (std::size_t c = 0; c < columns.size(); ++c) same = same && m(require_au_index(columns[c])) == masks[r][c];
    matching += same;
  }
  return {matching == 4, std::to_string(matching) + "/4 rows match"};
}

// ---------------------------------------------------------------------------
// 7: subject-disjoint split

Outcome criterion_split() {
  std::mt19937_64 rng(707);
  std::uniform_int_distribution<int> subjects(2, 40), per(1, 10);
  std::uniform_real_distribution<double> fraction(0.05, 0.6);
  int bad = 0;
  for (int t = 0; t < 500; ++t) {
    std::vector<SampleRecord> records;
    const int ns = subjects(rng);
    for (int s = 0; s < ns; ++s) {
      const int n = per(rng);
      for (int i = 0; i < n; ++i) {
        SampleRecord r;
        r.sample_id = "t" + std::to_string(t) + "_" + std::to_string(records.size());
        r.dataset_id = "D";
        r.subject_id = "s" + std::to_string(s);
        r.image_ref = "x.ppm";
        records.push_back(r);
      }
    }
    std::shuffle(records.begin(), records.end(), rng);
    const double f = fraction(rng);
    const std::uint64_t seed = rng();
    const auto a = subject_split(records, f, seed);
    const auto b = subject_split(records, f, seed);
    std::set<std::string> train_subjects, test_subjects;
    for (const auto& r : a.train) train_subjects.insert(r.subject_id);
    for (const auto& r : a.test) test_subjects.insert(r.subject_id);
    bool ok = a.train.size() + a.test.size() == records.size() && !a.train.empty() && !a.test.empty();
    for (const auto& s : train_subjects) ok = ok && !test_subjects.count(s);
    auto ids = [](const std::vector<SampleRecord>& v) {
      std::vector<std::string> out;
      for (const auto& r : v) out.push_back(r.sample_id);
      return out;
    };
    ok = ok && ids(a.train) == ids(b.train) && ids(a.test) == ids(b.test);
    bad += !ok;
  }
  return {bad == 0, "500 manifests, " + std::to_string(bad) + " violations"};
}

// ---------------------------------------------------------------------------
// 8: synthetic multi-dataset training

Outcome criterion_synthetic_training() {
  const auto start = std::chrono::steady_clock::now();
  const ModelConfig model = synthetic_model();
  const auto samples = two_datasets(16, 32, 808);
  // Subject-disjoint split of each dataset, so both coverages appear in test.
  std::vector<SampleRecord> a, b;
  std::map<std::string, const fixtures::SyntheticSample*> by_id;
  for (const auto& s : samples) {
    (s.record.dataset_id == "A" ? a : b).push_back(s.record);
    by_id[s.record.sample_id] = &s;
  }
  const auto sa = subject_split(a, 0.25, 9), sb = subject_split(b, 0.25, 9);
  std::vector<TrainingSample<double>> train_set, test_set;
  for (const auto* side : {&sa.train, &sb.train}) {
    for (const auto& r : *side) train_set.push_back({by_id.at(r.sample_id)->image, r.labels});
  }
  for (const auto* side : {&sa.test, &sb.test}) {
    for (const auto& r : *side) test_set.push_back({by_id.at(r.sample_id)->image, r.labels});
  }

  TrainConfig tc;
  tc.epochs = 10;
  tc.batch_size = 8;
  tc.learning_rate = 3e-3;
  tc.seed = 8;
  const auto result = train<double>(model, init_parameters<double>(model), train_set, {}, tc);

  const auto n = static_cast<Eigen::Index>(test_set.size());
  Eigen::Array<double, Eigen::Dynamic, kNumAus, Eigen::RowMajor> probs(n, kNumAus);
  LabelMatrix labels(n, kNumAus);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = test_set[static_cast<std::size_t>(i)];
    probs.row(i) = forward(s.image, result.params, model).array().unaryExpr([](double z) { return stable_sigmoid(z); });
    labels.row(i) = s.labels;
  }
  const auto report =
      MetricsReport::from_counts(confusion(threshold_predictions(probs, 0.5), labels, build_mask_matrix(labels)));
  const auto [f1, acc] = mean_metrics(report);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {f1 >= 0.9 && result.log.size() <= 10 && secs < 300.0,
          std::to_string(train_set.size()) + " train / " + std::to_string(test_set.size()) + " test, " +
              std::to_string(result.log.size()) + " epochs, mean F1 " + fmt("%.4f", f1) + ", mean accuracy " +
              fmt("%.4f", acc) + ", " + fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------------------
// 9: mixed-effects logistic regression

Outcome criterion_glmm() {
  const auto start = std::chrono::steady_clock::now();
  // (a) No random effect in the data; the sigma = 0 fit against IRLS.
  std::mt19937_64 rng(909);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<VideoAggregate> videos;
  for (int p = 0; p < 80; ++p) {
    for (int v = 0; v < 6; ++v) {
      VideoAggregate va;
      va.patient_id = "p" + std::to_string(p);
      va.video_id = va.patient_id + "_" + std::to_string(v);
      va.frames = 10;
      va.proportion(require_au_index(2)) = unit(rng);
      va.proportion(require_au_index(12)) = unit(rng);
      const double eta =
          -0.5 + 1.2 * va.proportion(require_au_index(2)) - 0.8 * va.proportion(require_au_index(12));
      va.outcome = unit(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1 : 0;
      videos.push_back(va);
    }
  }
  GlmmOptions zero;
  zero.sigma_fixed_zero = true;
  const auto fit0 = fit_glmm(videos, {2, 12}, zero);
  const double irls_diff = (fit0.beta - testing::irls_logistic(videos, {2, 12})).lpNorm<Eigen::Infinity>();

  // (b) 200 patients x 20 videos, beta1 = 1.5, sigma = 1.
  const testing::SimulationSpec spec;
  const auto fit = fit_glmm(testing::simulate_glmm(spec), {spec.au});
  const double dev = std::abs(fit.beta(1) - spec.beta1);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {fit0.converged && irls_diff <= 1e-6 && fit.converged && dev <= 3 * fit.se(1) && secs < 30.0,
          "IRLS max |diff| " + fmt("%.2e", irls_diff) + "; beta1 " + fmt("%.4f", fit.beta(1)) + " (se " +
              fmt("%.4f", fit.se(1)) + ", sigma " + fmt("%.3f", fit.sigma) + "), " + fmt("%.2f", secs) + " s"};
}

// ---------------------------------------------------------------------------
// 10: alignment

Outcome criterion_alignment() {
  std::mt19937_64 rng(1010);
  std::uniform_real_distribution<double> coord(0.0, 112.0), scale(0.5, 3.0), angle(-std::numbers::pi, std::numbers::pi),
      shift(-50.0, 50.0);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    LandmarkSet p, q;
    for (int i = 0; i < 5; ++i) p.row(i) << coord(rng), coord(rng);
    SimilarityTransform<double> truth;
    truth.scale = scale(rng);
    truth.rotation = angle(rng);
    truth.translation << shift(rng), shift(rng);
    for (int i = 0; i < 5; ++i) q.row(i) = truth.apply(p.row(i).transpose()).transpose();
    const auto est = estimate_similarity(p, q).transform;
    worst = std::max({worst, std::abs(est.scale - truth.scale),
                      std::abs(std::remainder(est.rotation - truth.rotation, 2 * std::numbers::pi)),
                      (est.translation - truth.translation).cwiseAbs().maxCoeff()});
  }
  bool identity = true;
  for (const int channels : {1, 3}) {
    Image img(37, 37, channels);
    for (auto& plane : img.planes) {
      for (Eigen::Index i = 0; i < plane.size(); ++i) plane.data()[i] = coord(rng) / 112.0;
    }
    identity = identity && warp_crop(img, SimilarityTransform<double>{}, 37) == img;
  }
  return {worst <= 1e-9 && identity,
          "1000 transforms, max param err " + fmt("%.2e", worst) + "; identity warp " +
              (identity ? "bitwise equal" : "differs")};
}

// ---------------------------------------------------------------------------
// 11: phenotype vignettes

Outcome criterion_vignettes() {
  const auto v = fixtures::ehr_vignette();
  const auto got = compute_phenotypes(v.stays, v.pain, v.therapies, v.assessments);
  int mismatches = static_cast<int>(std::max(got.size(), v.expected.size()) - std::min(got.size(), v.expected.size()));
  for (std::size_t i = 0; i < std::min(got.size(), v.expected.size()); ++i) {
    const auto& a = got[i];
    const auto& e = v.expected[i];
    mismatches += !(a.patient_id == e.patient_id && a.kind == e.kind && a.start == e.start && a.end == e.end &&
                    a.label == e.label);
  }
  // Acuity and ABD intervals must tile each stay exactly.
  int tiling_errors = 0;
  for (const auto& stay : v.stays) {
    for (const PhenotypeKind kind : {PhenotypeKind::kAcuity, PhenotypeKind::kAbd}) {
      double cursor = stay.admission;
      for (const auto& iv : got) {
        if (iv.patient_id != stay.patient_id || iv.kind != kind) continue;
        tiling_errors += iv.start != cursor || !(iv.end > iv.start);
        cursor = iv.end;
      }
      tiling_errors += cursor != stay.discharge;
    }
  }
  return {v.stays.size() == 10 && mismatches == 0 && tiling_errors == 0,
          std::to_string(v.stays.size()) + " patients, " + std::to_string(got.size()) + " intervals, " +
              std::to_string(mismatches) + " label mismatches, " + std::to_string(tiling_errors) + " tiling errors"};
}

// ---------------------------------------------------------------------------
// 12: end-to-end determinism

int run_cli(const std::vector<std::string>& args, std::string& err) {
  std::vector<const char*> argv = {"aumask"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, errs;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, errs);
  err += errs.str();
  return code;
}

Outcome criterion_end_to_end() {
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = fs::temp_directory_path() / "aumask_acceptance_pipeline";
  fs::remove_all(dir);
  const std::string config = fixtures::write_pipeline_fixture(dir).string();
  for (const char* run : {"run_a", "run_b"}) {
    for (const char* cmd : {"merge", "split", "train", "eval", "infer", "phenotype", "associate"}) {
      std::string err;
      if (run_cli({cmd, "--config", config, "--out", (dir / run).string()}, err) != 0) {
        return {false, std::string(run) + " " + cmd + " failed: " + err};
      }
    }
  }
  const std::vector<std::string> reports = {"merged.csv",     "train.csv",      "test.csv",     "checkpoint.bin",
                                            "metrics.csv",    "detections.csv", "phenotypes.csv",
                                            "presence.csv",   "association.csv"};
  std::string differing;
  for (const auto& name : reports) {
    if (io::read_file(dir / "run_a" / name) != io::read_file(dir / "run_b" / name)) differing += " " + name;
  }
  const auto rows = io::read_csv(dir / "run_a" / "association.csv").rows.size();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {differing.empty() && rows > 0,
          std::to_string(reports.size()) + " outputs compared, " +
              (differing.empty() ? std::string("all identical") : "differing:" + differing) + "; " +
              std::to_string(rows) + " association rows, " + fmt("%.1f", secs) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"masked-loss oracle equivalence", criterion_loss_oracle},
      {"exact gradient masking", criterion_gradient_masking},
      {"full-model gradient check", criterion_model_gradcheck},
      {"data-parallel equivalence", criterion_data_parallel},
      {"published metric arithmetic", criterion_published_metrics},
      {"mask construction grid", criterion_mask_grid},
      {"subject-disjoint split", criterion_split},
      {"synthetic multi-dataset training", criterion_synthetic_training},
      {"mixed-effects regression", criterion_glmm},
      {"alignment", criterion_alignment},
      {"phenotype vignettes", criterion_vignettes},
      {"end-to-end determinism", criterion_end_to_end},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
