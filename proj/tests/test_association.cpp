#include "aumask/association.hpp"
#include "aumask/error.hpp"
#include "aumask/io.hpp"

#include "support/glmm_oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>

using namespace aumask;

namespace {

FrameDetection frame(std::string id, std::string video, std::string patient, int outcome) {
  FrameDetection f;
  f.frame_id = std::move(id);
  f.video_id = std::move(video);
  f.patient_id = std::move(patient);
  f.outcome = outcome;
  return f;
}

std::vector<PatientBlock> blocks_from(const std::vector<VideoAggregate>& videos, const std::vector<int>& aus) {
  std::map<std::string, std::vector<const VideoAggregate*>> by;
  for (const auto& v : videos) by[v.patient_id].push_back(&v);
  std::vector<PatientBlock> out;
  for (const auto& [_, vs] : by) {
    PatientBlock b{Eigen::MatrixXd(static_cast<Eigen::Index>(vs.size()), static_cast<Eigen::Index>(aus.size()) + 1),
                   Eigen::VectorXd(static_cast<Eigen::Index>(vs.size()))};
    for (std::size_t r = 0; r < vs.size(); ++r) {
      const auto i = static_cast<Eigen::Index>(r);
      b.x(i, 0) = 1.0;
      for (std::size_t j = 0; j < aus.size(); ++j) b.x(i, static_cast<Eigen::Index>(j) + 1) = vs[r]->proportion(require_au_index(aus[j]));
      b.y(i) = vs[r]->outcome;
    }
    out.push_back(std::move(b));
  }
  return out;
}

/// Two noisy predictors (AU2 informative, AU12 not) with patient intercepts.
std::vector<VideoAggregate> two_predictor_data(std::uint64_t seed, int patients, int videos, double sigma) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<VideoAggregate> out;
  for (int i = 0; i < patients; ++i) {
    const double u = sigma * normal(rng);
    for (int j = 0; j < videos; ++j) {
      VideoAggregate v;
      v.patient_id = "p" + std::to_string(i);
      v.video_id = v.patient_id + "v" + std::to_string(j);
      v.proportion(require_au_index(2)) = unit(rng);
      v.proportion(require_au_index(12)) = unit(rng);
      const double eta = -0.3 + 1.2 * v.proportion(require_au_index(2)) + u;
      v.outcome = unit(rng) < 1.0 / (1.0 + std::exp(-eta));
      out.push_back(v);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("presence_ratio") {
  LabelMatrix det = LabelMatrix::Zero(10, kNumAus);
  det.col(0).setOnes();
  det(0, 1) = det(4, 1) = det(7, 1) = 1;
  const std::vector<int> one_class(10, 0);
  const auto t = presence_ratio(det, one_class, 1);
  CHECK(t.ratio(0, 0) == 1.0);
  CHECK(t.ratio(1, 0) == doctest::Approx(0.3));
  CHECK(t.ratio(2, 0) == 0.0);

  // Weighted class ratios recover the pooled ratio.
  std::mt19937_64 rng(2);
  LabelMatrix rnd(40, kNumAus);
  std::vector<int> cls(40);
  for (Eigen::Index i = 0; i < rnd.size(); ++i) rnd.data()[i] = static_cast<int>(rng() % 2);
  for (std::size_t i = 0; i < cls.size(); ++i) cls[i] = static_cast<int>(i % 3 == 0);
  const auto split = presence_ratio(rnd, cls, 2);
  const auto pooled = presence_ratio(rnd, std::vector<int>(40, 0), 1);
  for (Eigen::Index k = 0; k < kNumAus; ++k) {
    const double w = (split.ratio(k, 0) * split.frames[0] + split.ratio(k, 1) * split.frames[1]) / 40.0;
    CHECK(w == doctest::Approx(pooled.ratio(k, 0)).epsilon(1e-14));
    CHECK(split.ratio(k, 0) >= 0.0);
    CHECK(split.ratio(k, 1) <= 1.0);
  }
  CHECK_THROWS_AS(presence_ratio(det, one_class, 2), ValidationError);
}

TEST_CASE("aggregate_by_video") {
  std::vector<FrameDetection> frames;
  auto single = frame("f0", "v0", "p0", 1);
  single.probability(0) = 0.9;
  frames.push_back(single);
  for (int i = 0; i < 10; ++i) {
    auto f = frame("g" + std::to_string(i), "v1", "p0", 0);
    f.probability(3) = i < 4 ? 0.5 : 0.49;
    frames.push_back(f);
  }
  const auto v = aggregate_by_video(frames);
  REQUIRE(v.size() == 2);
  CHECK(v[0].proportion(0) == 1.0);
  CHECK(v[1].proportion(3) == doctest::Approx(0.4));
  CHECK(v[1].frames == 10);
  const auto any = aggregate_by_video(frames, 0.5, PredictorEncoding::kAnyFrame);
  CHECK(any[1].proportion(3) == 1.0);

  frames.push_back(frame("h", "v1", "p0", 1));
  CHECK_THROWS_AS(aggregate_by_video(frames), ValidationError);
}

TEST_CASE("laplace inner mode is stationary") {
  const auto videos = two_predictor_data(5, 10, 8, 1.0);
  const auto blocks = blocks_from(videos, {2, 12});
  Eigen::VectorXd beta(3);
  beta << -0.2, 0.8, 0.1;
  for (const auto& b : blocks) {
    for (const double sigma : {0.05, 1.0, 4.0}) {
      const auto m = laplace_mode(b, beta, sigma);
      CHECK(std::abs(m.gradient) <= 1e-8);
      CHECK(m.curvature > 0.0);
    }
  }
}

TEST_CASE("glmm log-likelihood gradient matches finite differences") {
  const auto videos = two_predictor_data(6, 12, 6, 0.8);
  const auto blocks = blocks_from(videos, {2, 12});
  Eigen::VectorXd theta(4);
  theta << 0.1, 0.7, -0.4, std::log(0.9);
  Eigen::VectorXd g;
  glmm_loglik(blocks, theta.head(3), theta(3), false, &g);
  for (Eigen::Index k = 0; k < 4; ++k) {
    const double h = 1e-6;
    Eigen::VectorXd up = theta, dn = theta;
    up(k) += h;
    dn(k) -= h;
    const double fd = (glmm_loglik(blocks, up.head(3), up(3), false) - glmm_loglik(blocks, dn.head(3), dn(3), false)) / (2 * h);
    CHECK(g(k) == doctest::Approx(fd).epsilon(1e-6));
  }
  Eigen::VectorXd gz;
  glmm_loglik(blocks, theta.head(3), 0.0, true, &gz);
  CHECK(gz.size() == 3);
}

TEST_CASE("sigma fixed at zero matches IRLS") {
  const auto videos = two_predictor_data(7, 30, 10, 0.5);
  GlmmOptions opt;
  opt.sigma_fixed_zero = true;
  const auto fit = fit_glmm(videos, {12, 2}, opt);
  const auto oracle = testing::irls_logistic(videos, {2, 12});
  REQUIRE(fit.converged);
  CHECK(fit.sigma == 0.0);
  CHECK((fit.beta - oracle).lpNorm<Eigen::Infinity>() <= 1e-6);
  CHECK((fit.se.array() > 0).all());
  CHECK((fit.p_values.array() >= 0).all());
  CHECK((fit.p_values.array() <= 1).all());
}

TEST_CASE("simulation recovers the slope") {
  testing::SimulationSpec spec;
  const auto videos = testing::simulate_glmm(spec);
  const auto fit = fit_glmm(videos, {spec.au});
  REQUIRE(fit.converged);
  CHECK(std::abs(fit.beta(1) - spec.beta1) <= 3 * fit.se(1));
  CHECK(fit.sigma > 0.5);
  CHECK(fit.sigma < 1.5);
  for (std::size_t i = 1; i < fit.loglik_trace.size(); ++i) CHECK(fit.loglik_trace[i] >= fit.loglik_trace[i - 1]);
}

TEST_CASE("fit_glmm preconditions") {
  auto videos = two_predictor_data(8, 5, 4, 1.0);
  auto constant = videos;
  for (auto& v : constant) v.outcome = 1;
  CHECK_THROWS_AS(fit_glmm(constant, {2}), SeparationError);
  auto one_patient = videos;
  for (auto& v : one_patient) v.patient_id = "same";
  CHECK_THROWS_AS(fit_glmm(one_patient, {2}), ValidationError);
  CHECK_THROWS_AS(fit_glmm(videos, {5}), ValidationError);
  CHECK_THROWS_AS(fit_glmm(videos, {2, 2}), ValidationError);
  CHECK_THROWS_AS(fit_glmm(videos, {4}), NumericError);

  // Perfect separation on AU2.
  auto separated = videos;
  for (auto& v : separated) v.proportion(require_au_index(2)) = v.outcome == 1 ? 0.9 : 0.1;
  CHECK_THROWS_AS(fit_glmm(separated, {2}), SeparationError);
}

TEST_CASE("significance report") {
  GlmmFit fit;
  fit.aus = {2, 12};
  fit.beta = Eigen::Vector3d(0.1, 2.0, -0.3);
  fit.se = Eigen::Vector3d(1.0, 0.5, 1.0);
  fit.z = fit.beta.cwiseQuotient(fit.se);
  fit.p_values = Eigen::Vector3d(0.9, 0.01, 0.5);
  fit.converged = true;
  const auto rows = significance_report(fit);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].au == 2);
  CHECK(rows[0].sign == 1);
  CHECK(rows[0].significant);
  CHECK(rows[1].sign == -1);
  CHECK_FALSE(rows[1].significant);
  for (const auto& r : significance_report(fit, 0.0)) CHECK_FALSE(r.significant);
  fit.converged = false;
  CHECK_THROWS_AS(significance_report(fit), NumericError);
}

TEST_CASE("report is invariant to the order of included AUs") {
  const auto videos = two_predictor_data(9, 20, 8, 0.7);
  const auto a = significance_report(fit_glmm(videos, {2, 12}));
  const auto b = significance_report(fit_glmm(videos, {12, 2}));
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].au == b[i].au);
    CHECK(a[i].beta == b[i].beta);
    CHECK(a[i].p == b[i].p);
  }
}

TEST_CASE("wald p-values") {
  CHECK(wald_p_value(0.0) == 1.0);
  CHECK(wald_p_value(1.959963984540054) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(wald_p_value(-1.959963984540054) == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("detections file round trip") {
  std::vector<FrameDetection> frames = {frame("f1", "v1", "p1", 0), frame("f2", "v1", "p1", 0)};
  frames[0].probability.setConstant(0.25);
  frames[1].probability(17) = 0.875;
  const auto dir = std::filesystem::temp_directory_path() / "aumask_test_detections";
  std::filesystem::create_directories(dir);
  write_detections(dir / "d.csv", frames);
  const auto back = read_detections(dir / "d.csv");
  REQUIRE(back.size() == 2);
  CHECK((back[0].probability == frames[0].probability).all());
  CHECK(back[1].probability(17) == 0.875);
  io::write_file_atomic(dir / "short.csv", "frame_id,video_id,patient_id,au,probability\nf,v,p,1,0.5\n");
  CHECK_THROWS_AS(read_detections(dir / "short.csv"), ValidationError);
  std::filesystem::remove_all(dir);
}
