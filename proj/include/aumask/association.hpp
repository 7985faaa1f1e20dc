#pragma once

// Frame-to-video aggregation, presence ratios and a random-intercept
// logistic regression fitted by Laplace approximation.

#include "aumask/labelspace.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace aumask {

using AuProbabilities = Eigen::Array<double, 1, kNumAus>;

/// One inferred frame. `outcome` is the binary clinical class of the frame.
struct FrameDetection {
  std::string frame_id;
  std::string video_id;
  std::string patient_id;
  AuProbabilities probability = AuProbabilities::Zero();
  int outcome = 0;
};

struct PresenceTable {
  /// Frames per class.
  std::vector<std::int64_t> frames;
  /// detected(k, c): frames of class c where AU k is detected.
  Eigen::Array<std::int64_t, kNumAus, Eigen::Dynamic> detected;
  /// ratio(k, c) = detected(k, c) / frames[c].
  Eigen::Array<double, kNumAus, Eigen::Dynamic> ratio;
};

/// Per-AU, per-class fraction of frames with the AU detected. `classes[i]`
/// must lie in [0, num_classes); an empty class is a ValidationError.
PresenceTable presence_ratio(const Eigen::Ref<const LabelMatrix>& detected, std::span<const int> classes,
                             int num_classes);

struct VideoAggregate {
  std::string video_id;
  std::string patient_id;
  int outcome = 0;
  std::int64_t frames = 0;
  /// Fraction of frames with probability >= threshold, per catalog AU.
  AuProbabilities proportion = AuProbabilities::Zero();
};

enum class PredictorEncoding {
  /// Fraction of frames with the AU detected.
  kProportion,
  /// 1 if any frame has the AU detected.
  kAnyFrame,
};

/// Groups frames by video_id, in order of first appearance. A video whose
/// frames disagree on outcome or patient is a ValidationError.
std::vector<VideoAggregate> aggregate_by_video(std::span<const FrameDetection> frames, double threshold = 0.5,
                                               PredictorEncoding encoding = PredictorEncoding::kProportion);

struct GlmmOptions {
  int max_iterations = 200;
  /// Outer convergence: infinity norm of the log-likelihood gradient.
  double gradient_tolerance = 1e-7;
  /// Inner Newton tolerance on the conditional-mode gradient.
  double inner_tolerance = 1e-10;
  /// Fit plain logistic regression (sigma fixed at 0).
  bool sigma_fixed_zero = false;
  /// Coefficients beyond this magnitude are treated as separation.
  double separation_bound = 50.0;
};

struct GlmmFit {
  /// Catalog-ordered AU ids of the slope coefficients.
  std::vector<int> aus;
  /// Intercept first, then one slope per AU.
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
  Eigen::VectorXd z;
  Eigen::VectorXd p_values;
  double sigma = 0.0;
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  /// Log-likelihood after every accepted outer step, starting point first.
  std::vector<double> loglik_trace;
};

/// Design for one patient: rows are videos, first column is the intercept.
struct PatientBlock {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

struct LaplaceMode {
  double u = 0.0;
  /// d/du of the conditional log density at u.
  double gradient = 0.0;
  /// Negative second derivative at u.
  double curvature = 0.0;
  int iterations = 0;
};

/// Newton search for the conditional mode of one patient's random intercept.
LaplaceMode laplace_mode(const PatientBlock& block, const Eigen::VectorXd& beta, double sigma,
                         double tolerance = 1e-10, double start = 0.0);

/// Laplace-approximated marginal log-likelihood of all blocks and its
/// gradient with respect to (beta, log sigma). With `sigma_zero` the model is
/// plain logistic regression and the gradient has only the beta part.
double glmm_loglik(std::span<const PatientBlock> blocks, const Eigen::VectorXd& beta, double log_sigma,
                   bool sigma_zero, Eigen::VectorXd* gradient = nullptr, double inner_tolerance = 1e-10);

/// Fits logit P(y = 1) = b0 + b'x + u_patient, u ~ N(0, sigma^2), with the
/// listed AUs as predictors. Needs at least 2 patients and 2 videos of each
/// outcome. A constant outcome or diverging coefficients raise
/// SeparationError; running out of iterations returns converged = false.
GlmmFit fit_glmm(std::span<const VideoAggregate> videos, std::vector<int> included_aus,
                 const GlmmOptions& options = {});

struct SignificanceRow {
  int au = 0;
  double beta = 0.0;
  double se = 0.0;
  double p = 0.0;
  /// -1, 0 or +1.
  int sign = 0;
  bool significant = false;
};

/// One row per slope, in catalog order. Significant iff p < alpha.
std::vector<SignificanceRow> significance_report(const GlmmFit& fit, double alpha = 0.05);

/// Two-sided Wald p-value for z.
double wald_p_value(double z);

// Detections file, long format: frame_id, video_id, patient_id, au, probability.
// Rows are grouped into frames by frame_id; outcome is left at 0.
std::vector<FrameDetection> read_detections(const std::filesystem::path& path);
std::string format_detections(std::span<const FrameDetection> frames);
void write_detections(const std::filesystem::path& path, std::span<const FrameDetection> frames);

}  // namespace aumask
