#include "aumask/association.hpp"

#include "aumask/error.hpp"
#include "aumask/io.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace aumask {
namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + exp(z)) without overflow.
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

struct Design {
  std::vector<PatientBlock> blocks;
  Eigen::Index cols = 0;
};

Design build_design(std::span<const VideoAggregate> videos, const std::vector<Eigen::Index>& idx) {
  std::map<std::string, std::vector<const VideoAggregate*>> by_patient;
  for (const auto& v : videos) by_patient[v.patient_id].push_back(&v);
  Design d;
  d.cols = static_cast<Eigen::Index>(idx.size()) + 1;
  for (const auto& [patient, vs] : by_patient) {
    PatientBlock b{Eigen::MatrixXd(static_cast<Eigen::Index>(vs.size()), d.cols),
                   Eigen::VectorXd(static_cast<Eigen::Index>(vs.size()))};
    for (std::size_t r = 0; r < vs.size(); ++r) {
      const auto row = static_cast<Eigen::Index>(r);
      b.x(row, 0) = 1.0;
      for (std::size_t j = 0; j < idx.size(); ++j) b.x(row, static_cast<Eigen::Index>(j) + 1) = vs[r]->proportion(idx[j]);
      b.y(row) = vs[r]->outcome;
    }
    d.blocks.push_back(std::move(b));
  }
  return d;
}

struct Objective {
  std::span<const PatientBlock> blocks;
  bool sigma_zero;
  double inner_tolerance;
  Eigen::Index nbeta;

  /// Log-likelihood and gradient at theta = (beta, log sigma) or just beta.
  double operator()(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const {
    const Eigen::VectorXd beta = theta.head(nbeta);
    const double tau = sigma_zero ? 0.0 : theta(nbeta);
    return glmm_loglik(blocks, beta, tau, sigma_zero, grad, inner_tolerance);
  }
};

/// Largest gradient accepted as stationary once the line search can no
/// longer resolve an increase.
constexpr double kStallGradient = 1e-4;

struct BfgsResult {
  Eigen::VectorXd theta;
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
  std::vector<double> trace;
};

/// Maximizes `f` by BFGS on -f with a backtracking Armijo line search.
BfgsResult maximize(const Objective& f, Eigen::VectorXd theta, const GlmmOptions& opt) {
  const Eigen::Index n = theta.size();
  Eigen::VectorXd g(n);
  double value = f(theta, &g);
  if (!std::isfinite(value) || !g.allFinite()) throw NumericError("log-likelihood is not finite at the start point");
  BfgsResult out;
  out.trace.push_back(value);
  Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);
  bool scaled = false;
  int stalls = 0;

  for (int it = 0; it < opt.max_iterations; ++it) {
    if (g.lpNorm<Eigen::Infinity>() <= opt.gradient_tolerance) {
      out.converged = true;
      break;
    }
    Eigen::VectorXd dir = hinv * g;
    if (dir.dot(g) <= 0) {
      hinv.setIdentity();
      dir = g;
    }
    const double big = dir.lpNorm<Eigen::Infinity>();
    if (big > 5.0) dir *= 5.0 / big;

    double step = 1.0;
    Eigen::VectorXd next(n), gnext(n);
    double vnext = -std::numeric_limits<double>::infinity();
    bool accepted = false;
    const double slope = g.dot(dir);
    for (int k = 0; k < 60; ++k) {
      next = theta + step * dir;
      vnext = f(next, &gnext);
      if (std::isfinite(vnext) && gnext.allFinite() && vnext >= value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    out.iterations = it + 1;
    if (!accepted) {
      // No further ascent is possible in floating point; accept a near-stationary point.
      out.converged = g.lpNorm<Eigen::Infinity>() <= kStallGradient;
      break;
    }
    const Eigen::VectorXd s = next - theta;
    const Eigen::VectorXd y = g - gnext;  // gradient change of -f
    // Successive values equal to working precision: the optimum is resolved
    // as far as the log-likelihood can tell.
    stalls = vnext - value <= 4 * std::numeric_limits<double>::epsilon() * std::abs(value) ? stalls + 1 : 0;
    theta = next;
    value = vnext;
    g = gnext;
    out.trace.push_back(value);
    if (stalls >= 2) {
      out.iterations = it + 1;
      out.converged = g.lpNorm<Eigen::Infinity>() <= kStallGradient;
      break;
    }
    if (theta.head(n - (f.sigma_zero ? 0 : 1)).lpNorm<Eigen::Infinity>() > opt.separation_bound) {
      throw SeparationError("coefficients diverge; the outcome is (quasi-)separated by the predictors");
    }

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        hinv *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd i_n = Eigen::MatrixXd::Identity(n, n);
      hinv = (i_n - rho * s * y.transpose()) * hinv * (i_n - rho * y * s.transpose()) + rho * s * s.transpose();
    }
  }
  if (!out.converged && g.lpNorm<Eigen::Infinity>() <= opt.gradient_tolerance) out.converged = true;
  out.theta = std::move(theta);
  out.value = value;
  return out;
}

/// Newton steps with the given information matrix, kept only while they do
/// not lower the log-likelihood and shrink the gradient.
void newton_polish(const Objective& f, BfgsResult& res, const Eigen::MatrixXd& info, double tolerance) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0).all()) return;
  Eigen::VectorXd g(res.theta.size()), gnext(res.theta.size());
  f(res.theta, &g);
  for (int it = 0; it < 5 && g.lpNorm<Eigen::Infinity>() > tolerance * 1e-3; ++it) {
    const Eigen::VectorXd next = res.theta + ldlt.solve(g);
    const double v = f(next, &gnext);
    if (!(v >= res.value) || !(gnext.lpNorm<Eigen::Infinity>() < g.lpNorm<Eigen::Infinity>())) break;
    res.theta = next;
    res.value = v;
    res.trace.push_back(v);
    g = gnext;
  }
  if (g.lpNorm<Eigen::Infinity>() <= tolerance) res.converged = true;
}

/// Observed information by central differences of the analytic gradient.
Eigen::MatrixXd numeric_information(const Objective& f, const Eigen::VectorXd& theta) {
  const Eigen::Index n = theta.size();
  Eigen::MatrixXd h(n, n);
  Eigen::VectorXd gp(n), gm(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double step = 1e-5 * std::max(1.0, std::abs(theta(k)));
    Eigen::VectorXd tp = theta, tm = theta;
    tp(k) += step;
    tm(k) -= step;
    f(tp, &gp);
    f(tm, &gm);
    h.col(k) = (gp - gm) / (2 * step);
  }
  return -0.5 * (h + h.transpose());
}

}  // namespace

PresenceTable presence_ratio(const Eigen::Ref<const LabelMatrix>& detected, std::span<const int> classes,
                             int num_classes) {
  if (num_classes < 1) throw ValidationError("num_classes must be positive");
  if (static_cast<Eigen::Index>(classes.size()) != detected.rows()) {
    throw ValidationError("one class is required per frame");
  }
  PresenceTable t;
  t.frames.assign(static_cast<std::size_t>(num_classes), 0);
  t.detected = Eigen::Array<std::int64_t, kNumAus, Eigen::Dynamic>::Zero(kNumAus, num_classes);
  for (Eigen::Index i = 0; i < detected.rows(); ++i) {
    const int c = classes[static_cast<std::size_t>(i)];
    if (c < 0 || c >= num_classes) throw ValidationError("frame class " + std::to_string(c) + " is out of range");
    ++t.frames[static_cast<std::size_t>(c)];
    for (Eigen::Index k = 0; k < kNumAus; ++k) {
      const int d = detected(i, k);
      if (d != 0 && d != 1) throw ValidationError("detections must be 0 or 1");
      t.detected(k, c) += d;
    }
  }
  t.ratio.resize(kNumAus, num_classes);
  for (int c = 0; c < num_classes; ++c) {
    if (t.frames[static_cast<std::size_t>(c)] == 0) {
      throw ValidationError("no frames in class " + std::to_string(c));
    }
    t.ratio.col(c) = t.detected.col(c).cast<double>() / static_cast<double>(t.frames[static_cast<std::size_t>(c)]);
  }
  return t;
}

std::vector<VideoAggregate> aggregate_by_video(std::span<const FrameDetection> frames, double threshold,
                                               PredictorEncoding encoding) {
  std::vector<VideoAggregate> out;
  std::map<std::string, std::size_t> slot;
  for (const auto& f : frames) {
    if (f.video_id.empty() || f.patient_id.empty()) {
      throw ValidationError("frame " + f.frame_id + " lacks a video_id or patient_id");
    }
    if (f.outcome != 0 && f.outcome != 1) throw ValidationError("frame " + f.frame_id + " has a non-binary outcome");
    auto [it, fresh] = slot.emplace(f.video_id, out.size());
    if (fresh) {
      VideoAggregate v;
      v.video_id = f.video_id;
      v.patient_id = f.patient_id;
      v.outcome = f.outcome;
      out.push_back(std::move(v));
    }
    auto& v = out[it->second];
    if (v.outcome != f.outcome) {
      throw ValidationError("video " + f.video_id + " spans two outcome classes; split it before aggregating");
    }
    if (v.patient_id != f.patient_id) throw ValidationError("video " + f.video_id + " spans two patients");
    ++v.frames;
    v.proportion += (f.probability >= threshold).cast<double>();
  }
  for (auto& v : out) {
    if (encoding == PredictorEncoding::kProportion) {
      v.proportion /= static_cast<double>(v.frames);
    } else {
      v.proportion = (v.proportion > 0).cast<double>();
    }
  }
  return out;
}

LaplaceMode laplace_mode(const PatientBlock& block, const Eigen::VectorXd& beta, double sigma, double tolerance,
                         double start) {
  if (!(sigma > 0)) throw ValidationError("laplace_mode needs sigma > 0");
  const double s2 = sigma * sigma;
  const Eigen::VectorXd eta0 = block.x * beta;
  auto eval = [&](double u, double& grad, double& curv) {
    grad = -u / s2;
    curv = 1.0 / s2;
    for (Eigen::Index j = 0; j < eta0.size(); ++j) {
      const double mu = sigmoid(eta0(j) + u);
      grad += block.y(j) - mu;
      curv += mu * (1 - mu);
    }
  };
  LaplaceMode m;
  m.u = start;
  eval(m.u, m.gradient, m.curvature);
  for (int it = 0; it < 200 && std::abs(m.gradient) > tolerance; ++it) {
    double step = m.gradient / m.curvature;
    double g = 0, c = 0;
    for (int k = 0; k < 60; ++k) {
      eval(m.u + step, g, c);
      if (std::abs(g) < std::abs(m.gradient)) break;
      step *= 0.5;
    }
    if (!(std::abs(g) < std::abs(m.gradient))) break;
    m.u += step;
    m.gradient = g;
    m.curvature = c;
    m.iterations = it + 1;
  }
  if (!std::isfinite(m.u)) throw NumericError("conditional mode is not finite");
  return m;
}

double glmm_loglik(std::span<const PatientBlock> blocks, const Eigen::VectorXd& beta, double log_sigma,
                   bool sigma_zero, Eigen::VectorXd* gradient, double inner_tolerance) {
  const Eigen::Index p = beta.size();
  if (gradient) gradient->setZero(sigma_zero ? p : p + 1);
  double total = 0.0;
  const double sigma = std::exp(log_sigma);
  const double s2 = sigma * sigma;
  for (const auto& b : blocks) {
    if (b.x.cols() != p) throw ValidationError("design width does not match beta");
    const Eigen::VectorXd eta0 = b.x * beta;
    if (sigma_zero || s2 == 0.0) {
      for (Eigen::Index j = 0; j < eta0.size(); ++j) {
        total += b.y(j) * eta0(j) - softplus(eta0(j));
        if (gradient) gradient->head(p) += (b.y(j) - sigmoid(eta0(j))) * b.x.row(j).transpose();
      }
      continue;
    }
    const LaplaceMode m = laplace_mode(b, beta, sigma, inner_tolerance);
    const double u = m.u, h = m.curvature;
    double sum_w = 0.0;
    for (Eigen::Index j = 0; j < eta0.size(); ++j) {
      const double eta = eta0(j) + u;
      total += b.y(j) * eta - softplus(eta);
      sum_w += sigmoid(eta) * (1 - sigmoid(eta));
    }
    // -u^2 / (2 s2) - log(s2 H) / 2, with s2 H = 1 + s2 sum(w).
    total += -u * u / (2 * s2) - 0.5 * std::log1p(s2 * sum_w);
    if (!gradient) continue;

    Eigen::VectorXd wx = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd resid_x = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd wprime_x = Eigen::VectorXd::Zero(p);
    double sum_wprime = 0.0;
    for (Eigen::Index j = 0; j < eta0.size(); ++j) {
      const double mu = sigmoid(eta0(j) + u);
      const double w = mu * (1 - mu);
      const double wp = w * (1 - 2 * mu);
      const auto xj = b.x.row(j).transpose();
      wx += w * xj;
      resid_x += (b.y(j) - mu) * xj;
      wprime_x += wp * xj;
      sum_wprime += wp;
    }
    const Eigen::VectorXd du_dbeta = -wx / h;
    gradient->head(p) += resid_x - (wprime_x + sum_wprime * du_dbeta) / (2 * h);
    const double du_dtau = 2 * u / (s2 * h);
    // u^2/s2 - 1 + 1/(s2 H) - sum(w') du/dtau / (2H); the middle pair is -s2 sum(w) / (1 + s2 sum(w)).
    (*gradient)(p) += u * u / s2 - s2 * sum_w / (1 + s2 * sum_w) - sum_wprime * du_dtau / (2 * h);
  }
  return total;
}

double wald_p_value(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

GlmmFit fit_glmm(std::span<const VideoAggregate> videos, std::vector<int> included_aus, const GlmmOptions& options) {
  if (options.max_iterations < 1) throw ValidationError("max_iterations must be positive");
  std::set<int> unique;
  std::vector<Eigen::Index> idx;
  for (const int au : included_aus) {
    if (!unique.insert(au).second) throw ValidationError("AU" + std::to_string(au) + " listed twice");
    idx.push_back(require_au_index(au));
  }
  std::sort(idx.begin(), idx.end());

  std::set<std::string> patients;
  std::int64_t positives = 0;
  for (const auto& v : videos) {
    if (v.outcome != 0 && v.outcome != 1) throw ValidationError("video " + v.video_id + " has a non-binary outcome");
    if (!(v.proportion >= 0).all() || !(v.proportion <= 1).all()) {
      throw ValidationError("video " + v.video_id + " has predictors outside [0, 1]");
    }
    patients.insert(v.patient_id);
    positives += v.outcome;
  }
  const auto n = static_cast<std::int64_t>(videos.size());
  if (positives == 0 || positives == n) throw SeparationError("outcome is constant across all videos");
  if (patients.size() < 2) throw ValidationError("at least 2 patients are required");
  if (positives < 2 || n - positives < 2) throw ValidationError("at least 2 videos of each outcome are required");
  for (const Eigen::Index k : idx) {
    const double first = videos.front().proportion(k);
    const bool constant = std::all_of(videos.begin(), videos.end(),
                                      [&](const VideoAggregate& v) { return v.proportion(k) == first; });
    if (constant) throw NumericError("predictor AU" + std::to_string(kAuIds[static_cast<std::size_t>(k)]) + " is constant");
  }

  const Design design = build_design(videos, idx);
  const Eigen::Index p = design.cols;

  // Logistic start point, then the full model.
  Eigen::VectorXd theta0 = Eigen::VectorXd::Zero(p);
  const double rate = static_cast<double>(positives) / static_cast<double>(n);
  theta0(0) = std::log(rate / (1 - rate));
  const Objective plain{design.blocks, true, options.inner_tolerance, p};
  BfgsResult res = maximize(plain, theta0, options);
  Objective obj = plain;
  if (!options.sigma_fixed_zero) {
    obj.sigma_zero = false;
    Eigen::VectorXd start(p + 1);
    start << res.theta, std::log(0.5);
    res = maximize(obj, start, options);
    if (std::exp(res.theta(p)) >= 1e-3 && res.theta.head(p).lpNorm<Eigen::Infinity>() <= options.separation_bound) {
      newton_polish(obj, res, numeric_information(obj, res.theta), options.gradient_tolerance);
    }
  }

  GlmmFit fit;
  for (const Eigen::Index k : idx) fit.aus.push_back(kAuIds[static_cast<std::size_t>(k)]);
  fit.beta = res.theta.head(p);
  fit.sigma = options.sigma_fixed_zero ? 0.0 : std::exp(res.theta(p));
  fit.loglik = res.value;
  fit.converged = res.converged;
  fit.iterations = res.iterations;
  fit.loglik_trace = std::move(res.trace);

  // Information for beta. At a boundary sigma the log-sigma direction is
  // flat, so only the beta block is used there.
  Eigen::MatrixXd info;
  if (options.sigma_fixed_zero) {
    info = Eigen::MatrixXd::Zero(p, p);
    for (const auto& b : design.blocks) {
      const Eigen::VectorXd eta = b.x * fit.beta;
      for (Eigen::Index j = 0; j < eta.size(); ++j) {
        const double mu = sigmoid(eta(j));
        info += mu * (1 - mu) * b.x.row(j).transpose() * b.x.row(j);
      }
    }
  } else {
    const Eigen::MatrixXd full = numeric_information(obj, res.theta);
    info = fit.sigma < 1e-3 ? Eigen::MatrixXd(full.topLeftCorner(p, p)) : full;
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  const bool pd = ldlt.info() == Eigen::Success && (ldlt.vectorD().array() > 0).all();
  fit.se = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
  if (pd) {
    const Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
    for (Eigen::Index k = 0; k < p; ++k) fit.se(k) = cov(k, k) > 0 ? std::sqrt(cov(k, k)) : fit.se(k);
  }
  if (!fit.se.allFinite()) fit.converged = false;
  fit.z = fit.beta.cwiseQuotient(fit.se);
  fit.p_values = fit.z.unaryExpr([](double z) { return wald_p_value(z); });
  return fit;
}

std::vector<SignificanceRow> significance_report(const GlmmFit& fit, double alpha) {
  if (!fit.converged) throw NumericError("the fit did not converge; no significance report");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
  std::vector<SignificanceRow> rows;
  for (std::size_t j = 0; j < fit.aus.size(); ++j) {
    const auto k = static_cast<Eigen::Index>(j) + 1;
    SignificanceRow r;
    r.au = fit.aus[j];
    r.beta = fit.beta(k);
    r.se = fit.se(k);
    r.p = fit.p_values(k);
    r.sign = (r.beta > 0) - (r.beta < 0);
    r.significant = r.p < alpha;
    rows.push_back(r);
  }
  std::sort(rows.begin(), rows.end(),
            [](const SignificanceRow& a, const SignificanceRow& b) { return *au_index(a.au) < *au_index(b.au); });
  return rows;
}

std::vector<FrameDetection> read_detections(const std::filesystem::path& path) {
  const auto t = io::read_csv(path);
  io::check_columns(t, {"frame_id", "video_id", "patient_id", "au", "probability"});
  const int cf = t.require_column("frame_id"), cv = t.require_column("video_id");
  const int cp = t.require_column("patient_id"), ca = t.require_column("au"), cprob = t.require_column("probability");
  std::vector<FrameDetection> out;
  std::vector<LabelMask> seen;
  std::map<std::string, std::size_t> slot;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string& frame = row[static_cast<std::size_t>(cf)];
    if (frame.empty()) throw ValidationError(t.where(r) + ": empty frame_id");
    auto [it, fresh] = slot.emplace(frame, out.size());
    if (fresh) {
      out.push_back({frame, row[static_cast<std::size_t>(cv)], row[static_cast<std::size_t>(cp)],
                     AuProbabilities::Zero(), 0});
      seen.push_back(LabelMask::Zero());
    }
    auto& f = out[it->second];
    if (f.video_id != row[static_cast<std::size_t>(cv)] || f.patient_id != row[static_cast<std::size_t>(cp)]) {
      throw ValidationError(t.where(r) + ": frame " + frame + " changes video or patient");
    }
    const int au = static_cast<int>(io::parse_int(row[static_cast<std::size_t>(ca)], t, r, "au"));
    const auto k = au_index(au);
    if (!k) throw ValidationError(t.where(r) + ": AU" + std::to_string(au) + " is not in the catalog");
    if (seen[it->second](*k)) throw ValidationError(t.where(r) + ": AU" + std::to_string(au) + " repeated for frame " + frame);
    seen[it->second](*k) = 1;
    const double prob = io::parse_double(row[static_cast<std::size_t>(cprob)], t, r, "probability");
    if (!(prob >= 0.0 && prob <= 1.0)) throw ValidationError(t.where(r) + ": probability must lie in [0, 1]");
    f.probability(*k) = prob;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if ((seen[i] == 0).any()) throw ValidationError(path.string() + ": frame " + out[i].frame_id + " lacks some AUs");
  }
  return out;
}

std::string format_detections(std::span<const FrameDetection> frames) {
  std::string out = "frame_id,video_id,patient_id,au,probability\n";
  for (const auto& f : frames) {
    for (Eigen::Index k = 0; k < kNumAus; ++k) {
      out += f.frame_id + ',' + f.video_id + ',' + f.patient_id + ',' + std::to_string(kAuIds[static_cast<std::size_t>(k)]) +
             ',' + io::format_double(f.probability(k)) + '\n';
    }
  }
  return out;
}

void write_detections(const std::filesystem::path& path, std::span<const FrameDetection> frames) {
  io::write_file_atomic(path, format_detections(frames));
}

}  // namespace aumask
