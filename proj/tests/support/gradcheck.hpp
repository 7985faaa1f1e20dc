#pragma once

#include "aumask/masked_loss.hpp"
#include "aumask/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace aumask::testing {

using LogitMatrix = Eigen::Matrix<double, Eigen::Dynamic, kNumAus, Eigen::RowMajor>;

inline double batch_loss(const std::vector<Image>& images, const LabelMatrix& labels,
                         const MaskMatrix& mask, const ParameterSet<double>& params,
                         const ModelConfig& config) {
  return masked_bce(forward_batch(images, params, config), labels, mask).value;
}

inline ParameterSet<double> batch_gradient(const std::vector<Image>& images,
                                           const LabelMatrix& labels, const MaskMatrix& mask,
                                           const ParameterSet<double>& params,
                                           const ModelConfig& config) {
  std::vector<ForwardCache<double>> caches(images.size());
  LogitMatrix logits(static_cast<Eigen::Index>(images.size()), kNumAus);
  for (std::size_t i = 0; i < images.size(); ++i) {
    logits.row(static_cast<Eigen::Index>(i)) = forward(images[i], params, config, &caches[i]);
  }
  const auto dlogits = masked_bce_grad(logits, labels, mask);
  ParameterSet<double> grads = zeros_like(params);
  for (std::size_t i = 0; i < images.size(); ++i) {
    accumulate_gradients(caches[i], params, config, dlogits.row(static_cast<Eigen::Index>(i)), grads);
  }
  return grads;
}

/// Symmetric relative error with a floor on the denominator, so entries whose
/// true gradient is ~0 are judged on absolute error at the floor's scale.
inline double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  Eigen::Index checked = 0;
};

/// Compares every parameter gradient against central differences.
inline GradCheckReport check_gradients(const std::vector<Image>& images, const LabelMatrix& labels,
                                       const MaskMatrix& mask, ParameterSet<double> params,
                                       const ModelConfig& config, double step, double floor) {
  const ParameterSet<double> grads = batch_gradient(images, labels, mask, params, config);
  GradCheckReport report;
  ParameterSet<double>* live = &params;
  for_each_tensor(
      [&](const std::string& name, auto& tensor, const auto& g) {
        for (Eigen::Index i = 0; i < tensor.size(); ++i) {
          const double orig = tensor.data()[i];
          tensor.data()[i] = orig + step;
          const double up = batch_loss(images, labels, mask, *live, config);
          tensor.data()[i] = orig - step;
          const double down = batch_loss(images, labels, mask, *live, config);
          tensor.data()[i] = orig;
          const double fd = (up - down) / (2 * step);
          const double err = relative_error(g.data()[i], fd, floor);
          ++report.checked;
          if (err > report.max_rel_error) {
            report.max_rel_error = err;
            report.worst_tensor = name + "[" + std::to_string(i) + "]";
            report.worst_analytic = g.data()[i];
            report.worst_numeric = fd;
          }
        }
      },
      params, grads);
  return report;
}

/// Adds N(0, scale^2) noise to every tensor (layer-norm scales included) so
/// gradient checks do not sit on special structure like unit scales.
inline void perturb(ParameterSet<double>& params, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> noise(0.0, scale);
  for_each_tensor(
      [&](const std::string&, auto& t) {
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += noise(rng);
      },
      params);
}

inline Image random_image(const ModelConfig& config, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(config.image_size, config.image_size, config.channels);
  for (auto& plane : img.planes) {
    for (Eigen::Index i = 0; i < plane.size(); ++i) plane.data()[i] = u(rng);
  }
  return img;
}

struct LabeledBatch {
  LabelMatrix labels;
  MaskMatrix mask;
};

inline LabeledBatch random_labels(Eigen::Index rows, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(density), coin(0.5);
  LabeledBatch b{LabelMatrix(rows, kNumAus), MaskMatrix(rows, kNumAus)};
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index k = 0; k < kNumAus; ++k) {
      const bool labeled = keep(rng);
      b.labels(i, k) = labeled ? (coin(rng) ? 1 : 0) : -1;
      b.mask(i, k) = labeled ? 1 : 0;
    }
  }
  if ((b.mask == 0).all()) {
    b.labels(0, 0) = 1;
    b.mask(0, 0) = 1;
  }
  return b;
}

}  // namespace aumask::testing
