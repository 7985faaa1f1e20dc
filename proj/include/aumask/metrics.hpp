#pragma once

#include "aumask/labelspace.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>

namespace aumask {

struct AuConfusion {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::int64_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const AuConfusion&, const AuConfusion&) = default;
};

/// Per-AU counts in catalog order.
using ConfusionCounts = std::array<AuConfusion, kNumAus>;

/// Counts over unmasked entries only. `preds` must be 0/1.
ConfusionCounts confusion(const Eigen::Ref<const LabelMatrix>& preds, const Eigen::Ref<const LabelMatrix>& labels,
                          const Eigen::Ref<const MaskMatrix>& mask);

/// 1 where probability >= threshold.
template <typename Derived>
LabelMatrix threshold_predictions(const Eigen::DenseBase<Derived>& probabilities, double threshold = 0.5) {
  LabelMatrix out(probabilities.rows(), kNumAus);
  for (Eigen::Index b = 0; b < probabilities.rows(); ++b) {
    for (Eigen::Index k = 0; k < kNumAus; ++k) out(b, k) = probabilities(b, k) >= threshold ? 1 : 0;
  }
  return out;
}

struct AuMetrics {
  double f1 = 0.0;
  double accuracy = 0.0;
};

/// F1 is 0 when 2tp + fp + fn = 0. Throws ValidationError when there are no
/// entries at all.
AuMetrics f1_accuracy(const AuConfusion& counts);

struct MetricsReport {
  /// Empty for AUs that had no unmasked test entries.
  std::array<std::optional<AuMetrics>, kNumAus> per_au;

  static MetricsReport from_counts(const ConfusionCounts& counts);
  bool complete() const;
};

/// Unweighted means over all 18 AUs; throws ValidationError naming the first
/// missing AU.
std::pair<double, double> mean_metrics(const MetricsReport& report);

/// Unweighted means over the AUs that are present; throws when none are.
std::pair<double, double> mean_available_metrics(const MetricsReport& report);

/// Rounds half away from zero to `decimals` places for display.
double round_to(double value, int decimals);

/// AU ids with f1 >= f1_min and accuracy >= acc_min. Missing AUs never pass.
std::set<int> inclusion_filter(const MetricsReport& report, double f1_min = 0.5, double acc_min = 0.8);

// Report file: header "au,f1,accuracy", one row per catalog AU (empty fields
// when the AU has no data), then a "mean" row over the AUs present.
std::string format_metrics_report(const MetricsReport& report);
void write_metrics_report(const std::filesystem::path& path, const MetricsReport& report);
MetricsReport read_metrics_report(const std::filesystem::path& path);
MetricsReport parse_metrics_report(std::string_view text, const std::filesystem::path& source = {});

}  // namespace aumask
