#include "aumask/metrics.hpp"

#include "aumask/error.hpp"
#include "aumask/io.hpp"

#include <cmath>

namespace aumask {

ConfusionCounts confusion(const Eigen::Ref<const LabelMatrix>& preds, const Eigen::Ref<const LabelMatrix>& labels,
                          const Eigen::Ref<const MaskMatrix>& mask) {
  if (preds.rows() != labels.rows() || preds.rows() != mask.rows()) {
    throw ValidationError("predictions, labels and mask must have the same number of rows");
  }
  validate_labels(labels);
  ConfusionCounts out{};
  for (Eigen::Index b = 0; b < preds.rows(); ++b) {
    for (Eigen::Index k = 0; k < kNumAus; ++k) {
      const int p = preds(b, k);
      if (p != 0 && p != 1) {
        throw ValidationError("prediction " + std::to_string(p) + " is not binary");
      }
      const int m = mask(b, k);
      if ((m != 0 && m != 1) || (m == 0) != (labels(b, k) == kDummyLabel)) {
        throw ValidationError("mask is inconsistent with labels");
      }
      if (m == 0) continue;
      auto& c = out[static_cast<std::size_t>(k)];
      const int y = labels(b, k);
      if (p == 1 && y == 1) ++c.tp;
      else if (p == 1) ++c.fp;
      else if (y == 1) ++c.fn;
      else ++c.tn;
    }
  }
  return out;
}

AuMetrics f1_accuracy(const AuConfusion& c) {
  if (c.tp < 0 || c.fp < 0 || c.tn < 0 || c.fn < 0) throw ValidationError("negative confusion count");
  if (c.total() == 0) throw ValidationError("no data for AU");
  const auto denom = 2 * c.tp + c.fp + c.fn;
  AuMetrics m;
  m.f1 = denom == 0 ? 0.0 : static_cast<double>(2 * c.tp) / static_cast<double>(denom);
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  return m;
}

MetricsReport MetricsReport::from_counts(const ConfusionCounts& counts) {
  MetricsReport r;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k].total() > 0) r.per_au[k] = f1_accuracy(counts[k]);
  }
  return r;
}

bool MetricsReport::complete() const {
  for (const auto& m : per_au) {
    if (!m) return false;
  }
  return true;
}

std::pair<double, double> mean_metrics(const MetricsReport& report) {
  for (std::size_t k = 0; k < report.per_au.size(); ++k) {
    if (!report.per_au[k]) throw ValidationError("metrics for AU" + std::to_string(kAuIds[k]) + " are missing");
  }
  return mean_available_metrics(report);
}

std::pair<double, double> mean_available_metrics(const MetricsReport& report) {
  double f1 = 0.0, acc = 0.0;
  int n = 0;
  for (const auto& m : report.per_au) {
    if (!m) continue;
    f1 += m->f1;
    acc += m->accuracy;
    ++n;
  }
  if (n == 0) throw ValidationError("metrics report has no AUs");
  return {f1 / n, acc / n};
}

double round_to(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(value * scale) / scale;
}

std::set<int> inclusion_filter(const MetricsReport& report, double f1_min, double acc_min) {
  std::set<int> out;
  for (std::size_t k = 0; k < report.per_au.size(); ++k) {
    const auto& m = report.per_au[k];
    if (m && m->f1 >= f1_min && m->accuracy >= acc_min) out.insert(kAuIds[k]);
  }
  return out;
}

std::string format_metrics_report(const MetricsReport& report) {
  std::string out = "au,f1,accuracy\n";
  for (std::size_t k = 0; k < report.per_au.size(); ++k) {
    out += std::to_string(kAuIds[k]) + ',';
    if (const auto& m = report.per_au[k]) out += io::format_double(m->f1) + ',' + io::format_double(m->accuracy);
    else out += ',';
    out += '\n';
  }
  bool any = false;
  for (const auto& m : report.per_au) any = any || m.has_value();
  if (any) {
    const auto [f1, acc] = mean_available_metrics(report);
    out += "mean," + io::format_double(f1) + ',' + io::format_double(acc) + '\n';
  } else {
    out += "mean,,\n";
  }
  return out;
}

void write_metrics_report(const std::filesystem::path& path, const MetricsReport& report) {
  io::write_file_atomic(path, format_metrics_report(report));
}

MetricsReport parse_metrics_report(std::string_view text, const std::filesystem::path& source) {
  const auto table = io::parse_csv(text, source);
  io::check_columns(table, {"au", "f1", "accuracy"});
  const int c_au = table.require_column("au");
  const int c_f1 = table.require_column("f1");
  const int c_acc = table.require_column("accuracy");
  MetricsReport report;
  std::set<int> seen;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string& au = row[static_cast<std::size_t>(c_au)];
    if (au == "mean") continue;
    const int id = static_cast<int>(io::parse_int(au, table, r, "au"));
    const auto idx = au_index(id);
    if (!idx) throw ValidationError(table.where(r) + ": AU" + au + " is not in the catalog");
    if (!seen.insert(id).second) throw ValidationError(table.where(r) + ": AU" + au + " listed twice");
    const std::string& f1 = row[static_cast<std::size_t>(c_f1)];
    const std::string& acc = row[static_cast<std::size_t>(c_acc)];
    if (f1.empty() && acc.empty()) continue;
    AuMetrics m{io::parse_double(f1, table, r, "f1"), io::parse_double(acc, table, r, "accuracy")};
    if (!(m.f1 >= 0.0 && m.f1 <= 1.0 && m.accuracy >= 0.0 && m.accuracy <= 1.0)) {
      throw ValidationError(table.where(r) + ": metrics must lie in [0, 1]");
    }
    report.per_au[static_cast<std::size_t>(*idx)] = m;
  }
  return report;
}

MetricsReport read_metrics_report(const std::filesystem::path& path) {
  return parse_metrics_report(io::read_file(path), path);
}

}  // namespace aumask
