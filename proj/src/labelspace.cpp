#include "aumask/labelspace.hpp"

#include "aumask/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace aumask {
namespace {

constexpr std::array<std::string_view, kNumAus> kAuNames = {
    "Inner Brow Raiser", "Outer Brow Raiser",    "Brow Lowerer", "Cheek Raiser",
    "Lid Tightener",     "Nose Wrinkler",        "Upper Lip Raiser", "Lip Corner Puller",
    "Dimpler",           "Lip Corner Depressor", "Chin Raiser",  "Lip Stretcher",
    "Lip Tightener",     "Lip Pressor",          "Lips Part",    "Jaw Drop",
    "Mouth Stretch",     "Eyes Closed"};

}  // namespace

std::optional<Eigen::Index> au_index(int au_id) noexcept {
  const auto it = std::find(kAuIds.begin(), kAuIds.end(), au_id);
  if (it == kAuIds.end()) return std::nullopt;
  return static_cast<Eigen::Index>(it - kAuIds.begin());
}

Eigen::Index require_au_index(int au_id) {
  const auto idx = au_index(au_id);
  if (!idx) throw ValidationError("AU" + std::to_string(au_id) + " is not in the AU catalog");
  return *idx;
}

std::string_view au_name(int au_id) { return kAuNames[static_cast<std::size_t>(require_au_index(au_id))]; }

void DatasetCoverage::validate() const {
  if (dataset_id.empty()) throw ValidationError("coverage entry has an empty dataset_id");
  for (const int au : covered_aus) {
    if (!au_index(au)) {
      throw ValidationError("coverage for '" + dataset_id + "' lists AU" + std::to_string(au) +
                            ", which is not in the AU catalog");
    }
  }
}

LabelMask DatasetCoverage::indicator() const {
  LabelMask out = LabelMask::Zero();
  for (const int au : covered_aus) out(require_au_index(au)) = 1;
  return out;
}

// AU5 (DISFA) is outside the 18-AU catalog and is dropped.
const std::vector<DatasetCoverage>& builtin_coverages() {
  static const std::vector<DatasetCoverage> table = {
      {"BP4D", {1, 2, 4, 6, 7, 10, 12, 14, 15, 17, 23, 24}},
      {"DISFA", {1, 2, 4, 6, 9, 12, 15, 17, 20, 25, 26}},
      {"UNBC", {4, 6, 7, 9, 10, 12, 15, 20, 25, 26, 27, 43}},
      {"AU-ICU", {4, 6, 7, 9, 10, 12, 20, 24, 25, 26, 27, 43}},
  };
  return table;
}

std::vector<DatasetCoverage> parse_coverage_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("coverage file is not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw ValidationError("coverage file must hold a JSON array");

  std::vector<DatasetCoverage> out;
  for (const auto& entry : doc) {
    if (!entry.is_object() || !entry.contains("dataset_id") || !entry.contains("covered_aus")) {
      throw ValidationError("coverage entries need 'dataset_id' and 'covered_aus'");
    }
    for (const auto& [key, _] : entry.items()) {
      if (key != "dataset_id" && key != "covered_aus") {
        throw ValidationError("unknown coverage field '" + key + "'");
      }
    }
    DatasetCoverage cov;
    try {
      cov.dataset_id = entry.at("dataset_id").get<std::string>();
      for (const auto& au : entry.at("covered_aus")) cov.covered_aus.insert(au.get<int>());
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("malformed coverage entry: ") + e.what());
    }
    cov.validate();
    out.push_back(std::move(cov));
  }
  return out;
}

std::vector<DatasetCoverage> load_coverage_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open coverage file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_coverage_json(buf.str());
}

std::vector<DatasetCoverage> merge_coverages(const std::vector<DatasetCoverage>& base,
                                             const std::vector<DatasetCoverage>& overrides) {
  std::vector<DatasetCoverage> out = base;
  for (const auto& o : overrides) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const DatasetCoverage& c) { return c.dataset_id == o.dataset_id; });
    if (it != out.end()) {
      *it = o;
    } else {
      out.push_back(o);
    }
  }
  return out;
}

const DatasetCoverage* find_coverage(const std::vector<DatasetCoverage>& table,
                                     std::string_view dataset_id) noexcept {
  for (const auto& c : table) {
    if (c.dataset_id == dataset_id) return &c;
  }
  return nullptr;
}

void validate_labels(const Eigen::Ref<const LabelMatrix>& labels) {
  for (Eigen::Index b = 0; b < labels.rows(); ++b) {
    for (Eigen::Index k = 0; k < kNumAus; ++k) {
      const int v = labels(b, k);
      if (v < -1 || v > 1) {
        throw ValidationError("label value " + std::to_string(v) + " at row " + std::to_string(b) +
                              ", AU" + std::to_string(kAuIds[static_cast<std::size_t>(k)]) +
                              " is outside {-1, 0, 1}");
      }
    }
  }
}

LabelMask build_mask(const LabelVector& labels) {
  validate_labels(labels);
  return (labels != kDummyLabel).cast<int>();
}

MaskMatrix build_mask_matrix(const Eigen::Ref<const LabelMatrix>& labels) {
  validate_labels(labels);
  return (labels != kDummyLabel).cast<int>();
}

LabelVector fill_dummy(const std::map<int, int>& partial_labels, const DatasetCoverage& coverage) {
  coverage.validate();
  LabelVector out = LabelVector::Constant(kDummyLabel);
  for (const int au : coverage.covered_aus) out(require_au_index(au)) = 0;
  for (const auto& [au, value] : partial_labels) {
    const Eigen::Index idx = require_au_index(au);
    if (!coverage.covered_aus.contains(au)) {
      throw ValidationError("label for AU" + std::to_string(au) + " supplied but dataset '" +
                            coverage.dataset_id + "' does not cover it");
    }
    if (value != 0 && value != 1) {
      throw ValidationError("label for AU" + std::to_string(au) + " must be 0 or 1, got " +
                            std::to_string(value));
    }
    out(idx) = value;
  }
  return out;
}

}  // namespace aumask
