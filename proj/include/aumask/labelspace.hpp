#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace aumask {

inline constexpr Eigen::Index kNumAus = 18;

/// Ordered action-unit catalog. Every label row, mask row and logit row is
/// positional against this order.
inline constexpr std::array<int, kNumAus> kAuIds = {1,  2,  4,  6,  7,  9,  10, 12, 14,
                                                    15, 17, 20, 23, 24, 25, 26, 27, 43};

/// Ternary labels: -1 not annotated in the source dataset, 0 absent, 1 present.
using LabelVector = Eigen::Array<int, 1, kNumAus>;
/// 1 where the matching label is annotated, 0 where it is a dummy.
using LabelMask = Eigen::Array<int, 1, kNumAus>;

using LabelMatrix = Eigen::Array<int, Eigen::Dynamic, kNumAus, Eigen::RowMajor>;
using MaskMatrix = Eigen::Array<int, Eigen::Dynamic, kNumAus, Eigen::RowMajor>;

inline constexpr int kDummyLabel = -1;

/// Catalog position of an AU id, or nullopt when the id is not tracked.
std::optional<Eigen::Index> au_index(int au_id) noexcept;
/// Catalog position of an AU id; throws ValidationError for unknown ids.
Eigen::Index require_au_index(int au_id);
std::string_view au_name(int au_id);

struct DatasetCoverage {
  std::string dataset_id;
  std::set<int> covered_aus;

  /// Throws ValidationError when an id is outside the catalog.
  void validate() const;
  /// 0/1 indicator of covered_aus in catalog order.
  LabelMask indicator() const;
};

/// Built-in coverage for BP4D, DISFA, UNBC and AU-ICU restricted to the catalog.
const std::vector<DatasetCoverage>& builtin_coverages();

/// JSON array of {"dataset_id": str, "covered_aus": [int...]}.
std::vector<DatasetCoverage> load_coverage_file(const std::filesystem::path& path);
std::vector<DatasetCoverage> parse_coverage_json(std::string_view text);

/// Built-ins with entries of the same dataset_id replaced by `overrides`.
std::vector<DatasetCoverage> merge_coverages(const std::vector<DatasetCoverage>& base,
                                             const std::vector<DatasetCoverage>& overrides);

const DatasetCoverage* find_coverage(const std::vector<DatasetCoverage>& table,
                                     std::string_view dataset_id) noexcept;

void validate_labels(const Eigen::Ref<const LabelMatrix>& labels);

LabelMask build_mask(const LabelVector& labels);
MaskMatrix build_mask_matrix(const Eigen::Ref<const LabelMatrix>& labels);

/// Expands a sparse AU->{0,1} map to a full label row. Covered AUs missing from
/// `partial_labels` default to 0; uncovered AUs get the dummy label.
LabelVector fill_dummy(const std::map<int, int>& partial_labels, const DatasetCoverage& coverage);

}  // namespace aumask
