#pragma once

#include "aumask/io.hpp"
#include "aumask/labelspace.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace aumask {

struct SampleRecord {
  std::string sample_id;
  std::string dataset_id;
  std::string subject_id;
  std::string image_ref;
  LabelVector labels = LabelVector::Constant(kDummyLabel);
  std::optional<double> timestamp;
};

struct FrameEvent {
  std::string frame_id;
  std::string video_id;
  std::string patient_id;
  double timestamp = 0.0;
  /// Empty when the manifest has no image_ref column.
  std::string image_ref;
};

/// DISFA-style intensity (0..5) to presence: 1 iff intensity >= 2.
int disfa_binarize(int intensity);

struct ManifestOptions {
  /// AU columns hold 0..5 intensities that are binarized on load.
  bool intensity = false;
};

// Dataset manifest (comma-separated, header row):
//   sample_id, dataset_id, subject_id, image_ref   required
//   timestamp                                      optional, seconds
//   au<k>                                          one per catalog AU, optional
// An AU cell that is empty or -1 means "not annotated"; a missing AU column
// means the same for every row. Unknown columns are rejected. Relative
// image_ref values are resolved against `base_dir`.
std::vector<SampleRecord> parse_manifest(const io::CsvTable& table, const ManifestOptions& options,
                                         const std::filesystem::path& base_dir = {});
std::vector<SampleRecord> read_manifest(const std::filesystem::path& path,
                                        const ManifestOptions& options = {});
/// Writes all 18 AU columns; the timestamp column appears when any record has one.
std::string format_manifest(std::span<const SampleRecord> records);
void write_manifest(const std::filesystem::path& path, std::span<const SampleRecord> records);

struct DatasetInput {
  std::vector<SampleRecord> records;
  DatasetCoverage coverage;
};

/// Concatenates datasets over the full catalog, filling uncovered AUs with the
/// dummy label. Throws ValidationError naming the record on a coverage
/// violation or a dataset_id that disagrees with the coverage entry.
std::vector<SampleRecord> merge_datasets(const std::vector<DatasetInput>& datasets);

struct SplitResult {
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> test;
};

/// Subject-disjoint split. Subjects are sorted, shuffled with `seed`, then
/// added to the test side whenever that moves the test record count closer to
/// round(test_fraction * records). Both sides are guaranteed nonempty.
SplitResult subject_split(std::span<const SampleRecord> records, double test_fraction,
                          std::uint64_t seed);

// Frame manifest: frame_id, video_id, patient_id, timestamp, and an optional
// image_ref column.
std::vector<FrameEvent> read_frame_manifest(const std::filesystem::path& path);
std::vector<FrameEvent> parse_frame_manifest(const io::CsvTable& table,
                                             const std::filesystem::path& base_dir = {});

/// Frames with |timestamp - pain_ts| <= half_window, in input order. The input
/// must be sorted by timestamp.
std::vector<FrameEvent> select_pain_window_frames(std::span<const FrameEvent> frames, double pain_ts,
                                                  double half_window = 3600.0);

/// Permutation of 0..n-1 from a Fisher-Yates shuffle driven by mt19937_64.
/// Platform independent, unlike std::shuffle.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

}  // namespace aumask
