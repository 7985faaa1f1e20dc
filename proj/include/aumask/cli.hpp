#pragma once

// Pipeline commands over files. Each command reads its inputs from the
// config and the output directory, validates them before doing any work,
// and writes its outputs atomically into the output directory.

#include "aumask/config.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace aumask::cli {

/// File names inside the output directory.
struct OutputLayout {
  std::filesystem::path dir;

  std::filesystem::path merged() const { return dir / "merged.csv"; }
  std::filesystem::path train() const { return dir / "train.csv"; }
  std::filesystem::path test() const { return dir / "test.csv"; }
  std::filesystem::path checkpoint() const { return dir / "checkpoint.bin"; }
  std::filesystem::path run_log() const { return dir / "run_log.jsonl"; }
  std::filesystem::path metrics() const { return dir / "metrics.csv"; }
  std::filesystem::path detections() const { return dir / "detections.csv"; }
  std::filesystem::path phenotypes() const { return dir / "phenotypes.csv"; }
  std::filesystem::path association() const { return dir / "association.csv"; }
  std::filesystem::path presence() const { return dir / "presence.csv"; }
  std::filesystem::path aligned() const { return dir / "aligned"; }
};

struct DatasetSummary {
  std::string dataset_id;
  std::int64_t records = 0;
  /// AUs the coverage table lists for the dataset.
  int covered = 0;
  /// Largest number of annotated AUs in one record.
  int max_row_mask = 0;
  std::int64_t mask_sum = 0;
};

struct MergeSummary {
  std::int64_t records = 0;
  std::vector<DatasetSummary> datasets;
};

MergeSummary cmd_merge(const PipelineConfig& config, std::ostream& log);
void cmd_split(const PipelineConfig& config, std::ostream& log);
void cmd_align(const PipelineConfig& config, std::ostream& log);
void cmd_train(const PipelineConfig& config, std::ostream& log);
/// An empty `checkpoint` means the one in the output directory.
void cmd_eval(const PipelineConfig& config, const std::filesystem::path& checkpoint, std::ostream& log);
void cmd_infer(const PipelineConfig& config, const std::filesystem::path& checkpoint, std::ostream& log);
void cmd_phenotype(const PipelineConfig& config, std::ostream& log);
/// Contrasts that cannot be fitted are reported on `warn` and left out.
void cmd_associate(const PipelineConfig& config, std::ostream& log, std::ostream& warn);

/// Parses arguments and runs one subcommand. Returns 0 on success, 1 for
/// usage, validation and file errors, 2 for numeric and other runtime errors.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace aumask::cli
