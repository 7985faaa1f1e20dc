#pragma once

// Pipeline configuration file (JSON). Relative paths are resolved against
// the directory holding the config file.
//
// {
//   "seed": 0,
//   "output_dir": "out",
//   "datasets": [{"manifest": "a.csv", "intensity": false}, ...],
//   "coverage": [{"dataset_id": "A", "covered_aus": [1, 2]}],   optional
//   "coverage_file": "coverage.json",                           optional
//   "test_fraction": 0.2,
//   "validation_fraction": 0.0,
//   "frames": "frames.csv",
//   "landmarks": "landmarks.csv",
//   "align_size": 0,                 0 means model.image_size
//   "ehr": {"stays": ..., "pain": ..., "therapies": ..., "assessments": ...},
//   "model": {ModelConfig keys except seed},
//   "train": {TrainConfig keys except seed},
//   "thresholds": {"prediction": 0.5, "inclusion_f1": 0.5,
//                  "inclusion_accuracy": 0.8, "alpha": 0.05},
//   "phenotype": {PhenotypeConfig keys},
//   "association": {"encoding": "proportion" | "any_frame",
//                   "max_iterations": 200, "gradient_tolerance": 1e-7}
// }
//
// Every key is optional. The single top-level seed drives the split, the
// parameter initialization and the batch order.

#include "aumask/association.hpp"
#include "aumask/labelspace.hpp"
#include "aumask/model.hpp"
#include "aumask/phenotypes.hpp"
#include "aumask/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace aumask {

struct DatasetSource {
  std::filesystem::path manifest;
  /// AU cells are 0..5 intensities to binarize.
  bool intensity = false;
};

struct EhrPaths {
  std::filesystem::path stays;
  std::filesystem::path pain;
  std::filesystem::path therapies;
  std::filesystem::path assessments;
};

struct Thresholds {
  double prediction = 0.5;
  double inclusion_f1 = 0.5;
  double inclusion_accuracy = 0.8;
  double alpha = 0.05;

  void validate() const;
};

struct AssociationSettings {
  PredictorEncoding encoding = PredictorEncoding::kProportion;
  GlmmOptions glmm;
};

struct PipelineConfig {
  std::filesystem::path output_dir = "out";
  std::vector<DatasetSource> datasets;
  std::vector<DatasetCoverage> coverages = builtin_coverages();
  double test_fraction = 0.2;
  /// Share of training subjects held out for early stopping; 0 disables.
  double validation_fraction = 0.0;
  std::filesystem::path frames;
  std::filesystem::path landmarks;
  int align_size = 0;
  EhrPaths ehr;
  ModelConfig model;
  TrainConfig train;
  Thresholds thresholds;
  PhenotypeConfig phenotype;
  AssociationSettings association;
  std::uint64_t seed = 0;

  /// Copies the seed into the model and trainer settings.
  void set_seed(std::uint64_t value);
  int crop_size() const { return align_size > 0 ? align_size : model.image_size; }
  /// Range checks plus existence of every configured input file.
  void validate() const;
};

PipelineConfig parse_pipeline_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

}  // namespace aumask
