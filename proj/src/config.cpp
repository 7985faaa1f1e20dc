#include "aumask/config.hpp"

#include "aumask/checkpoint.hpp"
#include "aumask/error.hpp"
#include "aumask/io.hpp"

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

namespace aumask {
namespace {

using nlohmann::json;

void require_object(const json& j, std::string_view where) {
  if (!j.is_object()) throw ValidationError(std::string(where) + " must be a JSON object");
}

void reject_unknown(const json& j, std::initializer_list<std::string_view> keys, std::string_view where) {
  for (const auto& [key, value] : j.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ValidationError("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return (base / p).lexically_normal();
}

void take_path(const json& j, const char* key, const std::filesystem::path& base, std::filesystem::path& out) {
  if (j.contains(key)) out = resolve(base, j.at(key).get<std::string>());
}

TrainConfig train_from_json(const json& j) {
  require_object(j, "train");
  reject_unknown(j,
                 {"learning_rate", "beta1", "beta2", "epsilon", "epochs", "batch_size", "early_stop_patience",
                  "early_stop_min_delta", "workers", "threaded"},
                 "train");
  TrainConfig c;
  take(j, "learning_rate", c.learning_rate);
  take(j, "beta1", c.beta1);
  take(j, "beta2", c.beta2);
  take(j, "epsilon", c.epsilon);
  take(j, "epochs", c.epochs);
  take(j, "batch_size", c.batch_size);
  take(j, "early_stop_patience", c.early_stop_patience);
  take(j, "early_stop_min_delta", c.early_stop_min_delta);
  take(j, "workers", c.workers);
  take(j, "threaded", c.threaded);
  return c;
}

PhenotypeConfig phenotype_from_json(const json& j) {
  require_object(j, "phenotype");
  reject_unknown(j,
                 {"pain_threshold", "pain_half_window", "acuity_width", "abd_width", "coma_rass_max",
                  "coma_gcs_max"},
                 "phenotype");
  PhenotypeConfig c;
  take(j, "pain_threshold", c.pain_threshold);
  take(j, "pain_half_window", c.pain_half_window);
  take(j, "acuity_width", c.acuity_width);
  take(j, "abd_width", c.abd_width);
  take(j, "coma_rass_max", c.coma_rass_max);
  take(j, "coma_gcs_max", c.coma_gcs_max);
  return c;
}

Thresholds thresholds_from_json(const json& j) {
  require_object(j, "thresholds");
  reject_unknown(j, {"prediction", "inclusion_f1", "inclusion_accuracy", "alpha"}, "thresholds");
  Thresholds t;
  take(j, "prediction", t.prediction);
  take(j, "inclusion_f1", t.inclusion_f1);
  take(j, "inclusion_accuracy", t.inclusion_accuracy);
  take(j, "alpha", t.alpha);
  return t;
}

AssociationSettings association_from_json(const json& j) {
  require_object(j, "association");
  reject_unknown(j, {"encoding", "max_iterations", "gradient_tolerance"}, "association");
  AssociationSettings a;
  if (j.contains("encoding")) {
    const auto name = j.at("encoding").get<std::string>();
    if (name == "proportion") a.encoding = PredictorEncoding::kProportion;
    else if (name == "any_frame") a.encoding = PredictorEncoding::kAnyFrame;
    else throw ValidationError("association.encoding must be 'proportion' or 'any_frame', not '" + name + "'");
  }
  take(j, "max_iterations", a.glmm.max_iterations);
  take(j, "gradient_tolerance", a.glmm.gradient_tolerance);
  return a;
}

void require_file(const std::filesystem::path& p, std::string_view what) {
  if (!p.empty() && !std::filesystem::is_regular_file(p)) {
    throw IoError(std::string(what) + " not found: " + p.string());
  }
}

bool in_unit(double x) { return x >= 0.0 && x <= 1.0; }

}  // namespace

void Thresholds::validate() const {
  if (!in_unit(prediction)) throw ValidationError("thresholds.prediction must lie in [0, 1]");
  if (!in_unit(inclusion_f1)) throw ValidationError("thresholds.inclusion_f1 must lie in [0, 1]");
  if (!in_unit(inclusion_accuracy)) throw ValidationError("thresholds.inclusion_accuracy must lie in [0, 1]");
  if (!in_unit(alpha)) throw ValidationError("thresholds.alpha must lie in [0, 1]");
}

void PipelineConfig::set_seed(std::uint64_t value) {
  seed = value;
  model.seed = value;
  train.seed = value;
}

void PipelineConfig::validate() const {
  model.validate();
  train.validate();
  thresholds.validate();
  phenotype.validate();
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValidationError("test_fraction must lie in (0, 1)");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ValidationError("validation_fraction must lie in [0, 1)");
  }
  if (align_size < 0) throw ValidationError("align_size must be nonnegative");
  if (association.glmm.max_iterations < 1) throw ValidationError("association.max_iterations must be positive");
  if (!(association.glmm.gradient_tolerance > 0.0)) {
    throw ValidationError("association.gradient_tolerance must be positive");
  }
  if (output_dir.empty()) throw ValidationError("output_dir must not be empty");
  for (const auto& c : coverages) c.validate();
  for (const auto& d : datasets) require_file(d.manifest, "dataset manifest");
  require_file(frames, "frame manifest");
  require_file(landmarks, "landmark manifest");
  require_file(ehr.stays, "stays file");
  require_file(ehr.pain, "pain file");
  require_file(ehr.therapies, "therapies file");
  require_file(ehr.assessments, "assessments file");
}

PipelineConfig parse_pipeline_config(const json& j, const std::filesystem::path& base_dir) {
  require_object(j, "config");
  reject_unknown(j,
                 {"seed", "output_dir", "datasets", "coverage", "coverage_file", "test_fraction",
                  "validation_fraction", "frames", "landmarks", "align_size", "ehr", "model", "train",
                  "thresholds", "phenotype", "association"},
                 "config");
  PipelineConfig c;
  try {
    take_path(j, "output_dir", base_dir, c.output_dir);
    if (!j.contains("output_dir")) c.output_dir = resolve(base_dir, c.output_dir);
    if (j.contains("datasets")) {
      for (const auto& d : j.at("datasets")) {
        require_object(d, "datasets entry");
        reject_unknown(d, {"manifest", "intensity"}, "datasets entry");
        if (!d.contains("manifest")) throw ValidationError("datasets entry needs a 'manifest'");
        DatasetSource src;
        take_path(d, "manifest", base_dir, src.manifest);
        take(d, "intensity", src.intensity);
        c.datasets.push_back(std::move(src));
      }
    }
    if (j.contains("coverage_file")) {
      const auto p = resolve(base_dir, j.at("coverage_file").get<std::string>());
      require_file(p, "coverage file");
      c.coverages = merge_coverages(c.coverages, load_coverage_file(p));
    }
    if (j.contains("coverage")) c.coverages = merge_coverages(c.coverages, parse_coverage_json(j.at("coverage").dump()));
    take(j, "test_fraction", c.test_fraction);
    take(j, "validation_fraction", c.validation_fraction);
    take_path(j, "frames", base_dir, c.frames);
    take_path(j, "landmarks", base_dir, c.landmarks);
    take(j, "align_size", c.align_size);
    if (j.contains("ehr")) {
      const auto& e = j.at("ehr");
      require_object(e, "ehr");
      reject_unknown(e, {"stays", "pain", "therapies", "assessments"}, "ehr");
      take_path(e, "stays", base_dir, c.ehr.stays);
      take_path(e, "pain", base_dir, c.ehr.pain);
      take_path(e, "therapies", base_dir, c.ehr.therapies);
      take_path(e, "assessments", base_dir, c.ehr.assessments);
    }
    if (j.contains("model")) {
      if (j.at("model").contains("seed")) throw ValidationError("set the seed at the top level, not under 'model'");
      c.model = model_config_from_json(j.at("model"));
    }
    if (j.contains("train")) c.train = train_from_json(j.at("train"));
    if (j.contains("thresholds")) c.thresholds = thresholds_from_json(j.at("thresholds"));
    if (j.contains("phenotype")) c.phenotype = phenotype_from_json(j.at("phenotype"));
    if (j.contains("association")) c.association = association_from_json(j.at("association"));
    std::uint64_t seed = 0;
    take(j, "seed", seed);
    c.set_seed(seed);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed config: ") + e.what());
  }
  return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
  try {
    return parse_pipeline_config(j, path.parent_path());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace aumask
