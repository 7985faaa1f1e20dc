#pragma once

// Ten hand-built ICU stays with the interval labels worked out by hand.

#include "aumask/phenotypes.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace aumask::fixtures {

struct Vignette {
  std::vector<Stay> stays;
  std::vector<PainEvent> pain;
  std::vector<TherapyInterval> therapies;
  std::vector<AssessmentEvent> assessments;
  /// Sorted by patient, kind, start.
  std::vector<PhenotypeInterval> expected;
};

Vignette ehr_vignette();

/// Writes stays.csv, pain.csv, therapies.csv and assessments.csv into `dir`.
void write_vignette_files(const Vignette& v, const std::filesystem::path& dir);

}  // namespace aumask::fixtures
