#pragma once

// Rule-based interval labels for pain, acuity and acute brain dysfunction.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace aumask {

struct PhenotypeConfig {
  /// Scores at or above this are high pain.
  int pain_threshold = 4;
  /// Pain intervals are the closed window [ts - w, ts + w].
  double pain_half_window = 3600.0;
  double acuity_width = 4 * 3600.0;
  double abd_width = 12 * 3600.0;
  /// Coma when any RASS <= this.
  int coma_rass_max = -4;
  /// Coma when any GCS <= this.
  int coma_gcs_max = 8;

  void validate() const;
};

enum class PainCategory { kLow, kHigh };
enum class Therapy { kCrrt, kMechanicalVentilation, kVasopressor, kBloodTransfusion };
enum class CamResult { kPositive, kNegative, kUnassessable };
enum class Acuity { kStable, kUnstable };
enum class AbdState { kNormal, kDelirium, kComa, kUnlabeled };
enum class PhenotypeKind { kPain, kAcuity, kAbd };

std::string_view to_string(PainCategory c);
std::string_view to_string(Therapy t);
std::string_view to_string(CamResult c);
std::string_view to_string(Acuity a);
std::string_view to_string(AbdState s);
std::string_view to_string(PhenotypeKind k);
Therapy parse_therapy(std::string_view name);
CamResult parse_cam(std::string_view name);
PhenotypeKind parse_phenotype_kind(std::string_view name);

struct PainEvent {
  std::string patient_id;
  double timestamp = 0.0;
  int score = 0;
};

struct TherapyInterval {
  std::string patient_id;
  Therapy therapy = Therapy::kCrrt;
  double start = 0.0;
  double end = 0.0;
};

struct AssessmentEvent {
  std::string patient_id;
  double timestamp = 0.0;
  std::optional<CamResult> cam;
  std::optional<int> rass;
  std::optional<int> gcs;
};

struct Stay {
  std::string patient_id;
  double admission = 0.0;
  double discharge = 0.0;
};

struct Interval {
  double start = 0.0;
  double end = 0.0;
};

struct PhenotypeInterval {
  std::string patient_id;
  PhenotypeKind kind = PhenotypeKind::kPain;
  double start = 0.0;
  double end = 0.0;
  std::string label;
};

/// Low iff score < threshold. Scores outside 0..10 are rejected.
PainCategory pain_category(int score, int threshold = 4);

/// Half-open intervals [admission + k w, admission + (k + 1) w) clipped at
/// discharge; the final partial interval is kept.
std::vector<Interval> interval_grid(double admission, double discharge, double width);

/// Unstable iff any therapy overlaps the half-open interval. A zero-length
/// therapy counts when its instant lies inside the interval. Therapies of
/// other patients must be filtered out by the caller.
Acuity acuity_label(const Interval& interval, std::span<const TherapyInterval> therapies);

/// Worst state among assessments with start <= timestamp < end:
/// coma > delirium > normal; unlabeled when there are none.
AbdState abd_label(const Interval& interval, std::span<const AssessmentEvent> assessments,
                   const PhenotypeConfig& config = {});

/// All pain, acuity and ABD intervals, sorted by patient, kind and start.
/// Events for patients without a stay are rejected.
std::vector<PhenotypeInterval> compute_phenotypes(std::span<const Stay> stays, std::span<const PainEvent> pain,
                                                  std::span<const TherapyInterval> therapies,
                                                  std::span<const AssessmentEvent> assessments,
                                                  const PhenotypeConfig& config = {});

// Input files (comma-separated with header):
//   stays:       patient_id, admission, discharge
//   pain:        patient_id, timestamp, score
//   therapies:   patient_id, therapy, start, end
//   assessments: patient_id, timestamp, and any of cam, rass, gcs (cells may be empty)
std::vector<Stay> read_stays(const std::filesystem::path& path);
std::vector<PainEvent> read_pain_events(const std::filesystem::path& path);
std::vector<TherapyInterval> read_therapies(const std::filesystem::path& path);
std::vector<AssessmentEvent> read_assessments(const std::filesystem::path& path);

// Output file: patient_id, kind, start, end, label.
std::string format_phenotypes(std::span<const PhenotypeInterval> intervals);
void write_phenotypes(const std::filesystem::path& path, std::span<const PhenotypeInterval> intervals);
std::vector<PhenotypeInterval> read_phenotypes(const std::filesystem::path& path);

}  // namespace aumask
