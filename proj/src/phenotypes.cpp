#include "aumask/phenotypes.hpp"

#include "aumask/error.hpp"
#include "aumask/io.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

namespace aumask {
namespace {

double parse_time(const io::CsvTable& t, std::size_t r, int col, std::string_view name) {
  const double v = io::parse_double(t.rows[r][static_cast<std::size_t>(col)], t, r, name);
  if (!std::isfinite(v)) throw ValidationError(t.where(r) + ": " + std::string(name) + " must be finite");
  return v;
}

const std::string& cell(const io::CsvTable& t, std::size_t r, int col) { return t.rows[r][static_cast<std::size_t>(col)]; }

std::string require_patient(const io::CsvTable& t, std::size_t r, int col) {
  const std::string& p = cell(t, r, col);
  if (p.empty()) throw ValidationError(t.where(r) + ": empty patient_id");
  return p;
}

}  // namespace

void PhenotypeConfig::validate() const {
  if (pain_threshold < 0 || pain_threshold > 11) throw ValidationError("pain_threshold must lie in 0..11");
  if (!(pain_half_window >= 0.0)) throw ValidationError("pain_half_window must be nonnegative");
  if (!(acuity_width > 0.0) || !(abd_width > 0.0)) throw ValidationError("interval widths must be positive");
}

std::string_view to_string(PainCategory c) { return c == PainCategory::kLow ? "low" : "high"; }

std::string_view to_string(Therapy t) {
  switch (t) {
    case Therapy::kCrrt: return "CRRT";
    case Therapy::kMechanicalVentilation: return "mechanical_ventilation";
    case Therapy::kVasopressor: return "vasopressor";
    case Therapy::kBloodTransfusion: return "blood_transfusion";
  }
  return "";
}

std::string_view to_string(CamResult c) {
  switch (c) {
    case CamResult::kPositive: return "positive";
    case CamResult::kNegative: return "negative";
    case CamResult::kUnassessable: return "unassessable";
  }
  return "";
}

std::string_view to_string(Acuity a) { return a == Acuity::kStable ? "stable" : "unstable"; }

std::string_view to_string(AbdState s) {
  switch (s) {
    case AbdState::kNormal: return "normal";
    case AbdState::kDelirium: return "delirium";
    case AbdState::kComa: return "coma";
    case AbdState::kUnlabeled: return "unlabeled";
  }
  return "";
}

std::string_view to_string(PhenotypeKind k) {
  switch (k) {
    case PhenotypeKind::kPain: return "pain";
    case PhenotypeKind::kAcuity: return "acuity";
    case PhenotypeKind::kAbd: return "abd";
  }
  return "";
}

Therapy parse_therapy(std::string_view name) {
  for (const Therapy t : {Therapy::kCrrt, Therapy::kMechanicalVentilation, Therapy::kVasopressor,
                          Therapy::kBloodTransfusion}) {
    if (name == to_string(t)) return t;
  }
  throw ValidationError("unknown therapy '" + std::string(name) + "'");
}

CamResult parse_cam(std::string_view name) {
  for (const CamResult c : {CamResult::kPositive, CamResult::kNegative, CamResult::kUnassessable}) {
    if (name == to_string(c)) return c;
  }
  throw ValidationError("unknown CAM result '" + std::string(name) + "'");
}

PhenotypeKind parse_phenotype_kind(std::string_view name) {
  for (const PhenotypeKind k : {PhenotypeKind::kPain, PhenotypeKind::kAcuity, PhenotypeKind::kAbd}) {
    if (name == to_string(k)) return k;
  }
  throw ValidationError("unknown phenotype kind '" + std::string(name) + "'");
}

PainCategory pain_category(int score, int threshold) {
  if (score < 0 || score > 10) throw ValidationError("pain score " + std::to_string(score) + " is outside 0..10");
  return score < threshold ? PainCategory::kLow : PainCategory::kHigh;
}

std::vector<Interval> interval_grid(double admission, double discharge, double width) {
  if (!std::isfinite(admission) || !std::isfinite(discharge)) throw ValidationError("stay times must be finite");
  if (!(admission < discharge)) throw ValidationError("admission must precede discharge");
  if (!(width > 0.0)) throw ValidationError("interval width must be positive");
  std::vector<Interval> out;
  for (std::int64_t k = 0;; ++k) {
    // Multiplying instead of accumulating keeps the edges exact for integer widths.
    const double start = admission + static_cast<double>(k) * width;
    if (!(start < discharge)) break;
    out.push_back({start, std::min(discharge, admission + static_cast<double>(k + 1) * width)});
  }
  return out;
}

Acuity acuity_label(const Interval& interval, std::span<const TherapyInterval> therapies) {
  for (const auto& t : therapies) {
    if (t.end < t.start) throw ValidationError("therapy for patient " + t.patient_id + " ends before it starts");
    const bool overlaps = t.start == t.end ? (interval.start <= t.start && t.start < interval.end)
                                           : (t.start < interval.end && interval.start < t.end);
    if (overlaps) return Acuity::kUnstable;
  }
  return Acuity::kStable;
}

AbdState abd_label(const Interval& interval, std::span<const AssessmentEvent> assessments,
                   const PhenotypeConfig& config) {
  AbdState state = AbdState::kUnlabeled;
  auto rank = [](AbdState s) {
    switch (s) {
      case AbdState::kUnlabeled: return 0;
      case AbdState::kNormal: return 1;
      case AbdState::kDelirium: return 2;
      case AbdState::kComa: return 3;
    }
    return 0;
  };
  for (const auto& a : assessments) {
    if (!(interval.start <= a.timestamp && a.timestamp < interval.end)) continue;
    AbdState s = AbdState::kNormal;
    if ((a.rass && *a.rass <= config.coma_rass_max) || (a.gcs && *a.gcs <= config.coma_gcs_max)) {
      s = AbdState::kComa;
    } else if (a.cam == CamResult::kPositive) {
      s = AbdState::kDelirium;
    }
    if (rank(s) > rank(state)) state = s;
  }
  return state;
}

std::vector<PhenotypeInterval> compute_phenotypes(std::span<const Stay> stays, std::span<const PainEvent> pain,
                                                  std::span<const TherapyInterval> therapies,
                                                  std::span<const AssessmentEvent> assessments,
                                                  const PhenotypeConfig& config) {
  config.validate();
  std::map<std::string, const Stay*> by_patient;
  for (const auto& s : stays) {
    if (!by_patient.emplace(s.patient_id, &s).second) {
      throw ValidationError("patient " + s.patient_id + " has more than one stay");
    }
  }
  auto require_stay = [&](const std::string& p, std::string_view what) {
    if (!by_patient.contains(p)) {
      throw ValidationError(std::string(what) + " for patient " + p + " has no matching stay");
    }
  };
  std::map<std::string, std::vector<TherapyInterval>> therapy_of;
  for (const auto& t : therapies) {
    require_stay(t.patient_id, "therapy");
    therapy_of[t.patient_id].push_back(t);
  }
  std::map<std::string, std::vector<AssessmentEvent>> assess_of;
  for (const auto& a : assessments) {
    require_stay(a.patient_id, "assessment");
    assess_of[a.patient_id].push_back(a);
  }

  std::vector<PhenotypeInterval> out;
  for (const auto& e : pain) {
    require_stay(e.patient_id, "pain score");
    out.push_back({e.patient_id, PhenotypeKind::kPain, e.timestamp - config.pain_half_window,
                   e.timestamp + config.pain_half_window,
                   std::string(to_string(pain_category(e.score, config.pain_threshold)))});
  }
  for (const auto& [patient, stay] : by_patient) {
    const auto& th = therapy_of[patient];
    for (const auto& iv : interval_grid(stay->admission, stay->discharge, config.acuity_width)) {
      out.push_back({patient, PhenotypeKind::kAcuity, iv.start, iv.end, std::string(to_string(acuity_label(iv, th)))});
    }
    const auto& as = assess_of[patient];
    for (const auto& iv : interval_grid(stay->admission, stay->discharge, config.abd_width)) {
      out.push_back({patient, PhenotypeKind::kAbd, iv.start, iv.end, std::string(to_string(abd_label(iv, as, config)))});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const PhenotypeInterval& a, const PhenotypeInterval& b) {
    return std::tie(a.patient_id, a.kind, a.start) < std::tie(b.patient_id, b.kind, b.start);
  });
  return out;
}

std::vector<Stay> read_stays(const std::filesystem::path& path) {
  const auto t = io::read_csv(path);
  io::check_columns(t, {"patient_id", "admission", "discharge"});
  const int cp = t.require_column("patient_id"), ca = t.require_column("admission"), cd = t.require_column("discharge");
  std::vector<Stay> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    Stay s{require_patient(t, r, cp), parse_time(t, r, ca, "admission"), parse_time(t, r, cd, "discharge")};
    if (!(s.admission < s.discharge)) throw ValidationError(t.where(r) + ": admission must precede discharge");
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<PainEvent> read_pain_events(const std::filesystem::path& path) {
  const auto t = io::read_csv(path);
  io::check_columns(t, {"patient_id", "timestamp", "score"});
  const int cp = t.require_column("patient_id"), ct = t.require_column("timestamp"), cs = t.require_column("score");
  std::vector<PainEvent> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    PainEvent e{require_patient(t, r, cp), parse_time(t, r, ct, "timestamp"),
                static_cast<int>(io::parse_int(cell(t, r, cs), t, r, "score"))};
    if (e.score < 0 || e.score > 10) throw ValidationError(t.where(r) + ": pain score must lie in 0..10");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<TherapyInterval> read_therapies(const std::filesystem::path& path) {
  const auto t = io::read_csv(path);
  io::check_columns(t, {"patient_id", "therapy", "start", "end"});
  const int cp = t.require_column("patient_id"), cth = t.require_column("therapy");
  const int cs = t.require_column("start"), ce = t.require_column("end");
  std::vector<TherapyInterval> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    TherapyInterval th;
    th.patient_id = require_patient(t, r, cp);
    try {
      th.therapy = parse_therapy(cell(t, r, cth));
    } catch (const ValidationError& e) {
      throw ValidationError(t.where(r) + ": " + e.what());
    }
    th.start = parse_time(t, r, cs, "start");
    th.end = parse_time(t, r, ce, "end");
    if (th.end < th.start) throw ValidationError(t.where(r) + ": therapy ends before it starts");
    out.push_back(std::move(th));
  }
  return out;
}

std::vector<AssessmentEvent> read_assessments(const std::filesystem::path& path) {
  const auto t = io::read_csv(path);
  io::check_columns(t, {"patient_id", "timestamp", "cam", "rass", "gcs"});
  const int cp = t.require_column("patient_id"), ct = t.require_column("timestamp");
  const int ccam = t.column("cam"), crass = t.column("rass"), cgcs = t.column("gcs");
  std::vector<AssessmentEvent> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    AssessmentEvent a;
    a.patient_id = require_patient(t, r, cp);
    a.timestamp = parse_time(t, r, ct, "timestamp");
    if (ccam >= 0 && !cell(t, r, ccam).empty()) {
      try {
        a.cam = parse_cam(cell(t, r, ccam));
      } catch (const ValidationError& e) {
        throw ValidationError(t.where(r) + ": " + e.what());
      }
    }
    if (crass >= 0 && !cell(t, r, crass).empty()) {
      a.rass = static_cast<int>(io::parse_int(cell(t, r, crass), t, r, "rass"));
      if (*a.rass < -5 || *a.rass > 4) throw ValidationError(t.where(r) + ": RASS must lie in -5..4");
    }
    if (cgcs >= 0 && !cell(t, r, cgcs).empty()) {
      a.gcs = static_cast<int>(io::parse_int(cell(t, r, cgcs), t, r, "gcs"));
      if (*a.gcs < 3 || *a.gcs > 15) throw ValidationError(t.where(r) + ": GCS must lie in 3..15");
    }
    out.push_back(std::move(a));
  }
  return out;
}

std::string format_phenotypes(std::span<const PhenotypeInterval> intervals) {
  std::string out = "patient_id,kind,start,end,label\n";
  for (const auto& p : intervals) {
    out += p.patient_id + ',' + std::string(to_string(p.kind)) + ',' + io::format_double(p.start) + ',' +
           io::format_double(p.end) + ',' + p.label + '\n';
  }
  return out;
}

void write_phenotypes(const std::filesystem::path& path, std::span<const PhenotypeInterval> intervals) {
  io::write_file_atomic(path, format_phenotypes(intervals));
}

std::vector<PhenotypeInterval> read_phenotypes(const std::filesystem::path& path) {
  static const std::map<PhenotypeKind, std::set<std::string>> vocab = {
      {PhenotypeKind::kPain, {"low", "high"}},
      {PhenotypeKind::kAcuity, {"stable", "unstable"}},
      {PhenotypeKind::kAbd, {"normal", "delirium", "coma", "unlabeled"}},
  };
  const auto t = io::read_csv(path);
  io::check_columns(t, {"patient_id", "kind", "start", "end", "label"});
  const int cp = t.require_column("patient_id"), ck = t.require_column("kind"), cs = t.require_column("start");
  const int ce = t.require_column("end"), cl = t.require_column("label");
  std::vector<PhenotypeInterval> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    PhenotypeInterval p;
    p.patient_id = require_patient(t, r, cp);
    try {
      p.kind = parse_phenotype_kind(cell(t, r, ck));
    } catch (const ValidationError& e) {
      throw ValidationError(t.where(r) + ": " + e.what());
    }
    p.start = parse_time(t, r, cs, "start");
    p.end = parse_time(t, r, ce, "end");
    p.label = cell(t, r, cl);
    if (!vocab.at(p.kind).contains(p.label)) {
      throw ValidationError(t.where(r) + ": label '" + p.label + "' is not valid for kind " +
                            std::string(to_string(p.kind)));
    }
    if (p.end < p.start) throw ValidationError(t.where(r) + ": interval ends before it starts");
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace aumask
