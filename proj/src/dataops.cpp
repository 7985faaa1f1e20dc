#include "aumask/dataops.hpp"

#include "aumask/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

namespace aumask {
namespace {

const std::vector<std::string> kManifestColumns = {"sample_id", "dataset_id", "subject_id",
                                                   "image_ref", "timestamp"};
const std::vector<std::string> kFrameColumns = {"frame_id", "video_id", "patient_id", "timestamp",
                                                "image_ref"};

std::optional<int> au_column_id(std::string_view name) {
  if (name.size() < 3 || name.substr(0, 2) != "au") return std::nullopt;
  int id = 0;
  for (const char ch : name.substr(2)) {
    if (ch < '0' || ch > '9') return std::nullopt;
    id = id * 10 + (ch - '0');
    if (id > 1000) return std::nullopt;
  }
  return id;
}

bool is_au_column(std::string_view name) {
  const auto id = au_column_id(name);
  return id && au_index(*id).has_value();
}

std::string resolve_ref(const std::string& ref, const std::filesystem::path& base_dir) {
  if (ref.empty() || base_dir.empty()) return ref;
  const std::filesystem::path p(ref);
  if (p.is_absolute()) return ref;
  return (base_dir / p).lexically_normal().string();
}

std::filesystem::path parent_dir(const std::filesystem::path& file) {
  const auto parent = std::filesystem::absolute(file).parent_path();
  return parent.lexically_normal();
}

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  // Rejection sampling keeps the draw unbiased and platform independent.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

}  // namespace

int disfa_binarize(int intensity) {
  if (intensity < 0 || intensity > 5) {
    throw ValidationError("AU intensity " + std::to_string(intensity) + " is outside 0..5");
  }
  return intensity >= 2 ? 1 : 0;
}

std::vector<SampleRecord> parse_manifest(const io::CsvTable& table, const ManifestOptions& options,
                                         const std::filesystem::path& base_dir) {
  io::check_columns(table, kManifestColumns, &is_au_column);
  const int c_sample = table.require_column("sample_id");
  const int c_dataset = table.require_column("dataset_id");
  const int c_subject = table.require_column("subject_id");
  const int c_image = table.require_column("image_ref");
  const int c_time = table.column("timestamp");

  std::vector<std::pair<int, Eigen::Index>> au_cols;  // (column, catalog index)
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (const auto id = au_column_id(table.header[c]); id && is_au_column(table.header[c])) {
      au_cols.emplace_back(static_cast<int>(c), *au_index(*id));
    }
  }

  std::vector<SampleRecord> out;
  out.reserve(table.rows.size());
  std::set<std::string> seen;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    SampleRecord rec;
    rec.sample_id = row[static_cast<std::size_t>(c_sample)];
    rec.dataset_id = row[static_cast<std::size_t>(c_dataset)];
    rec.subject_id = row[static_cast<std::size_t>(c_subject)];
    rec.image_ref = resolve_ref(row[static_cast<std::size_t>(c_image)], base_dir);
    if (rec.sample_id.empty() || rec.dataset_id.empty() || rec.subject_id.empty()) {
      throw ValidationError(table.where(r) + ": sample_id, dataset_id and subject_id must be nonempty");
    }
    if (!seen.insert(rec.sample_id).second) {
      throw ValidationError(table.where(r) + ": duplicate sample_id '" + rec.sample_id + "'");
    }
    if (c_time >= 0 && !row[static_cast<std::size_t>(c_time)].empty()) {
      rec.timestamp = io::parse_double(row[static_cast<std::size_t>(c_time)], table, r, "timestamp");
    }
    for (const auto& [col, idx] : au_cols) {
      const std::string& cell = row[static_cast<std::size_t>(col)];
      if (cell.empty()) continue;
      const auto v = io::parse_int(cell, table, r, table.header[static_cast<std::size_t>(col)]);
      if (v == kDummyLabel) continue;
      if (options.intensity) {
        if (v < 0 || v > 5) {
          throw ValidationError(table.where(r) + ": intensity " + std::to_string(v) + " in column '" +
                                table.header[static_cast<std::size_t>(col)] + "' is outside 0..5");
        }
        rec.labels(idx) = disfa_binarize(static_cast<int>(v));
      } else {
        if (v != 0 && v != 1) {
          throw ValidationError(table.where(r) + ": label " + std::to_string(v) + " in column '" +
                                table.header[static_cast<std::size_t>(col)] + "' must be -1, 0 or 1");
        }
        rec.labels(idx) = static_cast<int>(v);
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<SampleRecord> read_manifest(const std::filesystem::path& path, const ManifestOptions& options) {
  return parse_manifest(io::read_csv(path), options, parent_dir(path));
}

std::string format_manifest(std::span<const SampleRecord> records) {
  const bool with_time = std::any_of(records.begin(), records.end(),
                                     [](const SampleRecord& r) { return r.timestamp.has_value(); });
  std::string out = "sample_id,dataset_id,subject_id,image_ref";
  if (with_time) out += ",timestamp";
  for (const int au : kAuIds) out += ",au" + std::to_string(au);
  out += '\n';
  for (const auto& r : records) {
    out += r.sample_id + ',' + r.dataset_id + ',' + r.subject_id + ',' + r.image_ref;
    if (with_time) out += ',' + (r.timestamp ? io::format_double(*r.timestamp) : std::string());
    for (Eigen::Index k = 0; k < kNumAus; ++k) out += ',' + std::to_string(r.labels(k));
    out += '\n';
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, std::span<const SampleRecord> records) {
  io::write_file_atomic(path, format_manifest(records));
}

std::vector<SampleRecord> merge_datasets(const std::vector<DatasetInput>& datasets) {
  std::vector<SampleRecord> out;
  std::size_t total = 0;
  for (const auto& d : datasets) total += d.records.size();
  out.reserve(total);

  std::set<std::string> ids;
  for (const auto& d : datasets) {
    d.coverage.validate();
    for (const auto& rec : d.records) {
      if (rec.dataset_id != d.coverage.dataset_id) {
        throw ValidationError("record '" + rec.sample_id + "' belongs to dataset '" + rec.dataset_id +
                              "' but was merged under coverage '" + d.coverage.dataset_id + "'");
      }
      validate_labels(rec.labels);
      std::map<int, int> partial;
      for (Eigen::Index k = 0; k < kNumAus; ++k) {
        const int au = kAuIds[static_cast<std::size_t>(k)];
        if (rec.labels(k) == kDummyLabel) continue;
        if (!d.coverage.covered_aus.contains(au)) {
          throw ValidationError("record '" + rec.sample_id + "' labels AU" + std::to_string(au) +
                                ", which dataset '" + d.coverage.dataset_id + "' does not cover");
        }
        partial[au] = rec.labels(k);
      }
      if (!ids.insert(rec.sample_id).second) {
        throw ValidationError("sample_id '" + rec.sample_id + "' appears in more than one record");
      }
      SampleRecord merged = rec;
      merged.labels = fill_dummy(partial, d.coverage);
      out.push_back(std::move(merged));
    }
  }
  return out;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

SplitResult subject_split(std::span<const SampleRecord> records, double test_fraction,
                          std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ValidationError("test_fraction must lie strictly between 0 and 1");
  }
  std::map<std::string, std::size_t> sizes;
  for (const auto& r : records) {
    if (r.subject_id.empty()) throw ValidationError("record '" + r.sample_id + "' has no subject_id");
    ++sizes[r.subject_id];
  }
  if (sizes.size() < 2) throw ValidationError("a subject-disjoint split needs at least 2 subjects");

  std::vector<std::string> subjects;
  for (const auto& [s, _] : sizes) subjects.push_back(s);
  const auto perm = seeded_permutation(subjects.size(), seed);

  const auto target = static_cast<long long>(std::llround(test_fraction * static_cast<double>(records.size())));
  long long in_test = 0;
  std::set<std::string> test_subjects;
  for (const std::size_t i : perm) {
    const auto n = static_cast<long long>(sizes[subjects[i]]);
    if (std::llabs(in_test + n - target) < std::llabs(in_test - target)) {
      test_subjects.insert(subjects[i]);
      in_test += n;
    }
  }
  if (test_subjects.empty()) {
    test_subjects.insert(subjects[perm.front()]);
  } else if (test_subjects.size() == subjects.size()) {
    test_subjects.erase(subjects[perm.back()]);
  }

  SplitResult out;
  for (const auto& r : records) {
    (test_subjects.contains(r.subject_id) ? out.test : out.train).push_back(r);
  }
  return out;
}

std::vector<FrameEvent> parse_frame_manifest(const io::CsvTable& table,
                                             const std::filesystem::path& base_dir) {
  io::check_columns(table, kFrameColumns);
  const int c_frame = table.require_column("frame_id");
  const int c_video = table.require_column("video_id");
  const int c_patient = table.require_column("patient_id");
  const int c_time = table.require_column("timestamp");
  const int c_image = table.column("image_ref");

  std::vector<FrameEvent> out;
  out.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    FrameEvent f;
    f.frame_id = row[static_cast<std::size_t>(c_frame)];
    f.video_id = row[static_cast<std::size_t>(c_video)];
    f.patient_id = row[static_cast<std::size_t>(c_patient)];
    f.timestamp = io::parse_double(row[static_cast<std::size_t>(c_time)], table, r, "timestamp");
    if (c_image >= 0) f.image_ref = resolve_ref(row[static_cast<std::size_t>(c_image)], base_dir);
    if (f.frame_id.empty() || f.video_id.empty() || f.patient_id.empty()) {
      throw ValidationError(table.where(r) + ": frame_id, video_id and patient_id must be nonempty");
    }
    if (!(f.timestamp >= 0.0) || !std::isfinite(f.timestamp)) {
      throw ValidationError(table.where(r) + ": timestamp must be a nonnegative number");
    }
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<FrameEvent> read_frame_manifest(const std::filesystem::path& path) {
  return parse_frame_manifest(io::read_csv(path), parent_dir(path));
}

std::vector<FrameEvent> select_pain_window_frames(std::span<const FrameEvent> frames, double pain_ts,
                                                  double half_window) {
  if (!(half_window >= 0.0)) throw ValidationError("half_window must be nonnegative");
  const bool sorted = std::is_sorted(frames.begin(), frames.end(),
                                     [](const FrameEvent& a, const FrameEvent& b) { return a.timestamp < b.timestamp; });
  if (!sorted) throw ValidationError("frames must be sorted by timestamp");
  const auto lo = std::lower_bound(frames.begin(), frames.end(), pain_ts - half_window,
                                   [](const FrameEvent& f, double t) { return f.timestamp < t; });
  const auto hi = std::upper_bound(lo, frames.end(), pain_ts + half_window,
                                   [](double t, const FrameEvent& f) { return t < f.timestamp; });
  return {lo, hi};
}

}  // namespace aumask
