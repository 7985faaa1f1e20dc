#include "aumask/align.hpp"

#include <cmath>

namespace aumask {

std::vector<LandmarkRecord> parse_landmark_manifest(const io::CsvTable& table,
                                                    const std::filesystem::path& base_dir) {
  std::vector<std::string> allowed = {"frame_id", "image_ref"};
  for (int i = 1; i <= 5; ++i) {
    allowed.push_back("x" + std::to_string(i));
    allowed.push_back("y" + std::to_string(i));
  }
  io::check_columns(table, allowed);
  const int c_frame = table.require_column("frame_id");
  const int c_image = table.column("image_ref");
  int coord_cols[5][2];
  for (int i = 0; i < 5; ++i) {
    coord_cols[i][0] = table.require_column("x" + std::to_string(i + 1));
    coord_cols[i][1] = table.require_column("y" + std::to_string(i + 1));
  }

  std::vector<LandmarkRecord> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    LandmarkRecord rec;
    rec.frame_id = row[static_cast<std::size_t>(c_frame)];
    if (rec.frame_id.empty()) throw ValidationError(table.where(r) + ": empty frame_id");
    if (c_image >= 0) {
      rec.image_ref = row[static_cast<std::size_t>(c_image)];
      if (!rec.image_ref.empty() && !base_dir.empty() && std::filesystem::path(rec.image_ref).is_relative()) {
        rec.image_ref = (base_dir / rec.image_ref).lexically_normal().string();
      }
    }
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 2; ++j) {
        const auto& name = table.header[static_cast<std::size_t>(coord_cols[i][j])];
        rec.points(i, j) = io::parse_double(row[static_cast<std::size_t>(coord_cols[i][j])], table, r, name);
        if (!std::isfinite(rec.points(i, j))) throw ValidationError(table.where(r) + ": non-finite landmark");
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<LandmarkRecord> read_landmark_manifest(const std::filesystem::path& path) {
  const auto base = std::filesystem::absolute(path).parent_path().lexically_normal();
  return parse_landmark_manifest(io::read_csv(path), base);
}

}  // namespace aumask
