#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <vector>

namespace aumask {

/// Planar raster. Each plane is height x width; intensities live in [0, 1]
/// for images read from disk, but any finite value is accepted.
template <typename Scalar>
struct ImageT {
  using Plane = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  std::vector<Plane> planes;

  ImageT() = default;
  ImageT(Eigen::Index height, Eigen::Index width, int channels)
      : planes(static_cast<std::size_t>(channels), Plane::Zero(height, width)) {}

  int channels() const { return static_cast<int>(planes.size()); }
  Eigen::Index height() const { return planes.empty() ? 0 : planes.front().rows(); }
  Eigen::Index width() const { return planes.empty() ? 0 : planes.front().cols(); }

  template <typename Other>
  ImageT<Other> cast() const {
    ImageT<Other> out;
    out.planes.reserve(planes.size());
    for (const auto& p : planes) out.planes.push_back(p.template cast<Other>());
    return out;
  }

  friend bool operator==(const ImageT& a, const ImageT& b) {
    if (a.planes.size() != b.planes.size()) return false;
    for (std::size_t c = 0; c < a.planes.size(); ++c) {
      if (a.planes[c].rows() != b.planes[c].rows() || a.planes[c].cols() != b.planes[c].cols()) {
        return false;
      }
      if (a.planes[c] != b.planes[c]) return false;
    }
    return true;
  }
};

using Image = ImageT<double>;

/// Binary PGM (P5, 1 channel) or PPM (P6, 3 channels), 8-bit. Values are
/// scaled to [0, 1].
Image read_netpbm(const std::filesystem::path& path);

/// Writes P5 for 1 channel, P6 for 3 channels. Values are clamped to [0, 1]
/// and rounded to the nearest 8-bit level.
void write_netpbm(const std::filesystem::path& path, const Image& image);

}  // namespace aumask
