#pragma once

// Similarity alignment of faces from five landmarks.

#include "aumask/error.hpp"
#include "aumask/image.hpp"
#include "aumask/io.hpp"

#include <Eigen/Core>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

namespace aumask {

/// Five landmarks, one (x, y) row each: left eye, right eye, nose tip, left
/// mouth corner, right mouth corner.
template <typename Scalar>
using LandmarkSetT = Eigen::Matrix<Scalar, 5, 2>;
using LandmarkSet = LandmarkSetT<double>;

/// q = scale * R(rotation) * p + translation.
template <typename Scalar>
struct SimilarityTransform {
  Scalar scale = Scalar(1);
  Scalar rotation = Scalar(0);
  Eigen::Matrix<Scalar, 2, 1> translation = Eigen::Matrix<Scalar, 2, 1>::Zero();

  Eigen::Matrix<Scalar, 2, 2> linear() const {
    using std::cos;
    using std::sin;
    Eigen::Matrix<Scalar, 2, 2> r;
    r << cos(rotation), -sin(rotation), sin(rotation), cos(rotation);
    return scale * r;
  }

  template <typename Derived>
  Eigen::Matrix<Scalar, 2, 1> apply(const Eigen::MatrixBase<Derived>& p) const {
    return linear() * p + translation;
  }

  SimilarityTransform inverse() const {
    if (!(scale > Scalar(0))) throw NumericError("similarity transform is not invertible");
    SimilarityTransform inv;
    inv.scale = Scalar(1) / scale;
    inv.rotation = -rotation;
    inv.translation = -(inv.linear() * translation);
    return inv;
  }
};

template <typename Scalar>
struct SimilarityEstimate {
  SimilarityTransform<Scalar> transform;
  /// Root-mean-square distance between transformed src and dst points.
  Scalar rms_residual = Scalar(0);
};

/// Least-squares similarity transform mapping `src` rows onto `dst` rows.
///
/// Closed form in 2-D: with centered point sets P and Q,
///   a = sum(p . q), b = sum(p x q), theta = atan2(b, a),
///   s = sqrt(a^2 + b^2) / sum|p|^2, t = mean(q) - s R mean(p).
template <typename DerivedS, typename DerivedD>
SimilarityEstimate<typename DerivedS::Scalar> estimate_similarity(const Eigen::MatrixBase<DerivedS>& src,
                                                                  const Eigen::MatrixBase<DerivedD>& dst) {
  using Scalar = typename DerivedS::Scalar;
  using std::atan2;
  using std::sqrt;
  if (src.cols() != 2 || dst.cols() != 2 || src.rows() != dst.rows()) {
    throw ValidationError("landmark sets must be matching n x 2 arrays");
  }
  if (src.rows() < 2) throw ValidationError("at least two correspondences are required");
  if (!src.allFinite() || !dst.allFinite()) throw ValidationError("landmarks must be finite");

  const Eigen::Matrix<Scalar, 1, 2> src_mean = src.colwise().mean();
  const Eigen::Matrix<Scalar, 1, 2> dst_mean = dst.colwise().mean();
  const auto p = (src.rowwise() - src_mean).eval();
  const auto q = (dst.rowwise() - dst_mean).eval();

  const Scalar spread = p.squaredNorm();
  const Scalar scale_ref = src.cwiseAbs().maxCoeff();
  if (!(spread > Scalar(1e-24) * (scale_ref * scale_ref + Scalar(1)))) {
    throw NumericError("source landmarks are coincident; similarity is undetermined");
  }
  Scalar a(0), b(0);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    a += p(i, 0) * q(i, 0) + p(i, 1) * q(i, 1);
    b += p(i, 0) * q(i, 1) - p(i, 1) * q(i, 0);
  }
  SimilarityEstimate<Scalar> est;
  est.transform.rotation = atan2(b, a);
  est.transform.scale = sqrt(a * a + b * b) / spread;
  if (!(est.transform.scale > Scalar(0))) {
    throw NumericError("destination landmarks are coincident; scale would be zero");
  }
  est.transform.translation =
      dst_mean.transpose() - est.transform.linear() * src_mean.transpose();

  Scalar sq(0);
  for (Eigen::Index i = 0; i < src.rows(); ++i) {
    sq += (est.transform.apply(src.row(i).transpose()) - dst.row(i).transpose()).squaredNorm();
  }
  est.rms_residual = sqrt(sq / Scalar(src.rows()));
  return est;
}

/// Canonical landmark positions for a square crop of `out_size` pixels,
/// scaled from the widely used 112 x 112 five-point face template.
template <typename Scalar = double>
LandmarkSetT<Scalar> canonical_template(int out_size) {
  LandmarkSetT<Scalar> t;
  t << 38.2946, 51.6963,  //
      73.5318, 51.5014,   //
      56.0252, 71.7366,   //
      41.5493, 92.3655,   //
      70.7299, 92.2041;
  return t * (Scalar(out_size) / Scalar(112));
}

/// Bilinear sample at (x, y) with pixel centers on integer coordinates;
/// neighbors outside the image read as 0.
template <typename Derived>
typename Derived::Scalar sample_bilinear(const Eigen::MatrixBase<Derived>& plane,
                                         typename Derived::Scalar x, typename Derived::Scalar y) {
  using Scalar = typename Derived::Scalar;
  using std::floor;
  const Scalar fx0 = floor(x), fy0 = floor(y);
  const Scalar fx = x - fx0, fy = y - fy0;
  const auto x0 = static_cast<Eigen::Index>(fx0), y0 = static_cast<Eigen::Index>(fy0);
  auto at = [&](Eigen::Index r, Eigen::Index c) -> Scalar {
    if (r < 0 || c < 0 || r >= plane.rows() || c >= plane.cols()) return Scalar(0);
    return plane(r, c);
  };
  Scalar v = (Scalar(1) - fx) * (Scalar(1) - fy) * at(y0, x0);
  if (fx != Scalar(0)) v += fx * (Scalar(1) - fy) * at(y0, x0 + 1);
  if (fy != Scalar(0)) v += (Scalar(1) - fx) * fy * at(y0 + 1, x0);
  if (fx != Scalar(0) && fy != Scalar(0)) v += fx * fy * at(y0 + 1, x0 + 1);
  return v;
}

/// Output pixel (u, v) reads the source at transform^-1(u, v).
template <typename Scalar>
ImageT<Scalar> warp_crop(const ImageT<Scalar>& image, const SimilarityTransform<Scalar>& transform,
                         int out_size) {
  using std::isfinite;
  if (out_size <= 0) throw ValidationError("out_size must be positive");
  if (!isfinite(transform.rotation) || !transform.translation.allFinite() || !isfinite(transform.scale)) {
    throw ValidationError("transform parameters must be finite");
  }
  const SimilarityTransform<Scalar> inv = transform.inverse();
  const Eigen::Matrix<Scalar, 2, 2> lin = inv.linear();
  ImageT<Scalar> out(out_size, out_size, image.channels());
  for (int v = 0; v < out_size; ++v) {
    for (int u = 0; u < out_size; ++u) {
      const Eigen::Matrix<Scalar, 2, 1> src = lin * Eigen::Matrix<Scalar, 2, 1>(Scalar(u), Scalar(v)) + inv.translation;
      for (int c = 0; c < image.channels(); ++c) {
        out.planes[static_cast<std::size_t>(c)](v, u) =
            sample_bilinear(image.planes[static_cast<std::size_t>(c)], src.x(), src.y());
      }
    }
  }
  return out;
}

/// Estimates the landmark-to-template transform and warps the face crop.
template <typename Scalar>
ImageT<Scalar> align_face(const ImageT<Scalar>& image, const LandmarkSetT<Scalar>& landmarks,
                          int out_size) {
  const auto est = estimate_similarity(landmarks, canonical_template<Scalar>(out_size));
  return warp_crop(image, est.transform, out_size);
}

}  // namespace aumask

namespace aumask {

struct LandmarkRecord {
  std::string frame_id;
  /// Empty when the manifest has no image_ref column.
  std::string image_ref;
  LandmarkSet points;
};

// Landmark manifest: frame_id, x1, y1, ..., x5, y5 and an optional image_ref.
std::vector<LandmarkRecord> parse_landmark_manifest(const io::CsvTable& table,
                                                    const std::filesystem::path& base_dir = {});
std::vector<LandmarkRecord> read_landmark_manifest(const std::filesystem::path& path);

}  // namespace aumask
