#pragma once

#include "aumask/error.hpp"
#include "aumask/labelspace.hpp"

#include <Eigen/Core>

#include <cmath>
#include <string>

namespace aumask {

/// How strictly label/mask agreement is checked before computing the loss.
enum class LabelCheck {
  /// mask == 0 exactly where label == -1.
  kStrict,
  /// Only unmasked labels must be 0/1; values under a zero mask are ignored.
  kMaskOnly,
};

template <typename Scalar>
struct LossValue {
  Scalar value = Scalar(0);
  Eigen::Index unmasked_count = 0;

  /// True when every entry of the batch was masked; callers may skip the step.
  bool empty_mask() const { return unmasked_count == 0; }
};

template <typename Scalar>
Scalar stable_sigmoid(Scalar z) {
  using std::exp;
  if (z >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-z));
  const Scalar e = exp(z);
  return e / (Scalar(1) + e);
}

/// -[y log sigmoid(z) + (1 - y) log(1 - sigmoid(z))] in logit space.
template <typename Scalar>
Scalar bce_with_logit(Scalar z, Scalar y) {
  using std::abs;
  using std::exp;
  using std::log1p;
  using std::max;
  return max(z, Scalar(0)) - z * y + log1p(exp(-abs(z)));
}

namespace detail {

template <typename DerivedZ, typename DerivedY, typename DerivedM>
void check_masked_inputs(const Eigen::DenseBase<DerivedZ>& logits,
                         const Eigen::DenseBase<DerivedY>& labels,
                         const Eigen::DenseBase<DerivedM>& mask, LabelCheck check) {
  if (logits.rows() != labels.rows() || logits.cols() != labels.cols() ||
      logits.rows() != mask.rows() || logits.cols() != mask.cols()) {
    throw ValidationError("logits, labels and mask must share a shape");
  }
  for (Eigen::Index b = 0; b < logits.rows(); ++b) {
    for (Eigen::Index k = 0; k < logits.cols(); ++k) {
      const int m = static_cast<int>(mask(b, k));
      const int y = static_cast<int>(labels(b, k));
      if (m != 0 && m != 1) {
        throw ValidationError("mask entry (" + std::to_string(b) + ", " + std::to_string(k) +
                              ") is not 0/1");
      }
      if (m == 1 && y != 0 && y != 1) {
        throw ValidationError("unmasked label (" + std::to_string(b) + ", " + std::to_string(k) +
                              ") must be 0/1, got " + std::to_string(y));
      }
      if (check == LabelCheck::kStrict && m == 0 && y != kDummyLabel) {
        throw ValidationError("masked entry (" + std::to_string(b) + ", " + std::to_string(k) +
                              ") must carry the dummy label -1");
      }
      using std::isfinite;
      if (m == 1 && !isfinite(logits(b, k))) {
        throw ValidationError("non-finite logit at (" + std::to_string(b) + ", " +
                              std::to_string(k) + ")");
      }
    }
  }
}

}  // namespace detail

/// Masked sigmoid binary cross-entropy, averaged over the unmasked entries.
///
/// Entries with mask 0 contribute nothing. The sum runs in row-major order so
/// results are reproducible. A fully masked batch yields {0, 0}.
template <typename DerivedZ, typename DerivedY, typename DerivedM>
LossValue<typename DerivedZ::Scalar> masked_bce(const Eigen::DenseBase<DerivedZ>& logits,
                                                const Eigen::DenseBase<DerivedY>& labels,
                                                const Eigen::DenseBase<DerivedM>& mask,
                                                LabelCheck check = LabelCheck::kStrict) {
  using Scalar = typename DerivedZ::Scalar;
  detail::check_masked_inputs(logits, labels, mask, check);

  LossValue<Scalar> out;
  Scalar sum(0);
  for (Eigen::Index b = 0; b < logits.rows(); ++b) {
    for (Eigen::Index k = 0; k < logits.cols(); ++k) {
      if (mask(b, k) == 0) continue;
      sum += bce_with_logit(Scalar(logits(b, k)), Scalar(labels(b, k)));
      ++out.unmasked_count;
    }
  }
  if (out.unmasked_count > 0) out.value = sum / Scalar(out.unmasked_count);
  return out;
}

/// Gradient of masked_bce with respect to the logits.
///
/// grad(b, k) = mask(b, k) * (sigmoid(z) - y) / sum(mask). Masked entries are
/// written as +0.0 directly rather than multiplied out.
template <typename DerivedZ, typename DerivedY, typename DerivedM>
Eigen::Matrix<typename DerivedZ::Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
masked_bce_grad(const Eigen::DenseBase<DerivedZ>& logits, const Eigen::DenseBase<DerivedY>& labels,
                const Eigen::DenseBase<DerivedM>& mask, LabelCheck check = LabelCheck::kStrict) {
  using Scalar = typename DerivedZ::Scalar;
  detail::check_masked_inputs(logits, labels, mask, check);

  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> grad =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(logits.rows(),
                                                                                   logits.cols());
  Eigen::Index count = 0;
  for (Eigen::Index b = 0; b < mask.rows(); ++b) {
    for (Eigen::Index k = 0; k < mask.cols(); ++k) count += (mask(b, k) != 0);
  }
  if (count == 0) return grad;

  const Scalar inv = Scalar(1) / Scalar(count);
  for (Eigen::Index b = 0; b < logits.rows(); ++b) {
    for (Eigen::Index k = 0; k < logits.cols(); ++k) {
      if (mask(b, k) == 0) continue;
      grad(b, k) = (stable_sigmoid(Scalar(logits(b, k))) - Scalar(labels(b, k))) * inv;
    }
  }
  return grad;
}

}  // namespace aumask
