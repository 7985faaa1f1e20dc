#pragma once

// Synthetic AU datasets with a linearly recoverable signal.

#include "aumask/dataops.hpp"
#include "aumask/image.hpp"
#include "aumask/labelspace.hpp"
#include "aumask/trainer.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace aumask::fixtures {

// Each AU owns one (channel, pixel-in-patch) slot, repeated in every patch.
// The slot is bright when the AU is present and dark when absent; all other
// pixels are mid-gray noise.
struct SyntheticOptions {
  int image_size = 32;
  int channels = 3;
  int patch_size = 4;
  double present = 0.85;
  double absent = 0.15;
  double jitter = 0.1;
  double prevalence = 0.5;
};

struct SyntheticSample {
  SampleRecord record;
  Image image;
  /// Latent presence of all 18 AUs, including the ones the dataset hides.
  LabelVector truth;
};

LabelVector random_truth(std::mt19937_64& rng, double prevalence);

Image render_au_image(const LabelVector& truth, const SyntheticOptions& options, std::mt19937_64& rng);

/// `subjects` x `per_subject` samples. Labels are the latent truth on the
/// covered AUs and -1 elsewhere. Subject ids are "<prefix><k>".
std::vector<SyntheticSample> make_dataset(const DatasetCoverage& coverage, int subjects, int per_subject,
                                          std::uint64_t seed, const SyntheticOptions& options = {},
                                          const std::string& subject_prefix = "");

std::vector<TrainingSample<double>> to_training(const std::vector<SyntheticSample>& samples);

}  // namespace aumask::fixtures
