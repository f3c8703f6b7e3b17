#pragma once

#include <vector>

#include "mixlab/common.hpp"
#include "mixlab/model.hpp"

namespace mixlab {

/// Teacher argmax labels and their probabilities.
struct PseudoLabel {
  LabelMap labels;
  std::vector<double> confidence;  // H*W, row-major

  int height() const { return labels.height; }
  int width() const { return labels.width; }
};

/// Per-pixel argmax; ties go to the lowest class index.
PseudoLabel pseudo_label(const SoftPrediction& pred);

/// mask[i] = 1 iff confidence[i] > tau (strict).
MixMask confidence_mask(const PseudoLabel& pl, double tau);

/// mask[i] = 1 iff labels[i] == c and confidence[i] > tau.
MixMask class_confidence_mask(const PseudoLabel& pl, int class_id, int class_count, double tau);

/// All per-class masks at once (index = class id).
std::vector<MixMask> class_confidence_masks(const PseudoLabel& pl, int class_count, double tau);

/// Nearest-neighbour downsampling by an integer factor (source pixel = factor * index).
MixMask downsample_nearest(const MixMask& mask, int factor);

/// Label map with pixels at or below the threshold replaced by `ignore_id`.
LabelMap filter_low_confidence(const PseudoLabel& pl, double tau, int ignore_id);

}  // namespace mixlab
