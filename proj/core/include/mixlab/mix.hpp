#pragma once

#include <string>

#include "mixlab/common.hpp"
#include "mixlab/pseudo.hpp"
#include "mixlab/rng.hpp"
#include "mixlab/synthgen.hpp"

namespace mixlab {

/// Image + label map produced by pasting `paste` over `base` where the mask is set.
struct MixedSample {
  Image pixels;
  LabelMap labels;
  MixMask paste_mask;
};

/// ClassMix mask: picks ceil(K/2) of the K non-ignore classes present in
/// `source_labels` uniformly at random and selects their pixels.
MixMask sample_classmix_mask(const LabelMap& source_labels, int class_count, Rng& rng);

/// out[i] = paste[i] if mask[i] else base[i], for pixels and labels.
///
/// ClassMix:  base = target with pseudo-labels, paste = source, mask = M_s.
/// HTCM:      base = source, paste = target with pseudo-labels, mask = M_ht.
MixedSample compose_mixed_sample(const LabeledImage& base, const LabeledImage& paste,
                                 const MixMask& mask);

/// Same selection applied to per-pixel confidences, for pseudo-labels of a mix.
PseudoLabel compose_pseudo_label(const PseudoLabel& base, const PseudoLabel& paste,
                                 const MixMask& mask);

/// Ground-truth labels viewed as a pseudo-label with confidence 1.
PseudoLabel certain_pseudo_label(const LabelMap& labels);

/// Pixels with a 4-neighbour of a different label that also lies across the
/// paste frontier.
MixMask new_boundary_mask(const MixedSample& sample);

/// Writes a base / paste / mixed PNG triptych.
void dump_mix_triptych(const std::string& path, const Image& base, const Image& paste,
                       const MixedSample& mixed);

}  // namespace mixlab
