#include "mixlab/pseudo.hpp"

#include <string>

namespace mixlab {
namespace {

void check_tau(double tau) {
  if (!(tau >= 0.0 && tau < 1.0)) {
    throw ArgumentError("confidence threshold must satisfy 0 <= tau < 1, got " + std::to_string(tau));
  }
}

}  // namespace

PseudoLabel pseudo_label(const SoftPrediction& pred) {
  const auto& p = pred.probs;
  PseudoLabel pl;
  pl.labels = LabelMap(p.height, p.width);
  pl.confidence.assign(p.plane(), 0.0);
  const size_t plane = p.plane();
  for (size_t i = 0; i < plane; ++i) {
    int best = 0;
    double best_p = p.v[i];
    for (int c = 1; c < p.channels; ++c) {
      const double v = p.v[static_cast<size_t>(c) * plane + i];
      if (v > best_p) {
        best_p = v;
        best = c;
      }
    }
    pl.labels.ids[i] = best;
    pl.confidence[i] = best_p;
  }
  return pl;
}

MixMask confidence_mask(const PseudoLabel& pl, double tau) {
  check_tau(tau);
  MixMask m(pl.height(), pl.width());
  for (size_t i = 0; i < m.size(); ++i) m.bits[i] = pl.confidence[i] > tau ? 1 : 0;
  return m;
}

MixMask class_confidence_mask(const PseudoLabel& pl, int class_id, int class_count, double tau) {
  check_tau(tau);
  if (class_id < 0 || class_id >= class_count) {
    throw ArgumentError("class_confidence_mask: invalid class id " + std::to_string(class_id));
  }
  MixMask m(pl.height(), pl.width());
  for (size_t i = 0; i < m.size(); ++i) {
    m.bits[i] = (pl.labels.ids[i] == class_id && pl.confidence[i] > tau) ? 1 : 0;
  }
  return m;
}

std::vector<MixMask> class_confidence_masks(const PseudoLabel& pl, int class_count, double tau) {
  check_tau(tau);
  std::vector<MixMask> masks(static_cast<size_t>(class_count), MixMask(pl.height(), pl.width()));
  for (size_t i = 0; i < pl.labels.size(); ++i) {
    const int c = pl.labels.ids[i];
    if (c >= 0 && c < class_count && pl.confidence[i] > tau) masks[static_cast<size_t>(c)].bits[i] = 1;
  }
  return masks;
}

MixMask downsample_nearest(const MixMask& mask, int factor) {
  if (factor < 1 || mask.height % factor != 0 || mask.width % factor != 0) {
    throw DimensionError("downsample_nearest: mask size not divisible by factor");
  }
  MixMask out(mask.height / factor, mask.width / factor);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) out.at(y, x) = mask.at(y * factor, x * factor);
  }
  return out;
}

LabelMap filter_low_confidence(const PseudoLabel& pl, double tau, int ignore_id) {
  check_tau(tau);
  LabelMap out = pl.labels;
  for (size_t i = 0; i < out.size(); ++i) {
    if (!(pl.confidence[i] > tau)) out.ids[i] = ignore_id;
  }
  return out;
}

}  // namespace mixlab
