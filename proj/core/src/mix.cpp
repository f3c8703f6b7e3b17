#include "mixlab/mix.hpp"

#include <algorithm>
#include <vector>

#include "mixlab/image_io.hpp"

namespace mixlab {
namespace {

void check_same(int h0, int w0, int h1, int w1, const char* what) {
  if (h0 != h1 || w0 != w1) throw ShapeError(std::string("shape mismatch: ") + what);
}

}  // namespace

MixMask sample_classmix_mask(const LabelMap& source_labels, int class_count, Rng& rng) {
  std::vector<int> present;
  std::vector<uint8_t> seen(static_cast<size_t>(class_count), 0);
  for (int id : source_labels.ids) {
    if (id >= 0 && id < class_count && !seen[static_cast<size_t>(id)]) {
      seen[static_cast<size_t>(id)] = 1;
      present.push_back(id);
    }
  }
  if (present.empty()) throw ArgumentError("sample_classmix_mask: label map has no labeled pixels");
  std::sort(present.begin(), present.end());
  shuffle(present, rng);
  const size_t n_pick = (present.size() + 1) / 2;
  std::vector<uint8_t> chosen(static_cast<size_t>(class_count), 0);
  for (size_t i = 0; i < n_pick; ++i) chosen[static_cast<size_t>(present[i])] = 1;

  MixMask mask(source_labels.height, source_labels.width);
  for (size_t i = 0; i < mask.size(); ++i) {
    const int id = source_labels.ids[i];
    mask.bits[i] = (id >= 0 && id < class_count && chosen[static_cast<size_t>(id)]) ? 1 : 0;
  }
  return mask;
}

MixedSample compose_mixed_sample(const LabeledImage& base, const LabeledImage& paste,
                                 const MixMask& mask) {
  check_same(base.pixels.height, base.pixels.width, paste.pixels.height, paste.pixels.width, "images");
  check_same(base.pixels.height, base.pixels.width, mask.height, mask.width, "mask");
  check_same(base.labels.height, base.labels.width, mask.height, mask.width, "base labels");
  check_same(paste.labels.height, paste.labels.width, mask.height, mask.width, "paste labels");
  MixedSample out{base.pixels, base.labels, mask};
  for (size_t i = 0; i < mask.size(); ++i) {
    if (!mask.bits[i]) continue;
    out.labels.ids[i] = paste.labels.ids[i];
    for (size_t c = 0; c < 3; ++c) out.pixels.data[i * 3 + c] = paste.pixels.data[i * 3 + c];
  }
  return out;
}

PseudoLabel compose_pseudo_label(const PseudoLabel& base, const PseudoLabel& paste,
                                 const MixMask& mask) {
  check_same(base.height(), base.width(), paste.height(), paste.width(), "pseudo-labels");
  check_same(base.height(), base.width(), mask.height, mask.width, "mask");
  PseudoLabel out = base;
  for (size_t i = 0; i < mask.size(); ++i) {
    if (!mask.bits[i]) continue;
    out.labels.ids[i] = paste.labels.ids[i];
    out.confidence[i] = paste.confidence[i];
  }
  return out;
}

PseudoLabel certain_pseudo_label(const LabelMap& labels) {
  return PseudoLabel{labels, std::vector<double>(labels.size(), 1.0)};
}

MixMask new_boundary_mask(const MixedSample& sample) {
  const auto& l = sample.labels;
  const auto& m = sample.paste_mask;
  MixMask out(l.height, l.width);
  static constexpr int kDy[4] = {-1, 1, 0, 0};
  static constexpr int kDx[4] = {0, 0, -1, 1};
  for (int y = 0; y < l.height; ++y) {
    for (int x = 0; x < l.width; ++x) {
      for (int k = 0; k < 4; ++k) {
        const int ny = y + kDy[k], nx = x + kDx[k];
        if (ny < 0 || nx < 0 || ny >= l.height || nx >= l.width) continue;
        if (l.at(ny, nx) != l.at(y, x) && m.at(ny, nx) != m.at(y, x)) {
          out.at(y, x) = 1;
          break;
        }
      }
    }
  }
  return out;
}

void dump_mix_triptych(const std::string& path, const Image& base, const Image& paste,
                       const MixedSample& mixed) {
  write_png(path, hconcat({to_raster(base), to_raster(paste), to_raster(mixed.pixels)}));
}

}  // namespace mixlab
