#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mixlab/common.hpp"

namespace mixlab {

/// 8-bit raster used for all file output.
struct Raster {
  int height = 0;
  int width = 0;
  int channels = 3;  // 1 (gray) or 3 (RGB)
  std::vector<uint8_t> data;

  Raster() = default;
  Raster(int h, int w, int c, uint8_t fill = 0)
      : height(h), width(w), channels(c), data(static_cast<size_t>(h) * w * c, fill) {}

  uint8_t* px(int y, int x) { return &data[(static_cast<size_t>(y) * width + x) * channels]; }
  const uint8_t* px(int y, int x) const {
    return &data[(static_cast<size_t>(y) * width + x) * channels];
  }
};

void write_png(const std::string& path, const Raster& r);
Raster read_png(const std::string& path);
void write_ppm(const std::string& path, const Raster& r);

Raster to_raster(const Image& img);
/// Single-channel raster holding class ids directly.
Raster label_raster(const LabelMap& labels);
LabelMap labels_from_raster(const Raster& r);
Raster mask_raster(const MixMask& mask);

/// Places rasters left to right (base / paste / mixed triptychs).
Raster hconcat(const std::vector<Raster>& parts, int gap = 2);

}  // namespace mixlab
