#include "mixlab/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace mixlab {
namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

void write_png(const std::string& path, const Raster& r) {
  if (r.channels != 1 && r.channels != 3) throw ArgumentError("png: channels must be 1 or 3");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open '" + path + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: write failed for '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, r.width, r.height, 8,
               r.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < r.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(r.px(y, 0)));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Raster read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open '" + path + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: read failed for '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) != 8 ||
      (color != PNG_COLOR_TYPE_RGB && color != PNG_COLOR_TYPE_GRAY)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: only 8-bit gray/RGB supported");
  }
  Raster r(h, w, color == PNG_COLOR_TYPE_RGB ? 3 : 1);
  for (int y = 0; y < h; ++y) png_read_row(png, r.px(y, 0), nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return r;
}

void write_ppm(const std::string& path, const Raster& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << (r.channels == 3 ? "P6" : "P5") << "\n" << r.width << " " << r.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(r.data.data()), static_cast<std::streamsize>(r.data.size()));
}

Raster to_raster(const Image& img) {
  Raster r(img.height, img.width, 3);
  for (size_t i = 0; i < img.data.size(); ++i) {
    r.data[i] = static_cast<uint8_t>(std::lround(std::clamp(img.data[i], 0.0f, 1.0f) * 255.0f));
  }
  return r;
}

Raster label_raster(const LabelMap& labels) {
  Raster r(labels.height, labels.width, 1);
  for (size_t i = 0; i < labels.ids.size(); ++i) {
    if (labels.ids[i] < 0 || labels.ids[i] > 255) throw ArgumentError("label id out of 8-bit range");
    r.data[i] = static_cast<uint8_t>(labels.ids[i]);
  }
  return r;
}

LabelMap labels_from_raster(const Raster& r) {
  if (r.channels != 1) throw ArgumentError("label raster must be single-channel");
  LabelMap m(r.height, r.width);
  for (size_t i = 0; i < r.data.size(); ++i) m.ids[i] = r.data[i];
  return m;
}

Raster mask_raster(const MixMask& mask) {
  Raster r(mask.height, mask.width, 1);
  for (size_t i = 0; i < mask.bits.size(); ++i) r.data[i] = mask.bits[i] ? 255 : 0;
  return r;
}

Raster hconcat(const std::vector<Raster>& parts, int gap) {
  int h = 0, w = 0;
  for (const auto& p : parts) {
    h = std::max(h, p.height);
    w += p.width;
  }
  if (!parts.empty()) w += gap * static_cast<int>(parts.size() - 1);
  Raster out(h, w, 3, 255);
  int x0 = 0;
  for (const auto& p : parts) {
    for (int y = 0; y < p.height; ++y) {
      for (int x = 0; x < p.width; ++x) {
        const uint8_t* src = p.px(y, x);
        uint8_t* dst = out.px(y, x0 + x);
        for (int c = 0; c < 3; ++c) dst[c] = src[p.channels == 3 ? c : 0];
      }
    }
    x0 += p.width + gap;
  }
  return out;
}

}  // namespace mixlab
