#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mixlab {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a loss component or parameter becomes non-finite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// H x W x 3 image, interleaved RGB, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, 0.0f) {}

  float& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  size_t pixel_count() const { return static_cast<size_t>(height) * width; }
  bool operator==(const Image&) const = default;
};

/// Per-pixel class ids. The ignore label is the class count C of the dataset.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<int32_t> ids;

  LabelMap() = default;
  LabelMap(int h, int w, int32_t fill = 0)
      : height(h), width(w), ids(static_cast<size_t>(h) * w, fill) {}

  int32_t& at(int y, int x) { return ids[static_cast<size_t>(y) * width + x]; }
  int32_t at(int y, int x) const { return ids[static_cast<size_t>(y) * width + x]; }
  size_t size() const { return ids.size(); }
  bool operator==(const LabelMap&) const = default;
};

/// Binary per-pixel mask (M_s, M_ht, per-class confidence masks).
struct MixMask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> bits;

  MixMask() = default;
  MixMask(int h, int w, uint8_t fill = 0)
      : height(h), width(w), bits(static_cast<size_t>(h) * w, fill) {}

  uint8_t& at(int y, int x) { return bits[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int y, int x) const { return bits[static_cast<size_t>(y) * width + x]; }
  size_t size() const { return bits.size(); }
  size_t count() const;
  MixMask inverted() const;
  bool operator==(const MixMask&) const = default;
};

/// Result of a reduction that can be degenerate (no terms to average over).
struct ScalarResult {
  double value = 0.0;
  bool degenerate = false;
};

}  // namespace mixlab
