#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mixlab/common.hpp"
#include "mixlab/kvconfig.hpp"

namespace mixlab {

using Rgb = std::array<double, 3>;

/// Appearance model of one domain.
struct DomainSpec {
  std::vector<Rgb> palette;          // class id -> base color in [0,1]
  Rgb color_shift{0.0, 0.0, 0.0};    // additive, each in [-0.5, 0.5]
  double noise_std = 0.0;            // per-pixel Gaussian noise
  double texture_freq = 4.0;         // cycles per image, > 0
  double texture_amp = 0.0;          // multiplicative texture strength; 0 disables texture
  uint64_t seed = 0;

  void validate(int class_count) const;

  /// Flat key = value lines, optionally prefixed ("source." etc.).
  std::string to_text() const;
  static DomainSpec from_text(const std::string& text);

  bool operator==(const DomainSpec&) const = default;
};

/// Section-scoped (de)serialization used by the experiment config.
void write_domain_spec(KvDocument& doc, const std::string& section, const DomainSpec& spec);
DomainSpec read_domain_spec(const KvDocument& doc, const std::string& section,
                            const DomainSpec& fallback);

std::vector<Rgb> default_palette(int class_count);
DomainSpec default_source_spec(int class_count);
DomainSpec default_target_spec(int class_count);

struct LabeledImage {
  Image pixels;
  LabelMap labels;
  uint64_t scene_seed = 0;
};

struct DatasetPair {
  std::vector<LabeledImage> source;
  /// Target training scenes. Labels are retained for evaluation only and are
  /// never read by the training loop.
  std::vector<LabeledImage> target;
  std::vector<LabeledImage> target_eval;
  std::vector<LabeledImage> source_eval;
  int class_count = 0;
  bool target_labels_eval_only = true;

  int ignore_id() const { return class_count; }
};

struct BenchmarkShape {
  int n_source = 200;
  int n_target = 200;
  int n_target_eval = 50;
  int n_source_eval = 50;
  int height = 64;
  int width = 64;
  int class_count = 5;
};

/// Renders one scene. Layout depends only on `seed`; noise and texture phase
/// additionally depend on `spec.seed`.
LabeledImage generate_scene(uint64_t seed, const DomainSpec& spec, int height, int width,
                            int class_count);

DatasetPair make_benchmark(uint64_t seed, const DomainSpec& source_spec,
                           const DomainSpec& target_spec, const BenchmarkShape& shape);

/// Distance between per-channel (mean, std) colour statistics of two image
/// sets, computed per class and averaged over classes present in both.
double domain_gap(const std::vector<LabeledImage>& a, const std::vector<LabeledImage>& b);

/// True if some pixel has a 4-neighbor with a different label.
bool has_boundary(const LabelMap& labels);

/// Writes `<stem>.png` (RGB) and `<stem>_labels.png` (class ids).
void export_scene(const LabeledImage& scene, const std::string& stem, bool ppm = false);

}  // namespace mixlab
