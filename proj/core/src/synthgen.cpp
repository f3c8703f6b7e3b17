#include "mixlab/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "mixlab/image_io.hpp"
#include "mixlab/rng.hpp"

namespace mixlab {
namespace {

enum class ShapeKind { kRect, kEllipse, kBar };

struct Shape {
  ShapeKind kind;
  double cx, cy;
  double half_a, half_b;  // half extents along the rotated axes
  double angle;
  int class_id;

  bool contains(double px, double py) const {
    const double dx = px - cx, dy = py - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = dx * c + dy * s;
    const double v = -dx * s + dy * c;
    switch (kind) {
      case ShapeKind::kEllipse:
        return (u * u) / (half_a * half_a) + (v * v) / (half_b * half_b) <= 1.0;
      case ShapeKind::kRect:
      case ShapeKind::kBar:
        return std::abs(u) <= half_a && std::abs(v) <= half_b;
    }
    return false;
  }
};

void check_rgb(const Rgb& c, double lo, double hi, const char* what) {
  for (double v : c) {
    if (!std::isfinite(v) || v < lo || v > hi) {
      throw ArgumentError(std::string("DomainSpec: ") + what + " component out of range");
    }
  }
}

std::vector<Shape> sample_layout(uint64_t seed, int height, int width, int class_count,
                                 int& background) {
  Rng rng = Rng::keyed(seed, 0x5ce7e);
  background = static_cast<int>(rng.below(static_cast<uint64_t>(class_count)));
  const int n_shapes = rng.range(3, 7);
  const double scale = std::min(height, width) / 64.0;
  std::vector<Shape> shapes;
  for (int k = 0; k < n_shapes; ++k) {
    Shape s{};
    const double roll = rng.uniform();
    s.cx = rng.uniform(0.0, width);
    s.cy = rng.uniform(0.0, height);
    if (roll < 0.35) {
      s.kind = ShapeKind::kRect;
      s.half_a = rng.uniform(4.0, 16.0) * scale;
      s.half_b = rng.uniform(4.0, 16.0) * scale;
      s.angle = rng.uniform() < 0.5 ? 0.0 : rng.uniform(0.0, M_PI);
    } else if (roll < 0.7) {
      s.kind = ShapeKind::kEllipse;
      s.half_a = rng.uniform(4.0, 14.0) * scale;
      s.half_b = rng.uniform(4.0, 14.0) * scale;
      s.angle = rng.uniform(0.0, M_PI);
    } else {
      s.kind = ShapeKind::kBar;
      s.half_a = rng.uniform(10.0, 30.0) * scale;
      s.half_b = 0.5 * rng.range(1, 3);
      s.angle = rng.uniform(0.0, M_PI);
    }
    // Thin bars favor the last class so that one class is boundary-dominated.
    if (s.kind == ShapeKind::kBar && rng.uniform() < 0.6 && background != class_count - 1) {
      s.class_id = class_count - 1;
    } else {
      s.class_id = static_cast<int>(rng.below(static_cast<uint64_t>(class_count - 1)));
      if (s.class_id >= background) ++s.class_id;
    }
    shapes.push_back(s);
  }
  return shapes;
}

}  // namespace

void DomainSpec::validate(int class_count) const {
  if (static_cast<int>(palette.size()) != class_count) {
    throw ArgumentError("DomainSpec: palette size " + std::to_string(palette.size()) +
                        " does not match class count " + std::to_string(class_count));
  }
  for (const auto& c : palette) check_rgb(c, 0.0, 1.0, "palette");
  check_rgb(color_shift, -0.5, 0.5, "color_shift");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ArgumentError("DomainSpec: noise_std < 0");
  if (!(texture_freq > 0.0) || !std::isfinite(texture_freq)) {
    throw ArgumentError("DomainSpec: texture_freq must be > 0");
  }
  if (!(texture_amp >= 0.0 && texture_amp < 1.0)) {
    throw ArgumentError("DomainSpec: texture_amp must be in [0,1)");
  }
}

void write_domain_spec(KvDocument& doc, const std::string& section, const DomainSpec& spec) {
  const std::string p = section.empty() ? "" : section + ".";
  std::vector<double> flat;
  for (const auto& c : spec.palette) flat.insert(flat.end(), c.begin(), c.end());
  doc.set(p + "palette", format_doubles(flat));
  doc.set(p + "color_shift",
          format_doubles({spec.color_shift[0], spec.color_shift[1], spec.color_shift[2]}));
  doc.set(p + "noise_std", format_double(spec.noise_std));
  doc.set(p + "texture_freq", format_double(spec.texture_freq));
  doc.set(p + "texture_amp", format_double(spec.texture_amp));
  doc.set(p + "seed", std::to_string(spec.seed));
}

DomainSpec read_domain_spec(const KvDocument& doc, const std::string& section,
                            const DomainSpec& fallback) {
  const std::string p = section.empty() ? "" : section + ".";
  DomainSpec spec = fallback;
  if (const auto* e = doc.find(p + "palette")) {
    const auto flat = parse_doubles(e->value, e->line);
    if (flat.size() % 3 != 0 || flat.empty()) {
      throw ConfigError("palette needs 3 components per class", e->line);
    }
    spec.palette.clear();
    for (size_t i = 0; i < flat.size(); i += 3) spec.palette.push_back({flat[i], flat[i + 1], flat[i + 2]});
  }
  if (const auto* e = doc.find(p + "color_shift")) {
    const auto v = parse_doubles(e->value, e->line);
    if (v.size() != 3) throw ConfigError("color_shift needs 3 components", e->line);
    spec.color_shift = {v[0], v[1], v[2]};
  }
  spec.noise_std = doc.get_double(p + "noise_std", spec.noise_std);
  spec.texture_freq = doc.get_double(p + "texture_freq", spec.texture_freq);
  spec.texture_amp = doc.get_double(p + "texture_amp", spec.texture_amp);
  if (const auto* e = doc.find(p + "seed")) {
    const long long s = parse_int(e->value, e->line);
    if (s < 0) throw ConfigError("seed must be non-negative", e->line);
    spec.seed = static_cast<uint64_t>(s);
  }
  return spec;
}

std::string DomainSpec::to_text() const {
  KvDocument doc;
  write_domain_spec(doc, "", *this);
  return doc.to_text();
}

DomainSpec DomainSpec::from_text(const std::string& text) {
  return read_domain_spec(KvDocument::parse(text), "", DomainSpec{});
}

std::vector<Rgb> default_palette(int class_count) {
  static const std::vector<Rgb> base = {
      {0.50, 0.50, 0.50}, {0.80, 0.25, 0.20}, {0.25, 0.65, 0.30}, {0.20, 0.35, 0.80},
      {0.85, 0.80, 0.20}, {0.60, 0.30, 0.70}, {0.20, 0.75, 0.75}, {0.95, 0.55, 0.15},
  };
  if (class_count < 2) throw ArgumentError("class_count must be >= 2");
  std::vector<Rgb> out;
  for (int c = 0; c < class_count; ++c) {
    if (c < static_cast<int>(base.size())) {
      out.push_back(base[static_cast<size_t>(c)]);
    } else {
      // Deterministic fallback colors for large vocabularies.
      Rng rng = Rng::keyed(0xc0102, static_cast<uint64_t>(c));
      out.push_back({rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)});
    }
  }
  return out;
}

DomainSpec default_source_spec(int class_count) {
  DomainSpec s;
  s.palette = default_palette(class_count);
  s.noise_std = 0.04;
  s.texture_freq = 4.0;
  s.texture_amp = 0.10;
  s.seed = 11;
  return s;
}

DomainSpec default_target_spec(int class_count) {
  DomainSpec s;
  s.palette = default_palette(class_count);
  s.color_shift = {0.12, 0.10, -0.12};
  s.noise_std = 0.10;
  s.texture_freq = 9.0;
  s.texture_amp = 0.25;
  s.seed = 23;
  return s;
}

LabeledImage generate_scene(uint64_t seed, const DomainSpec& spec, int height, int width,
                            int class_count) {
  if (height <= 0 || width <= 0 || height % 8 != 0 || width % 8 != 0) {
    throw DimensionError("scene dimensions must be positive multiples of 8, got " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  if (class_count < 2) throw ArgumentError("class_count must be >= 2");
  spec.validate(class_count);

  int background = 0;
  const auto shapes = sample_layout(seed, height, width, class_count, background);

  LabeledImage scene;
  scene.scene_seed = seed;
  scene.labels = LabelMap(height, width, background);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (const auto& s : shapes) {
        if (s.contains(x + 0.5, y + 0.5)) scene.labels.at(y, x) = s.class_id;
      }
    }
  }
  if (!has_boundary(scene.labels)) {
    // Every shape got covered or clipped away; plant a central block.
    const int other = (background + 1) % class_count;
    for (int y = height / 2 - 4; y < height / 2 + 4; ++y) {
      for (int x = width / 2 - 4; x < width / 2 + 4; ++x) scene.labels.at(y, x) = other;
    }
  }

  Rng rng = Rng::keyed(spec.seed, seed, 0x7e47);
  const double phase_x = rng.uniform(0.0, 2.0 * M_PI);
  const double phase_y = rng.uniform(0.0, 2.0 * M_PI);
  scene.pixels = Image(height, width);
  for (int y = 0; y < height; ++y) {
    const double ty = std::sin(2.0 * M_PI * spec.texture_freq * (y + 0.5) / height + phase_y);
    for (int x = 0; x < width; ++x) {
      const double tx = std::sin(2.0 * M_PI * spec.texture_freq * (x + 0.5) / width + phase_x);
      const double texture = spec.texture_amp > 0.0 ? 1.0 + spec.texture_amp * tx * ty : 1.0;
      const auto& base = spec.palette[static_cast<size_t>(scene.labels.at(y, x))];
      for (int c = 0; c < 3; ++c) {
        double v = (base[c] + spec.color_shift[c]) * texture;
        if (spec.noise_std > 0.0) v += spec.noise_std * rng.normal();
        scene.pixels.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return scene;
}

DatasetPair make_benchmark(uint64_t seed, const DomainSpec& source_spec,
                           const DomainSpec& target_spec, const BenchmarkShape& shape) {
  if (shape.n_source < 1 || shape.n_target < 1) {
    throw ArgumentError("make_benchmark: n_source and n_target must be >= 1");
  }
  if (shape.n_target_eval < 0 || shape.n_source_eval < 0) {
    throw ArgumentError("make_benchmark: eval split sizes must be >= 0");
  }
  DatasetPair pair;
  pair.class_count = shape.class_count;
  std::unordered_set<uint64_t> used;
  auto fresh_seed = [&](uint64_t split, uint64_t i) {
    uint64_t s = Rng::keyed(seed, split, i).next_u64();
    while (!used.insert(s).second) ++s;
    return s;
  };
  auto fill = [&](std::vector<LabeledImage>& out, int n, uint64_t split, const DomainSpec& spec) {
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      out.push_back(generate_scene(fresh_seed(split, static_cast<uint64_t>(i)), spec, shape.height,
                                   shape.width, shape.class_count));
    }
  };
  fill(pair.source, shape.n_source, 1, source_spec);
  fill(pair.target, shape.n_target, 2, target_spec);
  fill(pair.target_eval, shape.n_target_eval, 3, target_spec);
  fill(pair.source_eval, shape.n_source_eval, 4, source_spec);
  return pair;
}

double domain_gap(const std::vector<LabeledImage>& a, const std::vector<LabeledImage>& b) {
  // Per class: channel means then channel stds, over pixels carrying that label.
  using Stats = std::vector<std::array<double, 6>>;
  auto stats = [](const std::vector<LabeledImage>& set, std::vector<double>& counts) {
    int classes = 0;
    for (const auto& img : set) {
      for (int id : img.labels.ids) classes = std::max(classes, id + 1);
    }
    Stats sum(static_cast<size_t>(classes)), s(static_cast<size_t>(classes));
    counts.assign(static_cast<size_t>(classes), 0.0);
    for (const auto& img : set) {
      for (size_t i = 0; i < img.pixels.pixel_count(); ++i) {
        const auto k = static_cast<size_t>(img.labels.ids[i]);
        counts[k] += 1;
        for (int c = 0; c < 3; ++c) {
          const double v = img.pixels.data[i * 3 + static_cast<size_t>(c)];
          sum[k][c] += v;
          sum[k][3 + c] += v * v;
        }
      }
    }
    for (size_t k = 0; k < s.size(); ++k) {
      if (counts[k] == 0) continue;
      for (int c = 0; c < 3; ++c) {
        s[k][c] = sum[k][c] / counts[k];
        s[k][3 + c] = std::sqrt(std::max(0.0, sum[k][3 + c] / counts[k] - s[k][c] * s[k][c]));
      }
    }
    return s;
  };
  std::vector<double> na, nb;
  const auto sa = stats(a, na), sb = stats(b, nb);
  double total = 0;
  int shared = 0;
  for (size_t k = 0; k < std::min(sa.size(), sb.size()); ++k) {
    if (na[k] == 0 || nb[k] == 0) continue;
    double d = 0;
    for (int i = 0; i < 6; ++i) d += (sa[k][i] - sb[k][i]) * (sa[k][i] - sb[k][i]);
    total += std::sqrt(d);
    ++shared;
  }
  if (shared == 0) throw ArgumentError("domain_gap: no class present in both image sets");
  return total / shared;
}

bool has_boundary(const LabelMap& labels) {
  for (int y = 0; y < labels.height; ++y) {
    for (int x = 0; x < labels.width; ++x) {
      if (x + 1 < labels.width && labels.at(y, x) != labels.at(y, x + 1)) return true;
      if (y + 1 < labels.height && labels.at(y, x) != labels.at(y + 1, x)) return true;
    }
  }
  return false;
}

void export_scene(const LabeledImage& scene, const std::string& stem, bool ppm) {
  if (ppm) {
    write_ppm(stem + ".ppm", to_raster(scene.pixels));
  } else {
    write_png(stem + ".png", to_raster(scene.pixels));
  }
  write_png(stem + "_labels.png", label_raster(scene.labels));
}

}  // namespace mixlab
