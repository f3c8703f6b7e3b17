#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "mixlab/eval.hpp"
#include "mixlab/image_io.hpp"
#include "mixlab/synthgen.hpp"
#include "mixlab/train.hpp"

using namespace mixlab;

namespace {

DomainSpec plain_spec(int classes) {
  DomainSpec s = default_source_spec(classes);
  s.color_shift = {0, 0, 0};
  s.noise_std = 0.0;
  s.texture_amp = 0.0;
  return s;
}

double mean_channel(const Image& img, int c) {
  double s = 0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) s += img.at(y, x, c);
  }
  return s / static_cast<double>(img.pixel_count());
}

}  // namespace

TEST(GenerateScene, SeededDeterminism) {
  const auto spec = default_target_spec(5);
  const auto a = generate_scene(42, spec, 64, 64, 5);
  const auto b = generate_scene(42, spec, 64, 64, 5);
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_EQ(a.labels, b.labels);
  const auto c = generate_scene(43, spec, 64, 64, 5);
  EXPECT_NE(a.labels, c.labels);
}

TEST(GenerateScene, IdentityRenderingEqualsPalette) {
  const auto spec = plain_spec(5);
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = generate_scene(seed, spec, 32, 48, 5);
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 48; ++x) {
        const auto& rgb = spec.palette[s.labels.at(y, x)];
        for (int c = 0; c < 3; ++c) ASSERT_EQ(s.pixels.at(y, x, c), static_cast<float>(rgb[c]));
      }
    }
  }
}

TEST(GenerateScene, RedShiftMovesMeanByShift) {
  DomainSpec a = default_source_spec(5);
  a.noise_std = 0.02;
  DomainSpec b = a;
  b.color_shift = {a.color_shift[0] + 0.2, a.color_shift[1], a.color_shift[2]};
  double diff = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    const auto sa = generate_scene(seed, a, 64, 64, 5);
    const auto sb = generate_scene(seed, b, 64, 64, 5);
    diff += mean_channel(sb.pixels, 0) - mean_channel(sa.pixels, 0);
  }
  EXPECT_NEAR(diff / 100, 0.2, 0.02);
}

TEST(GenerateScene, EveryLabelInRangeAndBoundariesExist) {
  const auto spec = default_source_spec(5);
  for (uint64_t seed = 0; seed < 30; ++seed) {
    const auto s = generate_scene(seed, spec, 64, 64, 5);
    EXPECT_TRUE(has_boundary(s.labels));
    for (int id : s.labels.ids) ASSERT_TRUE(id >= 0 && id < 5);
    for (float v : s.pixels.data) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}

TEST(GenerateScene, InvalidDimensions) {
  const auto spec = default_source_spec(5);
  EXPECT_THROW(generate_scene(1, spec, 60, 64, 5), DimensionError);
  EXPECT_THROW(generate_scene(1, spec, 0, 64, 5), DimensionError);
  EXPECT_THROW(generate_scene(1, spec, 64, -8, 5), DimensionError);
}

TEST(DomainSpecCheck, RejectsOutOfRangeFields) {
  DomainSpec s = default_source_spec(5);
  s.noise_std = -1;
  EXPECT_THROW(s.validate(5), ArgumentError);
  s = default_source_spec(5);
  s.color_shift[1] = 0.7;
  EXPECT_THROW(s.validate(5), ArgumentError);
  s = default_source_spec(3);
  EXPECT_THROW(s.validate(5), ArgumentError);
}

TEST(DomainSpecCheck, TextRoundTrip) {
  const auto s = default_target_spec(5);
  EXPECT_EQ(DomainSpec::from_text(s.to_text()), s);
}

TEST(MakeBenchmark, CountsAndDisjointSeeds) {
  BenchmarkShape shape;
  shape.n_source = 8;
  shape.n_target = 8;
  shape.n_target_eval = 4;
  shape.n_source_eval = 4;
  shape.height = shape.width = 32;
  const auto d = make_benchmark(3, default_source_spec(5), default_target_spec(5), shape);
  EXPECT_EQ(d.source.size(), 8u);
  EXPECT_EQ(d.target.size(), 8u);
  EXPECT_EQ(d.target_eval.size(), 4u);
  EXPECT_EQ(d.source_eval.size(), 4u);
  std::set<uint64_t> seeds;
  for (const auto* split : {&d.source, &d.target, &d.target_eval, &d.source_eval}) {
    for (const auto& s : *split) seeds.insert(s.scene_seed);
  }
  EXPECT_EQ(seeds.size(), 24u);
  EXPECT_EQ(d.ignore_id(), 5);
  EXPECT_TRUE(d.target_labels_eval_only);
}

TEST(MakeBenchmark, ZeroCountsRejected) {
  BenchmarkShape shape;
  shape.n_source = 0;
  EXPECT_THROW(make_benchmark(1, default_source_spec(5), default_target_spec(5), shape), ArgumentError);
  shape.n_source = 1;
  shape.n_target = 0;
  EXPECT_THROW(make_benchmark(1, default_source_spec(5), default_target_spec(5), shape), ArgumentError);
}

TEST(MakeBenchmark, IdenticalSpecsHaveNoGap) {
  BenchmarkShape shape;
  shape.n_source = shape.n_target = 40;
  const auto spec = default_source_spec(5);
  const auto same = make_benchmark(9, spec, spec, shape);
  const auto shifted = make_benchmark(9, spec, default_target_spec(5), shape);
  const double g0 = domain_gap(same.source, same.target);
  const double g1 = domain_gap(shifted.source, shifted.target);
  EXPECT_LT(g0, 0.02);
  EXPECT_GT(g1, 5 * g0);
}

TEST(MakeBenchmark, SourceOnlyModelDropsOnTarget) {
  BenchmarkShape shape;
  shape.n_source = 60;
  shape.n_target = 10;
  shape.n_target_eval = 20;
  shape.n_source_eval = 20;
  const auto data = make_benchmark(7, default_source_spec(5), default_target_spec(5), shape);
  TrainConfig cfg;
  cfg.warmup_iters = 400;
  for (uint64_t seed : {1, 2, 3}) {
    cfg.seed = seed;
    const auto state = warmup(init_train_state<float>(cfg), data, cfg);
    const double src = evaluate_model(state.student, data.source_eval).miou;
    const double tgt = evaluate_model(state.student, data.target_eval).miou;
    EXPECT_LT(tgt, src) << "seed " << seed;
  }
}

TEST(ExportScene, PngLabelsRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "mixlab_export_test";
  std::filesystem::create_directories(dir);
  const auto s = generate_scene(5, default_source_spec(5), 32, 32, 5);
  export_scene(s, (dir / "scene").string());
  const auto labels = labels_from_raster(read_png((dir / "scene_labels.png").string()));
  EXPECT_EQ(labels, s.labels);
  const auto rgb = read_png((dir / "scene.png").string());
  EXPECT_EQ(rgb.channels, 3);
  EXPECT_EQ(rgb.height, 32);
  export_scene(s, (dir / "ppm").string(), true);
  EXPECT_TRUE(std::filesystem::exists(dir / "ppm.ppm"));
  std::filesystem::remove_all(dir);
}
