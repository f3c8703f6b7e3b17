#include <gtest/gtest.h>

#include "mixlab/pseudo.hpp"
#include "oracles.hpp"

using namespace mixlab;

namespace {

SoftPrediction single_pixel(std::vector<double> p) {
  SoftPrediction s{Tensor3<double>(static_cast<int>(p.size()), 1, 1)};
  for (size_t c = 0; c < p.size(); ++c) s.probs.at(static_cast<int>(c), 0, 0) = p[c];
  return s;
}

PseudoLabel with_confidence(double conf) {
  PseudoLabel pl;
  pl.labels = LabelMap(1, 1, 0);
  pl.confidence = {conf};
  return pl;
}

}  // namespace

TEST(PseudoLabel, ArgmaxAndConfidence) {
  const auto pl = pseudo_label(single_pixel({0.7, 0.2, 0.1}));
  EXPECT_EQ(pl.labels.at(0, 0), 0);
  EXPECT_DOUBLE_EQ(pl.confidence[0], 0.7);
  const auto pl2 = pseudo_label(single_pixel({0.1, 0.2, 0.7}));
  EXPECT_EQ(pl2.labels.at(0, 0), 2);
}

TEST(PseudoLabel, UniformTiesGoToLowestIndex) {
  const auto pl = pseudo_label(single_pixel({0.2, 0.2, 0.2, 0.2, 0.2}));
  EXPECT_EQ(pl.labels.at(0, 0), 0);
  EXPECT_DOUBLE_EQ(pl.confidence[0], 0.2);
  const auto pl2 = pseudo_label(single_pixel({0.1, 0.45, 0.45}));
  EXPECT_EQ(pl2.labels.at(0, 0), 1);
}

TEST(PseudoLabel, MatchesBruteForceScan) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const int c_count = rng.range(2, 6), h = rng.range(1, 9), w = rng.range(1, 9);
    const auto pred = oracle::random_prediction(rng, c_count, h, w);
    const auto pl = pseudo_label(pred);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        int best = 0;
        for (int c = 1; c < c_count; ++c) {
          if (pred.probs.at(c, y, x) > pred.probs.at(best, y, x)) best = c;
        }
        ASSERT_EQ(pl.labels.at(y, x), best);
        ASSERT_EQ(pl.confidence[y * w + x], pred.probs.at(best, y, x));
      }
    }
  }
}

TEST(ConfidenceMask, StrictThreshold) {
  EXPECT_EQ(confidence_mask(with_confidence(0.96), 0.95).at(0, 0), 1);
  EXPECT_EQ(confidence_mask(with_confidence(0.95), 0.95).at(0, 0), 0);
  EXPECT_EQ(confidence_mask(with_confidence(0.2), 0.0).at(0, 0), 1);
}

TEST(ConfidenceMask, TauZeroSelectsEverything) {
  Rng rng(2);
  const auto pl = pseudo_label(oracle::random_prediction(rng, 5, 8, 8));
  EXPECT_EQ(confidence_mask(pl, 0.0).count(), 64u);
}

TEST(ConfidenceMask, RejectsInvalidTau) {
  const auto pl = with_confidence(0.5);
  EXPECT_THROW(confidence_mask(pl, 1.0), ArgumentError);
  EXPECT_THROW(confidence_mask(pl, -0.1), ArgumentError);
}

TEST(ClassConfidenceMask, PartitionOfConfidenceMask) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int c_count = rng.range(2, 6);
    const auto pl = pseudo_label(oracle::random_prediction(rng, c_count, 8, 8));
    const double tau = rng.uniform(0.0, 0.99);
    const auto all = confidence_mask(pl, tau);
    const auto masks = class_confidence_masks(pl, c_count, tau);
    for (size_t i = 0; i < all.size(); ++i) {
      int sum = 0;
      for (const auto& m : masks) sum += m.bits[i];
      ASSERT_EQ(sum, all.bits[i]);
    }
  }
}

TEST(ClassConfidenceMask, MonotoneInTau) {
  Rng rng(4);
  const auto pl = pseudo_label(oracle::random_prediction(rng, 4, 16, 16));
  for (int trial = 0; trial < 100; ++trial) {
    double t1 = rng.uniform(0.0, 0.99), t2 = rng.uniform(0.0, 0.99);
    if (t1 > t2) std::swap(t1, t2);
    const auto m1 = confidence_mask(pl, t1), m2 = confidence_mask(pl, t2);
    for (size_t i = 0; i < m1.size(); ++i) ASSERT_LE(m2.bits[i], m1.bits[i]);
  }
}

TEST(ClassConfidenceMask, MatchesBruteForceAndHandlesAbsentClass) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pl = pseudo_label(oracle::random_prediction(rng, 4, 6, 7));
    const double tau = rng.uniform(0.0, 0.9);
    for (int c = 0; c < 4; ++c) {
      const auto m = class_confidence_mask(pl, c, 4, tau);
      for (size_t i = 0; i < m.size(); ++i) {
        ASSERT_EQ(m.bits[i], pl.labels.ids[i] == c && pl.confidence[i] > tau);
      }
    }
  }
  PseudoLabel pl;
  pl.labels = LabelMap(3, 3, 1);
  pl.confidence.assign(9, 0.99);
  EXPECT_EQ(class_confidence_mask(pl, 0, 3, 0.5).count(), 0u);
  EXPECT_THROW(class_confidence_mask(pl, 3, 3, 0.5), ArgumentError);
  EXPECT_THROW(class_confidence_mask(pl, -1, 3, 0.5), ArgumentError);
}

TEST(FilterLowConfidence, ReplacesWithIgnore) {
  PseudoLabel pl;
  pl.labels = LabelMap(1, 3, 2);
  pl.confidence = {0.5, 0.95, 0.97};
  const auto f = filter_low_confidence(pl, 0.95, 7);
  EXPECT_EQ(f.ids, (std::vector<int32_t>{7, 7, 2}));
}

TEST(DownsampleNearest, PicksTopLeftOfEachCell) {
  MixMask m(8, 8);
  m.at(0, 0) = 1;
  m.at(1, 1) = 1;
  m.at(4, 4) = 1;
  const auto d = downsample_nearest(m, 4);
  EXPECT_EQ(d.height, 2);
  EXPECT_EQ(d.bits, (std::vector<uint8_t>{1, 0, 0, 1}));
  EXPECT_THROW(downsample_nearest(MixMask(6, 8), 4), DimensionError);
}
