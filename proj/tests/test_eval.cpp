#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mixlab/eval.hpp"
#include "oracles.hpp"

using namespace mixlab;

namespace {

LabelMap stack(const std::vector<LabelMap>& parts) {
  LabelMap out(0, parts[0].width);
  for (const auto& p : parts) {
    out.ids.insert(out.ids.end(), p.ids.begin(), p.ids.end());
    out.height += p.height;
  }
  return out;
}

LabelMap with_ignore(Rng& rng, LabelMap l, int ignore_id, double p) {
  for (auto& v : l.ids) {
    if (rng.uniform() < p) v = ignore_id;
  }
  return l;
}

AblationRun fake_run(const std::string& v, uint64_t seed, double miou) {
  AblationRun r;
  r.variant = v;
  r.seed = seed;
  r.report.confusion = ConfusionMatrix(2);
  r.report.per_class_iou = {miou, std::nullopt};
  r.report.miou = miou;
  return r;
}

}  // namespace

TEST(ComputeMiou, PerfectPrediction) {
  Rng rng(1);
  const auto gt = oracle::random_labels(rng, 8, 8, 3);
  const auto r = compute_miou({gt}, {gt}, 5);
  EXPECT_EQ(r.miou, 1.0);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(*r.per_class_iou[c], 1.0);
  EXPECT_FALSE(r.per_class_iou[3].has_value());
  EXPECT_FALSE(r.per_class_iou[4].has_value());
}

TEST(ComputeMiou, HalfAndHalfExample) {
  LabelMap gt(4, 4, 0), pred(4, 4, 0);
  for (int y = 0; y < 4; ++y) {
    for (int x = 2; x < 4; ++x) gt.at(y, x) = 1;
  }
  const auto r = compute_miou({pred}, {gt}, 2);
  EXPECT_DOUBLE_EQ(*r.per_class_iou[0], 0.5);
  EXPECT_DOUBLE_EQ(*r.per_class_iou[1], 0.0);
  EXPECT_DOUBLE_EQ(r.miou, 0.25);
}

TEST(ComputeMiou, MatchesSetCountingOracleExactly) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int c = rng.range(2, 6);
    const int n = rng.range(1, 3);
    std::vector<LabelMap> preds, gts;
    for (int k = 0; k < n; ++k) {
      preds.push_back(oracle::random_labels(rng, 8, 8, c));
      gts.push_back(with_ignore(rng, oracle::random_blocky_labels(rng, 8, 8, c), c, 0.1));
    }
    const auto r = compute_miou(preds, gts, c);
    const auto ref = oracle::miou(preds, gts, c);
    ASSERT_EQ(r.miou, ref.miou);
    for (int k = 0; k < c; ++k) {
      ASSERT_EQ(r.per_class_iou[k].has_value(), ref.iou[k].has_value());
      if (ref.iou[k]) ASSERT_EQ(*r.per_class_iou[k], *ref.iou[k]);
    }
  }
}

TEST(ComputeMiou, AdditiveAndOrderInvariant) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<LabelMap> preds, gts;
    for (int k = 0; k < 4; ++k) {
      preds.push_back(oracle::random_labels(rng, 8, 8, 4));
      gts.push_back(oracle::random_blocky_labels(rng, 8, 8, 4));
    }
    const auto all = compute_miou(preds, gts, 4);
    EXPECT_EQ(all.confusion, compute_miou({stack(preds)}, {stack(gts)}, 4).confusion);
    ConfusionMatrix shards(4);
    ConfusionMatrix a(4), b(4);
    a.add(preds[0], gts[0]);
    a.add(preds[1], gts[1]);
    b.add(preds[2], gts[2]);
    b.add(preds[3], gts[3]);
    shards.merge(a);
    shards.merge(b);
    EXPECT_EQ(shards, all.confusion);
    std::vector<size_t> order{3, 1, 0, 2};
    std::vector<LabelMap> p2, g2;
    for (size_t i : order) {
      p2.push_back(preds[i]);
      g2.push_back(gts[i]);
    }
    EXPECT_EQ(compute_miou(p2, g2, 4).miou, all.miou);
  }
}

TEST(ComputeMiou, Errors) {
  EXPECT_THROW(compute_miou({}, {}, 3), ArgumentError);
  EXPECT_THROW(compute_miou({LabelMap(2, 2)}, {}, 3), ShapeError);
}

TEST(BoundaryStats, PerfectPredictionIsDegenerate) {
  Rng rng(4);
  const auto gt = oracle::random_blocky_labels(rng, 8, 8, 3);
  const auto r = boundary_error_stats(gt, gt, 2, 3);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.value, 0.0);
}

TEST(BoundaryStats, SingleErrorNextToBoundary) {
  LabelMap gt(8, 8, 0);
  for (int y = 0; y < 8; ++y) {
    for (int x = 4; x < 8; ++x) gt.at(y, x) = 1;
  }
  auto pred = gt;
  pred.at(3, 2) = 1;
  EXPECT_EQ(boundary_error_stats(pred, gt, 2, 2).value, 1.0);
}

TEST(BoundaryStats, HandEnumeratedHalfCase) {
  // Boundary pixels are columns 3 and 4; radius 1 covers columns 2..5.
  LabelMap gt(8, 8, 0);
  for (int y = 0; y < 8; ++y) {
    for (int x = 4; x < 8; ++x) gt.at(y, x) = 1;
  }
  auto pred = gt;
  pred.at(0, 3) = 1;  // on the boundary
  pred.at(5, 5) = 0;  // one pixel away
  pred.at(2, 0) = 1;  // interior
  pred.at(6, 7) = 0;  // interior
  const auto r = boundary_error_stats(pred, gt, 1, 2);
  EXPECT_FALSE(r.degenerate);
  EXPECT_DOUBLE_EQ(r.value, 0.5);
}

TEST(BoundaryStats, IgnorePixelsAreNotErrors) {
  LabelMap gt(8, 8, 0), pred(8, 8, 0);
  gt.at(4, 4) = 2;  // IGNORE for C=2
  pred.at(4, 4) = 1;
  EXPECT_TRUE(boundary_error_stats(pred, gt, 2, 2).degenerate);
  EXPECT_THROW(boundary_error_stats(pred, gt, 0, 2), ArgumentError);
}

TEST(BoundaryDistance, MatchesBruteForce) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto gt = oracle::random_blocky_labels(rng, rng.range(1, 12), rng.range(1, 12), 3);
    const auto d = boundary_distance(gt);
    const auto ref = oracle::boundary_distance(gt);
    ASSERT_EQ(d.size(), ref.size());
    EXPECT_EQ(d, ref);
    const auto band = boundary_band(gt, 2);
    for (size_t i = 0; i < d.size(); ++i) ASSERT_EQ(band.bits[i], ref[i] <= 2);
  }
}

TEST(BoundaryStats, PooledMatchesBruteForce) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<LabelMap> preds, gts;
    size_t near = 0, errors = 0;
    for (int k = 0; k < 3; ++k) {
      gts.push_back(oracle::random_blocky_labels(rng, 8, 8, 3));
      preds.push_back(oracle::random_labels(rng, 8, 8, 3));
      const auto d = oracle::boundary_distance(gts.back());
      for (size_t i = 0; i < d.size(); ++i) {
        if (preds.back().ids[i] == gts.back().ids[i]) continue;
        ++errors;
        near += d[i] <= 2;
      }
    }
    const auto r = boundary_error_stats(preds, gts, 2, 3);
    if (errors == 0) {
      EXPECT_TRUE(r.degenerate);
    } else {
      EXPECT_DOUBLE_EQ(r.value, static_cast<double>(near) / errors);
    }
  }
}

TEST(Variants, TablesMirrorTheAblationGrids) {
  const auto t3 = table3_variants();
  EXPECT_EQ(t3.size(), 8u);
  EXPECT_EQ(t3.front().name, "CMix only");
  EXPECT_FALSE(t3.front().htcm || t3.front().picl || t3.front().procl);
  EXPECT_TRUE(t3.back().htcm && t3.back().picl && t3.back().procl);
  const auto t4 = table4_variants();
  ASSERT_EQ(t4.size(), 6u);
  const double grid[] = {0.0, 0.35, 0.55, 0.75, 0.95, 0.97};
  for (size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(t4[i].tau, grid[i]);
    EXPECT_TRUE(t4[i].htcm && !t4[i].picl && !t4[i].procl);
  }
  const auto t5 = table5_variants();
  ASSERT_EQ(t5.size(), 2u);
  std::vector<std::string> names{t5[0].name, t5[1].name};
  std::sort(names.begin(), names.end());
  EXPECT_EQ(names, (std::vector<std::string>{"x_hts", "x_st"}));
  const auto cfg = t5[0].apply(TrainConfig{});
  EXPECT_EQ(to_string(cfg.contrast_on), t5[0].name);
}

TEST(AblationReport, RowsPerRunThenMeanAndStd) {
  AblationTable t;
  t.class_count = 2;
  for (uint64_t s : {1, 2, 3}) {
    t.runs.push_back(fake_run("CMix only", s, 0.4 + 0.1 * s));
    t.runs.push_back(fake_run("CMix+HTCM", s, 0.5));
  }
  t.rows = aggregate_runs(t.runs, {"CMix only", "CMix+HTCM"}, 2);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_NEAR(t.row("CMix only")->mean_miou, 0.6, 1e-12);
  EXPECT_NEAR(t.row("CMix only")->std_miou, 0.1, 1e-12);
  EXPECT_EQ(t.row("CMix+HTCM")->std_miou, 0.0);
  EXPECT_EQ(t.row("missing"), nullptr);
  std::ostringstream csv;
  write_ablation_csv(csv, t);
  std::vector<std::string> lines;
  std::istringstream in(csv.str());
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 1u + 6u + 4u);
  EXPECT_EQ(lines[0], "variant,seed,class_0,class_1,miou");
  EXPECT_EQ(lines[1].rfind("CMix only,1,", 0), 0u);
  EXPECT_NE(csv.str().find("CMix only,mean,"), std::string::npos);
  EXPECT_NE(csv.str().find("CMix only,std,"), std::string::npos);
  std::ostringstream jl;
  write_ablation_jsonl(jl, t);
  const std::string jtext = jl.str();
  EXPECT_GE(std::count(jtext.begin(), jtext.end(), '\n'), 6);
}

TEST(AblationHarness, ThreadCountDoesNotChangeResults) {
  BenchmarkShape shape;
  shape.n_source = shape.n_target = 6;
  shape.n_target_eval = 4;
  shape.n_source_eval = 0;
  shape.height = shape.width = 32;
  const auto data = make_benchmark(2, default_source_spec(5), default_target_spec(5), shape);
  TrainConfig base;
  base.max_iters = 4;
  base.warmup_iters = 4;
  base.eval_interval = 2;
  base.pixel_sample_n = 16;
  const std::vector<Variant> grid{table3_variants()[0], table3_variants()[7]};
  const auto one = run_ablation(data, base, grid, {1, 2}, 1);
  const auto two = run_ablation(data, base, grid, {1, 2}, 2);
  ASSERT_EQ(one.runs.size(), 4u);
  for (size_t i = 0; i < one.runs.size(); ++i) {
    EXPECT_EQ(one.runs[i].variant, two.runs[i].variant);
    EXPECT_EQ(one.runs[i].seed, two.runs[i].seed);
    EXPECT_EQ(one.runs[i].report.miou, two.runs[i].report.miou);
  }
  EXPECT_NE(one.row("CMix only"), nullptr);
}

TEST(ThreadsFromEnv, ParsesAndClamps) {
  ::setenv("UDA_MIXLAB_THREADS", "3", 1);
  EXPECT_EQ(worker_threads_from_env(), 3);
  ::setenv("UDA_MIXLAB_THREADS", "0", 1);
  EXPECT_EQ(worker_threads_from_env(), 1);
  ::unsetenv("UDA_MIXLAB_THREADS");
  EXPECT_EQ(worker_threads_from_env(), 1);
}
