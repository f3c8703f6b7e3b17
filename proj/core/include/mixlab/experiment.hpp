#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "mixlab/eval.hpp"
#include "mixlab/kvconfig.hpp"
#include "mixlab/synthgen.hpp"
#include "mixlab/train.hpp"

namespace mixlab {

/// Everything a run needs: benchmark, training, ablation grid and outputs.
struct ExperimentConfig {
  DomainSpec source = default_source_spec(5);
  DomainSpec target = default_target_spec(5);
  BenchmarkShape shape;
  uint64_t benchmark_seed = 7;
  TrainConfig train;
  /// "", "table3", "table4" or "table5".
  std::string ablation;
  std::vector<double> tau_grid{0.0, 0.35, 0.55, 0.75, 0.95, 0.97};
  std::vector<uint64_t> seeds{1};
  std::string out_dir = "runs/default";
  int checkpoint_every = 1000;
  int boundary_radius = 2;

  void validate() const;
  KvDocument to_document() const;
  std::string to_text() const;
  static ExperimentConfig from_document(const KvDocument& doc);
  static ExperimentConfig from_text(const std::string& text);
  static ExperimentConfig load(const std::string& path);

  bool operator==(const ExperimentConfig& o) const { return to_text() == o.to_text(); }
};

void write_train_config(KvDocument& doc, const std::string& section, const TrainConfig& cfg);
TrainConfig read_train_config(const KvDocument& doc, const std::string& section, const TrainConfig& fallback);

std::vector<Variant> ablation_variants(const ExperimentConfig& cfg);

struct RunSummary {
  std::vector<std::string> files;
  int warnings = 0;
  double miou = 0.0;
};

/// Single training run per seed (seed_<n>/ subdirectories when more than one
/// seed is given): metrics.jsonl, evals.jsonl, report.csv, report.jsonl,
/// checkpoints/*.ckpt and plots/*.png.
RunSummary run_experiment(const ExperimentConfig& cfg, std::ostream& log);

/// Ablation grid: report.csv (one row per variant x seed, then mean and std
/// rows), report.jsonl, plus a threshold-sweep plot for table4.
RunSummary run_ablation_experiment(const ExperimentConfig& cfg, std::ostream& log);

/// Loads a checkpoint and scores it on the target evaluation split.
EvalReport evaluate_checkpoint(const ExperimentConfig& cfg, const std::string& checkpoint_path);

/// Writes `count` scenes per domain as PNG (or PPM) images plus label PNGs.
RunSummary generate_dataset(const ExperimentConfig& cfg, const std::string& out_dir, int count, bool ppm);

DatasetPair make_experiment_benchmark(const ExperimentConfig& cfg);

}  // namespace mixlab
