#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mixlab/common.hpp"
#include "mixlab/model.hpp"
#include "mixlab/synthgen.hpp"
#include "mixlab/train.hpp"

namespace mixlab {

/// C x C pixel counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int class_count);

  /// Ground-truth ids outside [0, C) are ignored.
  void add(const LabelMap& pred, const LabelMap& gt);
  void merge(const ConfusionMatrix& other);

  int class_count() const { return classes_; }
  uint64_t at(int gt, int pred) const { return counts_[static_cast<size_t>(gt) * classes_ + pred]; }
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int classes_;
  std::vector<uint64_t> counts_;
};

struct EvalReport {
  ConfusionMatrix confusion{2};
  /// Undefined when the class is absent from both prediction and ground truth.
  std::vector<std::optional<double>> per_class_iou;
  double miou = 0.0;
  double boundary_error_fraction = 0.0;
};

EvalReport report_from_confusion(const ConfusionMatrix& cm);

EvalReport compute_miou(const std::vector<LabelMap>& predictions,
                        const std::vector<LabelMap>& ground_truths, int class_count);

/// Fraction of mispredicted (non-ignore) pixels within Chebyshev distance
/// `radius` of a ground-truth boundary pixel. Degenerate when there are no errors.
ScalarResult boundary_error_stats(const LabelMap& pred, const LabelMap& gt, int radius,
                                  int class_count);

/// Boundary statistics pooled over several images.
ScalarResult boundary_error_stats(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                                  int radius, int class_count);

/// Pixels within Chebyshev distance `radius` of a ground-truth boundary.
MixMask boundary_band(const LabelMap& gt, int radius);

LabelMap predict_labels(const ModelParams<float>& params, const Image& image);

/// mIoU of `params` on labeled scenes, with boundary error fraction at radius 2.
EvalReport evaluate_model(const ModelParams<float>& params, const std::vector<LabeledImage>& scenes,
                          int boundary_radius = 2);

/// Error-rate diagnostics under a confidence threshold.
struct ConfidenceErrorStats {
  double overall_error_rate = 0.0;
  double confident_error_rate = 0.0;
  double confident_fraction = 0.0;
  double boundary_error_fraction = 0.0;
  /// Histogram of error-pixel distance to the nearest boundary (last bin = farther).
  std::vector<uint64_t> distance_histogram;
};

ConfidenceErrorStats confidence_error_stats(const ModelParams<float>& params,
                                            const std::vector<LabeledImage>& scenes, double tau,
                                            int radius, int max_distance = 8);

/// Chebyshev distance from every pixel to the nearest ground-truth boundary pixel.
std::vector<int> boundary_distance(const LabelMap& gt);

// ---- ablation harness ----------------------------------------------------

struct Variant {
  std::string name;
  bool htcm = false;
  bool picl = false;
  bool procl = false;
  double tau = 0.95;
  ContrastTarget contrast_on = ContrastTarget::kClassMix;

  TrainConfig apply(TrainConfig cfg) const;
};

/// CMix with every subset of {PiCL, ProCL, HTCM}.
std::vector<Variant> table3_variants();
/// CMix + HTCM over a threshold grid.
std::vector<Variant> table4_variants(const std::vector<double>& taus = {0.0, 0.35, 0.55, 0.75, 0.95, 0.97});
/// Full method with the contrastive branch on x_hts and on x_st.
std::vector<Variant> table5_variants();

struct AblationRun {
  std::string variant;
  uint64_t seed = 0;
  EvalReport report;
  int best_iter = 0;
  int iterations_run = 0;
};

struct AblationRow {
  std::string variant;
  int runs = 0;
  double mean_miou = 0.0;
  double std_miou = 0.0;
  std::vector<double> mean_class_iou;  // NaN when undefined in every run
};

struct AblationTable {
  int class_count = 0;
  std::vector<AblationRun> runs;
  std::vector<AblationRow> rows;

  const AblationRow* row(const std::string& variant) const;
};

/// One full training run per (variant, seed). Runs are distributed over
/// `threads` workers; results do not depend on the thread count.
AblationTable run_ablation(const DatasetPair& benchmark, const TrainConfig& base,
                           const std::vector<Variant>& variants, const std::vector<uint64_t>& seeds,
                           int threads = 1);

std::vector<AblationRow> aggregate_runs(const std::vector<AblationRun>& runs,
                                        const std::vector<std::string>& order, int class_count);

/// Per-class IoU columns plus mIoU; one line per run, then mean and std rows.
void write_ablation_csv(std::ostream& out, const AblationTable& table);
void write_ablation_jsonl(std::ostream& out, const AblationTable& table);
void write_report_csv(std::ostream& out, const EvalReport& report);

/// UDA_MIXLAB_THREADS if set (>= 1), otherwise 1.
int worker_threads_from_env();

}  // namespace mixlab
