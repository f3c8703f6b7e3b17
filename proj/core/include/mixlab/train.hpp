#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mixlab/common.hpp"
#include "mixlab/contrast.hpp"
#include "mixlab/model.hpp"
#include "mixlab/synthgen.hpp"

namespace mixlab {

/// Which mixed image feeds the contrastive branch.
enum class ContrastTarget { kClassMix, kHighConfidenceMix };

const char* to_string(ContrastTarget t);
ContrastTarget contrast_target_from_string(const std::string& s);

struct TrainConfig {
  double tau = 0.95;
  double lambda1 = 0.1;
  double lambda2 = 0.01;
  double s1 = 7.0;
  double s2 = 20.0;
  double base_lr_encoder = 0.01;
  double base_lr_head = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double poly_power = 0.9;
  int max_iters = 3000;
  int warmup_iters = 300;
  double ema_momentum = 0.99;
  int pixel_sample_n = 128;
  uint64_t seed = 1;

  bool use_htcm = true;
  bool use_procl = true;
  bool use_picl = true;
  ContrastTarget contrast_on = ContrastTarget::kClassMix;
  /// Replace pseudo-labels at or below tau with IGNORE in the ClassMix loss.
  bool filter_cmix_pseudo = false;
  bool freeze_classifier_in_contrast = false;

  int grad_accum = 1;
  int eval_interval = 250;
  /// Stop when eval mIoU has not improved for this many iterations (0 disables).
  int early_stop_patience = 500;
  /// Score the EMA teacher (rather than the student) for evaluation and best-snapshot selection.
  bool eval_teacher = true;

  ArchSpec arch;

  void validate() const;
};

struct LossBreakdown {
  double l_s = 0.0;
  double l_st = 0.0;
  double l_hts = 0.0;
  double l_pro = 0.0;
  double l_pixel = 0.0;
  double total = 0.0;
};

/// Mean cross-entropy over labels in [0, class_count); other ids are ignored.
ScalarResult ce_seg_loss(const SoftPrediction& pred, const LabelMap& labels);

/// L_s + lambda1 (L_st + L_hts) + lambda2 (L_pro + L_pixel). Throws
/// DivergenceError on a non-finite component.
double total_loss(const LossBreakdown& parts, double lambda1, double lambda2);

/// base_lr * (1 - iter / max_iters)^power
double poly_lr(int iter, int max_iters, double base_lr, double power);

/// Per-term gradient weights of the objective.
struct ObjectiveWeights {
  double s = 1.0;
  double st = 0.0;
  double hts = 0.0;
  double pro = 0.0;
  double pixel = 0.0;

  static ObjectiveWeights from_config(const TrainConfig& cfg);
};

/// Other-view prototypes held fixed (the gradient-blocked targets).
template <typename T>
struct FrozenTargets {
  bool captured = false;
  PrototypeSet<T> view1;
  PrototypeSet<T> view2;
};

/// Evaluates every loss term of one iteration and accumulates the weighted
/// gradient into `grads` (if non-null). All randomness is keyed by
/// (cfg.seed, step_key), so repeated calls with perturbed parameters see
/// identical masks, views and samples. When `frozen` is given and not yet
/// captured, the stop-gradient prototypes are recorded; once captured they are
/// reused instead of being recomputed.
template <typename T>
LossBreakdown evaluate_objective(const ModelParams<T>& student, const ModelParams<T>& teacher,
                                 const LabeledImage& source, const Image& target,
                                 const TrainConfig& cfg, const ObjectiveWeights& weights,
                                 uint64_t step_key, ModelParams<T>* grads,
                                 FrozenTargets<T>* frozen = nullptr);

/// SGD with momentum and decoupled per-group learning rates; weight decay is
/// not applied to biases.
template <typename T>
struct SgdState {
  ModelParams<T> velocity;

  void step(ModelParams<T>& params, const ModelParams<T>& grads, double lr_encoder, double lr_head,
            double momentum, double weight_decay);
};

struct MetricsRecord {
  int iter = 0;
  double lr = 0.0;
  LossBreakdown loss;
};

void write_metrics_jsonl(std::ostream& out, const MetricsRecord& rec);

template <typename T>
struct TrainState {
  ModelParams<T> student;
  TeacherState<T> teacher;
  SgdState<T> optimizer;
  int iter = 0;
  std::vector<MetricsRecord> history;
};

template <typename T>
TrainState<T> init_train_state(const TrainConfig& cfg);

/// Source-only steps minimizing L_s; the teacher becomes a copy of the student.
template <typename T>
TrainState<T> warmup(TrainState<T> state, const DatasetPair& data, const TrainConfig& cfg);

/// One adaptation iteration on the given source batch and target images
/// (target labels are never read).
template <typename T>
LossBreakdown train_step(TrainState<T>& state, const std::vector<const LabeledImage*>& source_batch,
                         const std::vector<const Image*>& target_batch, const TrainConfig& cfg);

struct EvalPoint {
  int iter = 0;
  double miou = 0.0;
};

struct TrainResult {
  /// Evaluated weights (teacher or student) at the best evaluation point.
  ModelParams<float> best_model;
  ModelParams<float> final_student;
  std::vector<MetricsRecord> history;
  std::vector<EvalPoint> evals;
  double best_miou = 0.0;
  int best_iter = 0;
  int iterations_run = 0;
};

struct TrainHooks {
  std::function<void(const MetricsRecord&)> on_step;
  std::function<void(const EvalPoint&)> on_eval;
  /// Called every `checkpoint_every` iterations with the current student.
  std::function<void(int, const ModelParams<float>&)> on_checkpoint;
  int checkpoint_every = 0;
};

/// Warm-up followed by adaptation with periodic target evaluation and early
/// stopping; returns the best-scoring student snapshot.
TrainResult train_model(const DatasetPair& data, const TrainConfig& cfg, const TrainHooks& hooks = {});

}  // namespace mixlab
