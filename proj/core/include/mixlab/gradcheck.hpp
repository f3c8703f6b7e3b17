#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mixlab/model.hpp"
#include "mixlab/synthgen.hpp"
#include "mixlab/train.hpp"

namespace mixlab {

/// Finite-difference check of the analytic objective gradient (double precision).
struct GradCheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error. Central differences at eps=1e-5
  /// carry ~1e-10 of round-off, so smaller gradients are compared absolutely.
  double abs_floor = 1e-5;
};

struct GradCheckEntry {
  std::string term;
  size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  /// Perturbations that flipped at least one ReLU (finite differences invalid there).
  size_t kink_crossings = 0;
  bool passed = false;
};

/// A small complete training instance: 16x16 images, narrow network.
struct MicroInstance {
  ModelParams<double> student;
  ModelParams<double> teacher;
  LabeledImage source;
  Image target;
  TrainConfig cfg;
  uint64_t step_key = 0;
};

/// Builds a micro instance on which every loss term (including both
/// contrastive terms) is non-degenerate and no ReLU input lies within
/// `kink_margin` of zero.
MicroInstance make_micro_instance(uint64_t seed, int size = 16, double kink_margin = 1e-4);

/// Checks L_s, L_st, L_hts, L_pro, L_pixel and the weighted total.
GradCheckReport check_objective_gradients(const MicroInstance& inst, const GradCheckOptions& opt = {});

double relative_error(double analytic, double numeric, double floor);

}  // namespace mixlab
