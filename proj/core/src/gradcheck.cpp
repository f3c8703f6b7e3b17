#include "mixlab/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace mixlab {
namespace {

constexpr std::array<const char*, 6> kTerms = {"l_s", "l_st", "l_hts", "l_pro", "l_pixel", "total"};

ObjectiveWeights term_weights(size_t term, const TrainConfig& cfg) {
  ObjectiveWeights w{0, 0, 0, 0, 0};
  switch (term) {
    case 0: w.s = 1; break;
    case 1: w.st = 1; break;
    case 2: w.hts = 1; break;
    case 3: w.pro = 1; break;
    case 4: w.pixel = 1; break;
    default: w = ObjectiveWeights::from_config(cfg); break;
  }
  return w;
}

double weighted(const LossBreakdown& lb, const ObjectiveWeights& w) {
  return w.s * lb.l_s + w.st * lb.l_st + w.hts * lb.l_hts + w.pro * lb.l_pro + w.pixel * lb.l_pixel;
}

std::string param_name(const ModelParams<double>& p, size_t flat) {
  for (const auto& t : p.tensors) {
    if (flat < t.size()) return t.name + "[" + std::to_string(flat) + "]";
    flat -= t.size();
  }
  return "?";
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

MicroInstance make_micro_instance(uint64_t seed, int size, double kink_margin) {
  MicroInstance inst;
  inst.cfg.arch.widths = {4, 6, 8};
  inst.cfg.arch.residual_blocks = 2;
  inst.cfg.arch.class_count = 3;
  inst.cfg.tau = 0.0;
  inst.cfg.seed = seed;
  inst.cfg.pixel_sample_n = 128;
  inst.cfg.use_htcm = inst.cfg.use_procl = inst.cfg.use_picl = true;
  const int n_classes = inst.cfg.arch.class_count;
  inst.student = init_params<double>(seed, inst.cfg.arch);
  inst.teacher = init_params<double>(seed + 1000, inst.cfg.arch);
  const auto src_spec = default_source_spec(n_classes);
  const auto tgt_spec = default_target_spec(n_classes);
  // Search for a scene pair on which every term is non-degenerate.
  for (uint64_t k = 0; k < 10000; ++k) {
    inst.source = generate_scene(seed * 7919 + k, src_spec, size, size, n_classes);
    inst.target = generate_scene(seed * 7919 + k + 500000, tgt_spec, size, size, n_classes).pixels;
    inst.step_key = k;
    ActivationProbe probe;
    set_activation_probe(&probe);
    const auto lb = evaluate_objective<double>(inst.student, inst.teacher, inst.source, inst.target,
                                               inst.cfg, ObjectiveWeights::from_config(inst.cfg),
                                               inst.step_key, nullptr);
    set_activation_probe(nullptr);
    if (lb.l_pro > 0.0 && lb.l_pixel > 0.0 && lb.l_hts > 0.0 && probe.min_abs_pre > kink_margin) {
      return inst;
    }
  }
  throw std::runtime_error("make_micro_instance: no non-degenerate scene found");
}

GradCheckReport check_objective_gradients(const MicroInstance& inst, const GradCheckOptions& opt) {
  GradCheckReport report;
  report.passed = true;
  FrozenTargets<double> frozen;
  std::vector<ModelParams<double>> analytic;
  for (size_t t = 0; t < kTerms.size(); ++t) {
    ModelParams<double> g = inst.student.zeros_like();
    evaluate_objective<double>(inst.student, inst.teacher, inst.source, inst.target, inst.cfg,
                               term_weights(t, inst.cfg), inst.step_key, &g, &frozen);
    analytic.push_back(std::move(g));
  }
  for (const char* name : kTerms) {
    GradCheckEntry e;
    e.term = name;
    report.entries.push_back(e);
  }

  ModelParams<double> theta = inst.student;
  const size_t n = theta.total_size();
  ActivationProbe probe;
  set_activation_probe(&probe);
  const auto eval = [&]() {
    probe = ActivationProbe{};
    return evaluate_objective<double>(theta, inst.teacher, inst.source, inst.target, inst.cfg,
                                      ObjectiveWeights::from_config(inst.cfg), inst.step_key, nullptr,
                                      &frozen);
  };
  eval();
  const uint64_t pattern = probe.pattern_hash;
  for (size_t i = 0; i < n; ++i) {
    const double orig = theta.flat(i);
    theta.flat(i) = orig + opt.eps;
    const auto plus = eval();
    bool crossed = probe.pattern_hash != pattern;
    theta.flat(i) = orig - opt.eps;
    const auto minus = eval();
    crossed = crossed || probe.pattern_hash != pattern;
    theta.flat(i) = orig;
    if (crossed) ++report.kink_crossings;
    for (size_t t = 0; t < kTerms.size(); ++t) {
      const auto w = term_weights(t, inst.cfg);
      const double numeric = (weighted(plus, w) - weighted(minus, w)) / (2.0 * opt.eps);
      const double a = analytic[t].flat(i);
      const double rel = relative_error(a, numeric, opt.abs_floor);
      auto& e = report.entries[t];
      ++e.checked;
      e.max_abs_grad = std::max(e.max_abs_grad, std::abs(a));
      if (rel > e.max_rel_error) {
        e.max_rel_error = rel;
        e.worst_param = param_name(theta, i);
        e.worst_analytic = a;
        e.worst_numeric = numeric;
      }
    }
  }
  set_activation_probe(nullptr);
  for (auto& e : report.entries) {
    e.passed = e.max_rel_error < opt.tolerance;
    report.passed = report.passed && e.passed;
  }
  return report;
}

}  // namespace mixlab
