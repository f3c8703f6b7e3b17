#include "mixlab/train.hpp"

#include <cfloat>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mixlab/eval.hpp"
#include "mixlab/mix.hpp"
#include "mixlab/pseudo.hpp"

namespace mixlab {
namespace {

// Independent random streams per purpose, so that enabling one branch never
// shifts the draws seen by another.
enum Stream : uint64_t {
  kStreamData = 1,
  kStreamClassMix = 2,
  kStreamViews = 3,
  kStreamPixels = 4,
  kStreamWarmup = 5,
};

constexpr int kFeatureStride = 8;

/// Cross-entropy on a forward pass; accumulates `weight * dCE/dlogits` into grads.
template <typename T>
double ce_with_grad(const ModelParams<T>& params, const ForwardPass<T>& pass, const LabelMap& labels,
                    double weight, ModelParams<T>* grads) {
  const auto ce = ce_seg_loss(pass.pred, labels);
  if (ce.degenerate || !grads || weight == 0.0) return ce.value;
  const auto& p = pass.pred.probs;
  const int c_count = p.channels;
  const size_t plane = p.plane();
  size_t n_valid = 0;
  for (int id : labels.ids) n_valid += (id >= 0 && id < c_count) ? 1 : 0;
  const double scale = weight / static_cast<double>(n_valid);
  Tensor3<T> d_logits(p.channels, p.height, p.width);
  for (size_t i = 0; i < plane; ++i) {
    const int y = labels.ids[i];
    if (y < 0 || y >= c_count) continue;
    for (int c = 0; c < c_count; ++c) {
      const size_t k = static_cast<size_t>(c) * plane + i;
      d_logits.v[k] = static_cast<T>(scale * (p.v[k] - (c == y ? 1.0 : 0.0)));
    }
  }
  backward<T>(params, pass, &d_logits, nullptr, *grads);
  return ce.value;
}

void check_finite(const LossBreakdown& lb, int iter) {
  for (double v : {lb.l_s, lb.l_st, lb.l_hts, lb.l_pro, lb.l_pixel, lb.total}) {
    if (!std::isfinite(v)) {
      std::ostringstream msg;
      msg << "non-finite loss at iteration " << iter << ": l_s=" << lb.l_s << " l_st=" << lb.l_st
          << " l_hts=" << lb.l_hts << " l_pro=" << lb.l_pro << " l_pixel=" << lb.l_pixel
          << " total=" << lb.total;
      throw DivergenceError(msg.str());
    }
  }
}

}  // namespace

const char* to_string(ContrastTarget t) {
  return t == ContrastTarget::kClassMix ? "x_st" : "x_hts";
}

ContrastTarget contrast_target_from_string(const std::string& s) {
  if (s == "x_st") return ContrastTarget::kClassMix;
  if (s == "x_hts") return ContrastTarget::kHighConfidenceMix;
  throw ArgumentError("contrast target must be x_st or x_hts, got '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(tau >= 0.0 && tau < 1.0)) throw ArgumentError("tau must satisfy 0 <= tau < 1");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ArgumentError("lambda1 and lambda2 must be >= 0");
  if (!(poly_power > 0.0)) throw ArgumentError("poly_power must be > 0");
  if (!(s1 > 0.0) || !(s2 > 0.0)) throw ArgumentError("s1 and s2 must be > 0");
  if (!(base_lr_encoder >= 0.0) || !(base_lr_head >= 0.0)) throw ArgumentError("learning rates must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ArgumentError("momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw ArgumentError("weight_decay must be >= 0");
  if (max_iters < 1) throw ArgumentError("max_iters must be >= 1");
  if (warmup_iters < 0) throw ArgumentError("warmup_iters must be >= 0");
  if (!(ema_momentum >= 0.0 && ema_momentum < 1.0)) throw ArgumentError("ema_momentum must be in [0,1)");
  if (pixel_sample_n < 0) throw ArgumentError("pixel_sample_n must be >= 0");
  if (grad_accum < 1) throw ArgumentError("grad_accum must be >= 1");
  if (eval_interval < 1) throw ArgumentError("eval_interval must be >= 1");
  if (early_stop_patience < 0) throw ArgumentError("early_stop_patience must be >= 0");
  arch.validate();
}

ScalarResult ce_seg_loss(const SoftPrediction& pred, const LabelMap& labels) {
  const auto& p = pred.probs;
  if (labels.height != p.height || labels.width != p.width) throw ShapeError("ce_seg_loss: shape mismatch");
  const size_t plane = p.plane();
  double sum = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < plane; ++i) {
    const int y = labels.ids[i];
    if (y < 0 || y >= p.channels) continue;
    sum -= std::log(std::max(p.v[static_cast<size_t>(y) * plane + i], DBL_MIN));
    ++n;
  }
  if (n == 0) return {0.0, true};
  return {sum / static_cast<double>(n), false};
}

double total_loss(const LossBreakdown& parts, double lambda1, double lambda2) {
  for (double v : {parts.l_s, parts.l_st, parts.l_hts, parts.l_pro, parts.l_pixel}) {
    if (!std::isfinite(v)) throw DivergenceError("total_loss: non-finite loss component");
  }
  return parts.l_s + lambda1 * (parts.l_st + parts.l_hts) + lambda2 * (parts.l_pro + parts.l_pixel);
}

double poly_lr(int iter, int max_iters, double base_lr, double power) {
  if (max_iters < 1) throw ArgumentError("poly_lr: max_iters must be >= 1");
  if (iter < 0 || iter > max_iters) {
    throw ArgumentError("poly_lr: iter " + std::to_string(iter) + " outside [0, " +
                        std::to_string(max_iters) + "]");
  }
  if (!(power > 0.0)) throw ArgumentError("poly_lr: power must be > 0");
  return base_lr * std::pow(1.0 - static_cast<double>(iter) / max_iters, power);
}

ObjectiveWeights ObjectiveWeights::from_config(const TrainConfig& cfg) {
  ObjectiveWeights w;
  w.s = 1.0;
  w.st = cfg.lambda1;
  w.hts = cfg.use_htcm ? cfg.lambda1 : 0.0;
  w.pro = cfg.use_procl ? cfg.lambda2 : 0.0;
  w.pixel = cfg.use_picl ? cfg.lambda2 : 0.0;
  return w;
}

template <typename T>
LossBreakdown evaluate_objective(const ModelParams<T>& student, const ModelParams<T>& teacher,
                                 const LabeledImage& source, const Image& target,
                                 const TrainConfig& cfg, const ObjectiveWeights& weights,
                                 uint64_t step_key, ModelParams<T>* grads, FrozenTargets<T>* frozen) {
  const int n_classes = cfg.arch.class_count;
  LossBreakdown lb;

  // Online pseudo-labels from the teacher.
  const auto teacher_pass = forward(teacher, target);
  const PseudoLabel target_pl = pseudo_label(teacher_pass.pred);
  const LabeledImage target_labeled{target, target_pl.labels, 0};

  // ClassMix: source classes pasted onto the target.
  Rng mix_rng = Rng::keyed(cfg.seed, step_key, kStreamClassMix);
  const MixMask m_s = sample_classmix_mask(source.labels, n_classes, mix_rng);
  LabeledImage cmix_base = target_labeled;
  if (cfg.filter_cmix_pseudo) cmix_base.labels = filter_low_confidence(target_pl, cfg.tau, n_classes);
  const MixedSample x_st = compose_mixed_sample(cmix_base, source, m_s);

  // HTCM: confident target pixels pasted onto the source.
  const bool contrast_on_hts = cfg.contrast_on == ContrastTarget::kHighConfidenceMix;
  const bool need_hts = cfg.use_htcm || ((cfg.use_procl || cfg.use_picl) && contrast_on_hts);
  MixMask m_ht;
  MixedSample x_hts;
  if (need_hts) {
    m_ht = confidence_mask(target_pl, cfg.tau);
    x_hts = compose_mixed_sample(source, target_labeled, m_ht);
  }

  {
    const auto pass = forward(student, source.pixels);
    lb.l_s = ce_with_grad(student, pass, source.labels, weights.s, grads);
  }
  {
    const auto pass = forward(student, x_st.pixels);
    lb.l_st = ce_with_grad(student, pass, x_st.labels, weights.st, grads);
  }
  if (cfg.use_htcm) {
    const auto pass = forward(student, x_hts.pixels);
    lb.l_hts = ce_with_grad(student, pass, x_hts.labels, weights.hts, grads);
  }

  if (cfg.use_procl || cfg.use_picl) {
    const Image& mixed = contrast_on_hts ? x_hts.pixels : x_st.pixels;
    const PseudoLabel source_pl = certain_pseudo_label(source.labels);
    const PseudoLabel mixed_pl = contrast_on_hts ? compose_pseudo_label(source_pl, target_pl, m_ht)
                                                 : compose_pseudo_label(target_pl, source_pl, m_s);
    Rng view_rng = Rng::keyed(cfg.seed, step_key, kStreamViews);
    const ViewPair views = make_view_pair(mixed, view_rng);
    const auto enc1 = encode(student, views.view1);
    const auto enc2 = encode(student, views.view2);
    const auto& f1 = enc1.features();
    const auto& f2 = enc2.features();

    std::vector<MixMask> masks;
    for (const auto& m : class_confidence_masks(mixed_pl, n_classes, cfg.tau)) {
      masks.push_back(downsample_nearest(m, kFeatureStride));
    }
    FeatureMap<T> df1(f1.channels, f1.height, f1.width);
    FeatureMap<T> df2 = df1;
    bool feature_grads = false;
    const bool cls_grads = !cfg.freeze_classifier_in_contrast;

    if (cfg.use_procl) {
      const auto ps1 = compute_prototypes(f1, masks);
      const auto ps2 = compute_prototypes(f2, masks);
      if (frozen && !frozen->captured) {
        frozen->view1 = ps1;
        frozen->view2 = ps2;
        frozen->captured = true;
      }
      ModelParams<T> g_cls;
      const bool want = grads && weights.pro != 0.0;
      if (want) g_cls = student.zeros_like();
      auto res = proto_contrastive_loss(ps1, ps2, student, cfg.s1, want ? &g_cls : nullptr, cls_grads,
                                        frozen ? &frozen->view1 : nullptr,
                                        frozen ? &frozen->view2 : nullptr);
      lb.l_pro = res.loss;
      if (want && !res.degenerate) {
        const T w = static_cast<T>(weights.pro);
        for (auto* dv : {&res.d_view1, &res.d_view2}) {
          for (auto& v : *dv) {
            for (auto& x : v) x *= w;
          }
        }
        prototypes_backward(ps1, masks, res.d_view1, df1);
        prototypes_backward(ps2, masks, res.d_view2, df2);
        grads->add_scaled(g_cls, w);
        feature_grads = true;
      }
    }

    if (cfg.use_picl) {
      MixMask confident(f1.height, f1.width);
      for (const auto& m : masks) {
        for (size_t i = 0; i < m.size(); ++i) confident.bits[i] |= m.bits[i];
      }
      Rng pix_rng = Rng::keyed(cfg.seed, step_key, kStreamPixels);
      const auto positions = sample_positions(confident, cfg.pixel_sample_n, pix_rng);
      ModelParams<T> g_cls;
      const bool want = grads && weights.pixel != 0.0;
      if (want) g_cls = student.zeros_like();
      auto res = pixel_contrastive_loss(f1, f2, student, cfg.s2, positions, want ? &g_cls : nullptr,
                                        cls_grads);
      lb.l_pixel = res.loss;
      if (want && !res.degenerate) {
        const T w = static_cast<T>(weights.pixel);
        const size_t plane = f1.plane();
        for (size_t k = 0; k < positions.size(); ++k) {
          const auto p = static_cast<size_t>(positions[k]);
          for (int d = 0; d < f1.channels; ++d) {
            df1.v[static_cast<size_t>(d) * plane + p] += w * res.d_view1[k][static_cast<size_t>(d)];
            df2.v[static_cast<size_t>(d) * plane + p] += w * res.d_view2[k][static_cast<size_t>(d)];
          }
        }
        grads->add_scaled(g_cls, w);
        feature_grads = true;
      }
    }

    if (feature_grads) {
      backward<T>(student, enc1, nullptr, &df1, *grads);
      backward<T>(student, enc2, nullptr, &df2, *grads);
    }
  }

  lb.total = lb.l_s + cfg.lambda1 * (lb.l_st + lb.l_hts) + cfg.lambda2 * (lb.l_pro + lb.l_pixel);
  return lb;
}

template <typename T>
void SgdState<T>::step(ModelParams<T>& params, const ModelParams<T>& grads, double lr_encoder,
                       double lr_head, double momentum, double weight_decay) {
  if (velocity.tensors.empty()) velocity = params.zeros_like();
  if (!params.same_shapes(grads) || !params.same_shapes(velocity)) {
    throw ShapeError("SgdState::step: shape mismatch");
  }
  const T mu = static_cast<T>(momentum);
  for (size_t i = 0; i < params.tensors.size(); ++i) {
    auto& p = params.tensors[i];
    const auto& g = grads.tensors[i].values;
    auto& v = velocity.tensors[i].values;
    const T lr = static_cast<T>(p.is_head ? lr_head : lr_encoder);
    const T wd = static_cast<T>(p.is_bias ? 0.0 : weight_decay);
    for (size_t j = 0; j < p.values.size(); ++j) {
      v[j] = mu * v[j] + (g[j] + wd * p.values[j]);
      p.values[j] -= lr * v[j];
    }
  }
}

void write_metrics_jsonl(std::ostream& out, const MetricsRecord& rec) {
  nlohmann::ordered_json j;
  j["iter"] = rec.iter;
  j["lr"] = rec.lr;
  j["l_s"] = rec.loss.l_s;
  j["l_st"] = rec.loss.l_st;
  j["l_hts"] = rec.loss.l_hts;
  j["l_pro"] = rec.loss.l_pro;
  j["l_pixel"] = rec.loss.l_pixel;
  j["total"] = rec.loss.total;
  out << j.dump() << "\n";
}

template <typename T>
TrainState<T> init_train_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState<T> s;
  s.student = init_params<T>(cfg.seed, cfg.arch);
  s.teacher = TeacherState<T>{s.student, cfg.ema_momentum};
  s.optimizer.velocity = s.student.zeros_like();
  return s;
}

template <typename T>
TrainState<T> warmup(TrainState<T> state, const DatasetPair& data, const TrainConfig& cfg) {
  if (cfg.warmup_iters < 0) throw ArgumentError("warmup_iters must be >= 0");
  if (cfg.warmup_iters > 0 && data.source.empty()) throw ArgumentError("warmup: empty source split");
  ModelParams<T> grads = state.student.zeros_like();
  for (int k = 0; k < cfg.warmup_iters; ++k) {
    Rng rng = Rng::keyed(cfg.seed, static_cast<uint64_t>(k), kStreamWarmup);
    grads.set_zero();
    for (int b = 0; b < cfg.grad_accum; ++b) {
      const auto& src = data.source[rng.below(data.source.size())];
      const auto pass = forward(state.student, src.pixels);
      ce_with_grad(state.student, pass, src.labels, 1.0 / cfg.grad_accum, &grads);
    }
    state.optimizer.step(state.student, grads, cfg.base_lr_encoder, cfg.base_lr_head, cfg.momentum,
                         cfg.weight_decay);
  }
  if (!state.student.all_finite()) throw DivergenceError("warmup: parameters became non-finite");
  state.teacher = TeacherState<T>{state.student, cfg.ema_momentum};
  state.optimizer.velocity = state.student.zeros_like();
  return state;
}

template <typename T>
LossBreakdown train_step(TrainState<T>& state, const std::vector<const LabeledImage*>& source_batch,
                         const std::vector<const Image*>& target_batch, const TrainConfig& cfg) {
  if (source_batch.empty() || target_batch.empty()) throw ArgumentError("train_step: empty batch");
  if (state.iter >= cfg.max_iters) throw ArgumentError("train_step: max_iters reached");
  const double lr_enc = poly_lr(state.iter, cfg.max_iters, cfg.base_lr_encoder, cfg.poly_power);
  const double lr_head = poly_lr(state.iter, cfg.max_iters, cfg.base_lr_head, cfg.poly_power);

  const size_t n = std::max(source_batch.size(), target_batch.size());
  ObjectiveWeights w = ObjectiveWeights::from_config(cfg);
  const double inv = 1.0 / static_cast<double>(n);
  w.s *= inv;
  w.st *= inv;
  w.hts *= inv;
  w.pro *= inv;
  w.pixel *= inv;

  ModelParams<T> grads = state.student.zeros_like();
  LossBreakdown mean;
  for (size_t b = 0; b < n; ++b) {
    const uint64_t key = static_cast<uint64_t>(state.iter) * 4096 + b;
    const auto lb = evaluate_objective(state.student, state.teacher.params,
                                       *source_batch[b % source_batch.size()],
                                       *target_batch[b % target_batch.size()], cfg, w, key, &grads);
    mean.l_s += lb.l_s * inv;
    mean.l_st += lb.l_st * inv;
    mean.l_hts += lb.l_hts * inv;
    mean.l_pro += lb.l_pro * inv;
    mean.l_pixel += lb.l_pixel * inv;
  }
  mean.total = mean.l_s + cfg.lambda1 * (mean.l_st + mean.l_hts) + cfg.lambda2 * (mean.l_pro + mean.l_pixel);
  check_finite(mean, state.iter);
  if (!grads.all_finite()) throw DivergenceError("non-finite gradient at iteration " + std::to_string(state.iter));

  state.optimizer.step(state.student, grads, lr_enc, lr_head, cfg.momentum, cfg.weight_decay);
  state.teacher = ema_update(state.teacher, state.student);
  state.history.push_back({state.iter, lr_enc, mean});
  ++state.iter;
  return mean;
}

TrainResult train_model(const DatasetPair& data, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (data.source.empty() || data.target.empty()) throw ArgumentError("train_model: empty dataset split");
  if (data.class_count != cfg.arch.class_count) {
    throw ArgumentError("train_model: dataset and model class counts differ");
  }
  TrainState<float> state = warmup(init_train_state<float>(cfg), data, cfg);

  TrainResult result;
  auto evaluate = [&](int iter) {
    EvalPoint pt{iter, 0.0};
    const ModelParams<float>& scored = cfg.eval_teacher ? state.teacher.params : state.student;
    if (!data.target_eval.empty()) pt.miou = evaluate_model(scored, data.target_eval).miou;
    result.evals.push_back(pt);
    if (hooks.on_eval) hooks.on_eval(pt);
    if (result.evals.size() == 1 || pt.miou > result.best_miou) {
      result.best_miou = pt.miou;
      result.best_iter = iter;
      result.best_model = scored;
    }
  };

  evaluate(0);
  while (state.iter < cfg.max_iters) {
    Rng rng = Rng::keyed(cfg.seed, static_cast<uint64_t>(state.iter), kStreamData);
    std::vector<const LabeledImage*> src;
    std::vector<const Image*> tgt;
    for (int b = 0; b < cfg.grad_accum; ++b) {
      src.push_back(&data.source[rng.below(data.source.size())]);
      tgt.push_back(&data.target[rng.below(data.target.size())].pixels);
    }
    train_step(state, src, tgt, cfg);
    if (hooks.on_step) hooks.on_step(state.history.back());
    if (hooks.on_checkpoint && hooks.checkpoint_every > 0 && state.iter % hooks.checkpoint_every == 0) {
      hooks.on_checkpoint(state.iter, state.student);
    }
    if (state.iter % cfg.eval_interval == 0 || state.iter == cfg.max_iters) {
      evaluate(state.iter);
      if (cfg.early_stop_patience > 0 && state.iter - result.best_iter >= cfg.early_stop_patience) break;
    }
  }
  result.final_student = state.student;
  result.history = std::move(state.history);
  result.iterations_run = state.iter;
  return result;
}

#define MIXLAB_INSTANTIATE_TRAIN(T)                                                               \
  template LossBreakdown evaluate_objective<T>(const ModelParams<T>&, const ModelParams<T>&,      \
                                               const LabeledImage&, const Image&,                 \
                                               const TrainConfig&, const ObjectiveWeights&,       \
                                               uint64_t, ModelParams<T>*, FrozenTargets<T>*);     \
  template struct SgdState<T>;                                                                    \
  template TrainState<T> init_train_state<T>(const TrainConfig&);                                 \
  template TrainState<T> warmup<T>(TrainState<T>, const DatasetPair&, const TrainConfig&);        \
  template LossBreakdown train_step<T>(TrainState<T>&, const std::vector<const LabeledImage*>&,   \
                                       const std::vector<const Image*>&, const TrainConfig&);

MIXLAB_INSTANTIATE_TRAIN(float)
MIXLAB_INSTANTIATE_TRAIN(double)

#undef MIXLAB_INSTANTIATE_TRAIN

}  // namespace mixlab
