#include "mixlab/contrast.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mixlab {
namespace {

using Vec = std::vector<double>;

/// Softmax of G(v) in double precision.
template <typename T>
Vec class_probs(const ModelParams<T>& params, std::span<const T> v) {
  const auto z = classify_vector(params, v);
  Vec q(z.begin(), z.end());
  const double m = *std::max_element(q.begin(), q.end());
  double s = 0;
  for (auto& x : q) {
    x = std::exp(x - m);
    s += x;
  }
  for (auto& x : q) x /= s;
  return q;
}

double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const Vec& x, Vec& y) {
  for (size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

/// Accumulates one side of the loss: anchors `a` (also the same-view
/// negatives) against targets `bt`. Returns the summed loss.
double one_side(const std::vector<Vec>& qa, const std::vector<Vec>& qbt, double s,
                std::vector<Vec>& dqa, std::vector<Vec>& dqbt) {
  const size_t n = qa.size();
  double total = 0;
  std::vector<double> terms(2 * n);
  for (size_t i = 0; i < n; ++i) {
    // terms[0..n): same-view j (j == i excluded), terms[n..2n): cross-view k.
    double m = -INFINITY;
    for (size_t j = 0; j < n; ++j) {
      terms[j] = j == i ? -INFINITY : s * dot(qa[i], qa[j]);
      terms[n + j] = s * dot(qa[i], qbt[j]);
      m = std::max({m, terms[j], terms[n + j]});
    }
    double z = 0;
    for (double t : terms) z += std::exp(t - m);
    const double lse = m + std::log(z);
    total += lse - terms[n + i];
    for (size_t j = 0; j < n; ++j) {
      if (j != i) {
        const double w = std::exp(terms[j] - lse);
        axpy(s * w, qa[j], dqa[i]);
        axpy(s * w, qa[i], dqa[j]);
      }
      const double w = std::exp(terms[n + j] - lse) - (j == i ? 1.0 : 0.0);
      axpy(s * w, qbt[j], dqa[i]);
      axpy(s * w, qa[i], dqbt[j]);
    }
  }
  return total;
}

/// dq -> dz through the softmax Jacobian, then through G.
template <typename T>
std::vector<T> probs_backward(const ModelParams<T>& params, std::span<const T> v, const Vec& q,
                              const Vec& dq, ModelParams<T>* grads) {
  const double qd = dot(q, dq);
  std::vector<T> dz(q.size());
  for (size_t c = 0; c < q.size(); ++c) dz[c] = static_cast<T>(q[c] * (dq[c] - qd));
  return classify_vector_backward<T>(params, v, dz, grads);
}

template <typename T>
std::vector<T> gather_cell(const FeatureMap<T>& f, int pos) {
  std::vector<T> v(static_cast<size_t>(f.channels));
  for (int c = 0; c < f.channels; ++c) v[static_cast<size_t>(c)] = f.v[static_cast<size_t>(c) * f.plane() + static_cast<size_t>(pos)];
  return v;
}

}  // namespace

template <typename T>
PrototypeSet<T> compute_prototypes(const FeatureMap<T>& features,
                                   const std::vector<MixMask>& class_masks) {
  PrototypeSet<T> ps;
  ps.dim = features.channels;
  const size_t n_classes = class_masks.size();
  ps.vectors.resize(n_classes);
  ps.valid.assign(n_classes, 0);
  ps.support.assign(n_classes, 0);
  for (size_t c = 0; c < n_classes; ++c) {
    const auto& m = class_masks[c];
    if (m.height != features.height || m.width != features.width) {
      throw DimensionError("compute_prototypes: mask " + std::to_string(m.height) + "x" +
                           std::to_string(m.width) + " does not match feature resolution " +
                           std::to_string(features.height) + "x" + std::to_string(features.width));
    }
    const size_t count = m.count();
    if (count == 0) continue;
    std::vector<double> acc(static_cast<size_t>(ps.dim), 0.0);
    for (size_t i = 0; i < m.size(); ++i) {
      if (!m.bits[i]) continue;
      for (int d = 0; d < ps.dim; ++d) acc[static_cast<size_t>(d)] += features.v[static_cast<size_t>(d) * features.plane() + i];
    }
    auto& v = ps.vectors[c];
    v.resize(static_cast<size_t>(ps.dim));
    for (int d = 0; d < ps.dim; ++d) v[static_cast<size_t>(d)] = static_cast<T>(acc[static_cast<size_t>(d)] / static_cast<double>(count));
    ps.valid[c] = 1;
    ps.support[c] = count;
  }
  return ps;
}

template <typename T>
void prototypes_backward(const PrototypeSet<T>& protos, const std::vector<MixMask>& class_masks,
                         const std::vector<std::vector<T>>& d_protos, FeatureMap<T>& d_features) {
  for (size_t c = 0; c < class_masks.size(); ++c) {
    if (!protos.valid[c] || d_protos[c].empty()) continue;
    const T inv = T(1) / static_cast<T>(protos.support[c]);
    const auto& m = class_masks[c];
    for (size_t i = 0; i < m.size(); ++i) {
      if (!m.bits[i]) continue;
      for (int d = 0; d < d_features.channels; ++d) {
        d_features.v[static_cast<size_t>(d) * d_features.plane() + i] += d_protos[c][static_cast<size_t>(d)] * inv;
      }
    }
  }
}

template <typename T>
double prob_similarity(const ModelParams<T>& params, std::span<const T> a, std::span<const T> b) {
  return dot(class_probs(params, a), class_probs(params, b));
}

template <typename T>
ContrastResult<T> cross_view_info_nce(const ModelParams<T>& params,
                                      const std::vector<std::vector<T>>& view1,
                                      const std::vector<std::vector<T>>& view2,
                                      const std::vector<std::vector<T>>& target1,
                                      const std::vector<std::vector<T>>& target2,
                                      const ContrastOptions& options, ModelParams<T>* grads) {
  if (!(options.scale > 0.0)) throw ArgumentError("contrastive scale must be > 0");
  const size_t n = view1.size();
  if (view2.size() != n || target1.size() != n || target2.size() != n) {
    throw ShapeError("cross_view_info_nce: view sizes differ");
  }
  ContrastResult<T> res;
  res.d_view1.assign(n, std::vector<T>(static_cast<size_t>(params.arch.feature_dim()), T(0)));
  res.d_view2 = res.d_view1;
  if (n < 2) {
    res.degenerate = true;
    return res;
  }
  std::vector<Vec> q1, q2, qt1, qt2;
  for (size_t i = 0; i < n; ++i) {
    q1.push_back(class_probs<T>(params, view1[i]));
    q2.push_back(class_probs<T>(params, view2[i]));
    qt1.push_back(class_probs<T>(params, target1[i]));
    qt2.push_back(class_probs<T>(params, target2[i]));
  }
  const size_t c = q1[0].size();
  std::vector<Vec> dq1(n, Vec(c, 0.0)), dq2 = dq1, dqt1 = dq1, dqt2 = dq1;
  res.loss = one_side(q1, qt2, options.scale, dq1, dqt2) + one_side(q2, qt1, options.scale, dq2, dqt1);

  ModelParams<T>* g = options.classifier_grads ? grads : nullptr;
  for (size_t i = 0; i < n; ++i) {
    auto d1 = probs_backward<T>(params, view1[i], q1[i], dq1[i], g);
    auto d2 = probs_backward<T>(params, view2[i], q2[i], dq2[i], g);
    auto dt1 = probs_backward<T>(params, target1[i], qt1[i], dqt1[i], g);
    auto dt2 = probs_backward<T>(params, target2[i], qt2[i], dqt2[i], g);
    if (!options.stop_grad_targets) {
      for (size_t k = 0; k < d1.size(); ++k) {
        d1[k] += dt1[k];
        d2[k] += dt2[k];
      }
    }
    res.d_view1[i] = std::move(d1);
    res.d_view2[i] = std::move(d2);
  }
  return res;
}

template <typename T>
ContrastResult<T> proto_contrastive_loss(const PrototypeSet<T>& ps1, const PrototypeSet<T>& ps2,
                                         const ModelParams<T>& params, double s1,
                                         ModelParams<T>* grads, bool classifier_grads,
                                         const PrototypeSet<T>* frozen1,
                                         const PrototypeSet<T>* frozen2) {
  if (!(s1 > 0.0)) throw ArgumentError("proto_contrastive_loss: s1 must be > 0");
  if (ps1.class_count() != ps2.class_count()) throw ShapeError("prototype sets differ in class count");
  const PrototypeSet<T>& t1 = frozen1 ? *frozen1 : ps1;
  const PrototypeSet<T>& t2 = frozen2 ? *frozen2 : ps2;
  std::vector<size_t> classes;
  for (size_t c = 0; c < ps1.valid.size(); ++c) {
    if (ps1.valid[c] && ps2.valid[c]) {
      if (!t1.valid[c] || !t2.valid[c]) throw ArgumentError("frozen prototypes disagree on validity");
      classes.push_back(c);
    }
  }
  std::vector<std::vector<T>> a, b, at, bt;
  for (size_t c : classes) {
    a.push_back(ps1.vectors[c]);
    b.push_back(ps2.vectors[c]);
    at.push_back(t1.vectors[c]);
    bt.push_back(t2.vectors[c]);
  }
  ContrastOptions opt{s1, true, classifier_grads};
  auto inner = cross_view_info_nce<T>(params, a, b, at, bt, opt, grads);
  ContrastResult<T> res;
  res.loss = inner.loss;
  res.degenerate = inner.degenerate;
  res.d_view1.assign(ps1.valid.size(), {});
  res.d_view2.assign(ps1.valid.size(), {});
  for (size_t k = 0; k < classes.size(); ++k) {
    res.d_view1[classes[k]] = std::move(inner.d_view1[k]);
    res.d_view2[classes[k]] = std::move(inner.d_view2[k]);
  }
  return res;
}

template <typename T>
ContrastResult<T> pixel_contrastive_loss(const FeatureMap<T>& f1, const FeatureMap<T>& f2,
                                         const ModelParams<T>& params, double s2,
                                         const std::vector<int>& positions, ModelParams<T>* grads,
                                         bool classifier_grads) {
  if (!(s2 > 0.0)) throw ArgumentError("pixel_contrastive_loss: s2 must be > 0");
  if (!f1.same_shape(f2)) throw ShapeError("pixel_contrastive_loss: feature maps differ in shape");
  std::vector<std::vector<T>> a, b;
  for (int p : positions) {
    if (p < 0 || static_cast<size_t>(p) >= f1.plane()) {
      throw ArgumentError("pixel_contrastive_loss: position " + std::to_string(p) + " out of range");
    }
    a.push_back(gather_cell(f1, p));
    b.push_back(gather_cell(f2, p));
  }
  ContrastOptions opt{s2, false, classifier_grads};
  return cross_view_info_nce<T>(params, a, b, a, b, opt, grads);
}

std::vector<int> sample_positions(const MixMask& candidates, int n, Rng& rng) {
  std::vector<int> idx;
  for (size_t i = 0; i < candidates.size(); ++i) {
    if (candidates.bits[i]) idx.push_back(static_cast<int>(i));
  }
  if (n < 0) throw ArgumentError("sample_positions: n must be >= 0");
  if (static_cast<int>(idx.size()) > n) {
    // Partial Fisher-Yates.
    for (size_t i = 0; i < static_cast<size_t>(n); ++i) {
      const size_t j = i + rng.below(idx.size() - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(static_cast<size_t>(n));
  }
  std::sort(idx.begin(), idx.end());
  return idx;
}

PhotometricTransform sample_photometric(Rng& rng, double jitter, double max_blur) {
  PhotometricTransform t;
  t.brightness = rng.uniform(1.0 - jitter, 1.0 + jitter);
  t.contrast = rng.uniform(1.0 - jitter, 1.0 + jitter);
  t.saturation = rng.uniform(1.0 - jitter, 1.0 + jitter);
  t.blur_sigma = rng.uniform(0.0, max_blur);
  return t;
}

Image apply_photometric(const Image& image, const PhotometricTransform& t) {
  Image out = image;
  const size_t n = image.pixel_count();
  for (auto& v : out.data) v = static_cast<float>(std::clamp(v * t.brightness, 0.0, 1.0));
  double mean = 0;
  for (float v : out.data) mean += v;
  mean /= static_cast<double>(out.data.size());
  for (auto& v : out.data) v = static_cast<float>(std::clamp(mean + (v - mean) * t.contrast, 0.0, 1.0));
  for (size_t i = 0; i < n; ++i) {
    float* px = &out.data[i * 3];
    const double gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    for (int c = 0; c < 3; ++c) px[c] = static_cast<float>(std::clamp(gray + (px[c] - gray) * t.saturation, 0.0, 1.0));
  }
  if (t.blur_sigma > 1e-3) {
    const int radius = static_cast<int>(std::ceil(3.0 * t.blur_sigma));
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double ks = 0;
    for (int i = -radius; i <= radius; ++i) {
      k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (t.blur_sigma * t.blur_sigma));
      ks += k[static_cast<size_t>(i + radius)];
    }
    for (auto& v : k) v /= ks;
    Image tmp = out;
    const int h = out.height, w = out.width;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) {
          double s = 0;
          for (int i = -radius; i <= radius; ++i) s += k[static_cast<size_t>(i + radius)] * out.at(y, std::clamp(x + i, 0, w - 1), c);
          tmp.at(y, x, c) = static_cast<float>(s);
        }
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) {
          double s = 0;
          for (int i = -radius; i <= radius; ++i) s += k[static_cast<size_t>(i + radius)] * tmp.at(std::clamp(y + i, 0, h - 1), x, c);
          out.at(y, x, c) = static_cast<float>(std::clamp(s, 0.0, 1.0));
        }
      }
    }
  }
  return out;
}

ViewPair make_view_pair(const Image& image, Rng& rng) {
  ViewPair vp;
  vp.t1 = sample_photometric(rng);
  vp.t2 = sample_photometric(rng);
  vp.view1 = apply_photometric(image, vp.t1);
  vp.view2 = apply_photometric(image, vp.t2);
  return vp;
}

#define MIXLAB_INSTANTIATE_CONTRAST(T)                                                            \
  template PrototypeSet<T> compute_prototypes<T>(const FeatureMap<T>&, const std::vector<MixMask>&); \
  template void prototypes_backward<T>(const PrototypeSet<T>&, const std::vector<MixMask>&,        \
                                       const std::vector<std::vector<T>>&, FeatureMap<T>&);        \
  template double prob_similarity<T>(const ModelParams<T>&, std::span<const T>, std::span<const T>); \
  template ContrastResult<T> cross_view_info_nce<T>(                                              \
      const ModelParams<T>&, const std::vector<std::vector<T>>&, const std::vector<std::vector<T>>&, \
      const std::vector<std::vector<T>>&, const std::vector<std::vector<T>>&, const ContrastOptions&, \
      ModelParams<T>*);                                                                           \
  template ContrastResult<T> proto_contrastive_loss<T>(const PrototypeSet<T>&, const PrototypeSet<T>&, \
                                                       const ModelParams<T>&, double, ModelParams<T>*, \
                                                       bool, const PrototypeSet<T>*,               \
                                                       const PrototypeSet<T>*);                    \
  template ContrastResult<T> pixel_contrastive_loss<T>(const FeatureMap<T>&, const FeatureMap<T>&, \
                                                       const ModelParams<T>&, double,              \
                                                       const std::vector<int>&, ModelParams<T>*, bool);

MIXLAB_INSTANTIATE_CONTRAST(float)
MIXLAB_INSTANTIATE_CONTRAST(double)

#undef MIXLAB_INSTANTIATE_CONTRAST

}  // namespace mixlab
