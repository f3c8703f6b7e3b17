#pragma once
// Brute-force reference implementations. Written directly from the loss and
// metric definitions with plain loops; they share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <optional>
#include <vector>

#include "mixlab/common.hpp"
#include "mixlab/model.hpp"
#include "mixlab/rng.hpp"

namespace oracle {

using Vec = std::vector<double>;

/// Per-class masked mean; nullopt when the mask selects nothing.
inline std::vector<std::optional<Vec>> prototypes(const mixlab::FeatureMap<double>& f,
                                                  const std::vector<mixlab::MixMask>& masks) {
  std::vector<std::optional<Vec>> out;
  for (const auto& m : masks) {
    Vec sum(f.channels, 0.0);
    int n = 0;
    for (int y = 0; y < f.height; ++y) {
      for (int x = 0; x < f.width; ++x) {
        if (!m.at(y, x)) continue;
        ++n;
        for (int d = 0; d < f.channels; ++d) sum[d] += f.at(d, y, x);
      }
    }
    if (n == 0) {
      out.emplace_back(std::nullopt);
    } else {
      for (double& v : sum) v /= n;
      out.emplace_back(sum);
    }
  }
  return out;
}

/// softmax(W v + b) with W stored row-major as [C][D].
inline Vec class_probs(const mixlab::ModelParams<double>& p, const Vec& v) {
  const int c_count = p.arch.class_count;
  const int d = p.arch.feature_dim();
  Vec z(c_count);
  for (int c = 0; c < c_count; ++c) {
    double acc = p.cls_b().values[c];
    for (int k = 0; k < d; ++k) acc += p.cls_w().values[c * d + k] * v[k];
    z[c] = acc;
  }
  double m = z[0];
  for (double x : z) m = std::max(m, x);
  double s = 0;
  for (double& x : z) {
    x = std::exp(x - m);
    s += x;
  }
  for (double& x : z) x /= s;
  return z;
}

inline double H(const mixlab::ModelParams<double>& p, const Vec& a, const Vec& b) {
  const Vec pa = class_probs(p, a), pb = class_probs(p, b);
  double s = 0;
  for (size_t i = 0; i < pa.size(); ++i) s += pa[i] * pb[i];
  return s;
}

/// One direction of the two-view loss: anchors from `a`, positives from `b`.
inline double one_direction(const mixlab::ModelParams<double>& p, const std::vector<Vec>& a,
                            const std::vector<Vec>& b, double s) {
  double total = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double num = std::exp(s * H(p, a[i], b[i]));
    double den = 0;
    for (size_t j = 0; j < a.size(); ++j) {
      if (j != i) den += std::exp(s * H(p, a[i], a[j]));
    }
    for (size_t k = 0; k < b.size(); ++k) den += std::exp(s * H(p, a[i], b[k]));
    total += -std::log(num / den);
  }
  return total;
}

inline double two_view_loss(const mixlab::ModelParams<double>& p, const std::vector<Vec>& a,
                            const std::vector<Vec>& b, double s) {
  if (a.size() < 2) return 0.0;
  return one_direction(p, a, b, s) + one_direction(p, b, a, s);
}

/// Prototype loss over classes present in both views.
inline double proto_loss(const mixlab::ModelParams<double>& p, const std::vector<std::optional<Vec>>& v1,
                         const std::vector<std::optional<Vec>>& v2, double s) {
  std::vector<Vec> a, b;
  for (size_t c = 0; c < v1.size(); ++c) {
    if (v1[c] && v2[c]) {
      a.push_back(*v1[c]);
      b.push_back(*v2[c]);
    }
  }
  return two_view_loss(p, a, b, s);
}

inline Vec cell(const mixlab::FeatureMap<double>& f, int pos) {
  Vec v(f.channels);
  const int y = pos / f.width, x = pos % f.width;
  for (int d = 0; d < f.channels; ++d) v[d] = f.at(d, y, x);
  return v;
}

inline double pixel_loss(const mixlab::ModelParams<double>& p, const mixlab::FeatureMap<double>& f1,
                         const mixlab::FeatureMap<double>& f2, const std::vector<int>& pos, double s) {
  std::vector<Vec> a, b;
  for (int q : pos) {
    a.push_back(cell(f1, q));
    b.push_back(cell(f2, q));
  }
  return two_view_loss(p, a, b, s);
}

/// Mean of -log p[label] over pixels whose label lies in [0, C).
inline std::optional<double> ce(const mixlab::SoftPrediction& pred, const mixlab::LabelMap& labels) {
  const auto& t = pred.probs;
  double sum = 0;
  int n = 0;
  for (int y = 0; y < t.height; ++y) {
    for (int x = 0; x < t.width; ++x) {
      const int l = labels.at(y, x);
      if (l < 0 || l >= t.channels) continue;
      sum -= std::log(t.at(l, y, x));
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

struct MiouResult {
  std::vector<std::optional<double>> iou;
  double miou = 0;
};

/// IoU per class from explicit set counting over every pixel.
inline MiouResult miou(const std::vector<mixlab::LabelMap>& preds, const std::vector<mixlab::LabelMap>& gts,
                       int class_count) {
  MiouResult r;
  double sum = 0;
  int defined = 0;
  for (int c = 0; c < class_count; ++c) {
    long inter = 0, uni = 0;
    for (size_t k = 0; k < preds.size(); ++k) {
      for (size_t i = 0; i < gts[k].ids.size(); ++i) {
        const int g = gts[k].ids[i];
        if (g < 0 || g >= class_count) continue;
        const bool in_pred = preds[k].ids[i] == c, in_gt = g == c;
        inter += in_pred && in_gt;
        uni += in_pred || in_gt;
      }
    }
    if (uni == 0) {
      r.iou.emplace_back(std::nullopt);
    } else {
      r.iou.emplace_back(static_cast<double>(inter) / uni);
      sum += *r.iou.back();
      ++defined;
    }
  }
  r.miou = defined ? sum / defined : 0.0;
  return r;
}

/// Chebyshev distance to the nearest pixel that has a 4-neighbour of another label.
inline std::vector<int> boundary_distance(const mixlab::LabelMap& gt) {
  const int h = gt.height, w = gt.width;
  std::vector<std::pair<int, int>> edges;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int id = gt.at(y, x);
      const int ny[4] = {y - 1, y + 1, y, y}, nx[4] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] >= 0 && ny[k] < h && nx[k] >= 0 && nx[k] < w && gt.at(ny[k], nx[k]) != id) {
          edges.emplace_back(y, x);
          break;
        }
      }
    }
  }
  std::vector<int> d(static_cast<size_t>(h) * w, std::numeric_limits<int>::max());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (const auto& [ey, ex] : edges) {
        d[y * w + x] = std::min(d[y * w + x], std::max(std::abs(ey - y), std::abs(ex - x)));
      }
    }
  }
  return d;
}

/// Direct 3x3 convolution, zero padding 1.
inline mixlab::Tensor3<double> conv3x3(const mixlab::Tensor3<double>& in, const std::vector<double>& w,
                                       const std::vector<double>& b, int out_c, int stride) {
  const int oh = (in.height - 1) / stride + 1, ow = (in.width - 1) / stride + 1;
  mixlab::Tensor3<double> out(out_c, oh, ow);
  for (int o = 0; o < out_c; ++o) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = b[o];
        for (int c = 0; c < in.channels; ++c) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = y * stride + ky - 1, ix = x * stride + kx - 1;
              if (iy < 0 || ix < 0 || iy >= in.height || ix >= in.width) continue;
              acc += w[((o * in.channels + c) * 3 + ky) * 3 + kx] * in.at(c, iy, ix);
            }
          }
        }
        out.at(o, y, x) = acc;
      }
    }
  }
  return out;
}

// ---- random instance helpers ----------------------------------------------

inline mixlab::FeatureMap<double> random_features(mixlab::Rng& rng, int d, int h, int w, double scale = 1.0) {
  mixlab::FeatureMap<double> f(d, h, w);
  for (auto& v : f.v) v = scale * rng.normal();
  return f;
}

inline mixlab::MixMask random_mask(mixlab::Rng& rng, int h, int w, double p) {
  mixlab::MixMask m(h, w);
  for (auto& b : m.bits) b = rng.uniform() < p ? 1 : 0;
  return m;
}

inline mixlab::LabelMap random_labels(mixlab::Rng& rng, int h, int w, int c_count) {
  mixlab::LabelMap l(h, w);
  for (auto& v : l.ids) v = static_cast<int>(rng.below(c_count));
  return l;
}

/// Blocky label map (random rectangles) so that boundaries are sparse.
inline mixlab::LabelMap random_blocky_labels(mixlab::Rng& rng, int h, int w, int c_count, int rects = 4) {
  mixlab::LabelMap l(h, w, static_cast<int>(rng.below(c_count)));
  for (int r = 0; r < rects; ++r) {
    const int y0 = rng.range(0, h - 1), x0 = rng.range(0, w - 1);
    const int y1 = rng.range(y0, h - 1), x1 = rng.range(x0, w - 1);
    const int c = static_cast<int>(rng.below(c_count));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) l.at(y, x) = c;
    }
  }
  return l;
}

inline mixlab::SoftPrediction random_prediction(mixlab::Rng& rng, int c_count, int h, int w) {
  mixlab::SoftPrediction p{mixlab::Tensor3<double>(c_count, h, w)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int c = 0; c < c_count; ++c) {
        p.probs.at(c, y, x) = std::exp(2.0 * rng.normal());
        s += p.probs.at(c, y, x);
      }
      for (int c = 0; c < c_count; ++c) p.probs.at(c, y, x) /= s;
    }
  }
  return p;
}

inline mixlab::Image random_image(mixlab::Rng& rng, int h, int w) {
  mixlab::Image img(h, w);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace oracle
