#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mixlab/common.hpp"
#include "mixlab/model.hpp"
#include "mixlab/rng.hpp"

namespace mixlab {

/// Per-class mean of confident feature vectors.
template <typename T>
struct PrototypeSet {
  int dim = 0;
  std::vector<std::vector<T>> vectors;  // indexed by class id; empty when invalid
  std::vector<uint8_t> valid;
  std::vector<size_t> support;  // number of feature cells averaged per class

  int class_count() const { return static_cast<int>(valid.size()); }
};

/// Masked mean of `features` under each class mask (masks at feature resolution).
template <typename T>
PrototypeSet<T> compute_prototypes(const FeatureMap<T>& features,
                                   const std::vector<MixMask>& class_masks);

/// Scatters prototype gradients back onto the feature map.
template <typename T>
void prototypes_backward(const PrototypeSet<T>& protos, const std::vector<MixMask>& class_masks,
                         const std::vector<std::vector<T>>& d_protos, FeatureMap<T>& d_features);

/// softmax(G(a)) . softmax(G(b))
template <typename T>
double prob_similarity(const ModelParams<T>& params, std::span<const T> a, std::span<const T> b);

/// Loss value plus gradients w.r.t. the anchor vectors of each view.
template <typename T>
struct ContrastResult {
  double loss = 0.0;
  bool degenerate = false;
  std::vector<std::vector<T>> d_view1;
  std::vector<std::vector<T>> d_view2;
};

struct ContrastOptions {
  double scale = 1.0;
  /// Targets (positives and cross-view negatives) receive no vector gradient.
  bool stop_grad_targets = false;
  /// Accumulate classifier gradients (otherwise G is treated as frozen).
  bool classifier_grads = true;
};

/// Symmetric two-view InfoNCE on probability inner products. For anchor i of
/// view 1 the positive is target2[i]; the denominator holds view1[j] for j != i
/// and target2[k] for every k (the positive included). View 2 is symmetric.
/// `target1`/`target2` carry the same values as the views unless a caller holds
/// them fixed.
template <typename T>
ContrastResult<T> cross_view_info_nce(const ModelParams<T>& params,
                                      const std::vector<std::vector<T>>& view1,
                                      const std::vector<std::vector<T>>& view2,
                                      const std::vector<std::vector<T>>& target1,
                                      const std::vector<std::vector<T>>& target2,
                                      const ContrastOptions& options, ModelParams<T>* grads);

/// Prototype-level loss. Classes invalid in either set are skipped. Gradients
/// w.r.t. prototypes are indexed by class id.
template <typename T>
ContrastResult<T> proto_contrastive_loss(const PrototypeSet<T>& ps1, const PrototypeSet<T>& ps2,
                                         const ModelParams<T>& params, double s1,
                                         ModelParams<T>* grads, bool classifier_grads = true,
                                         const PrototypeSet<T>* frozen1 = nullptr,
                                         const PrototypeSet<T>* frozen2 = nullptr);

/// Pixel-level loss over the sampled feature positions (row-major indices at
/// feature resolution). Gradients are indexed like `positions`.
template <typename T>
ContrastResult<T> pixel_contrastive_loss(const FeatureMap<T>& f1, const FeatureMap<T>& f2,
                                         const ModelParams<T>& params, double s2,
                                         const std::vector<int>& positions, ModelParams<T>* grads,
                                         bool classifier_grads = true);

/// Uniform sample without replacement of up to `n` set cells, returned sorted.
std::vector<int> sample_positions(const MixMask& candidates, int n, Rng& rng);

/// Colour jitter plus Gaussian blur. Only photometric operations exist here, so
/// pixel positions are preserved between views.
struct PhotometricTransform {
  double brightness = 1.0;  // multiplicative
  double contrast = 1.0;    // around the image mean
  double saturation = 1.0;  // around per-pixel luminance
  double blur_sigma = 0.0;

  static constexpr bool kGeometric = false;
};

PhotometricTransform sample_photometric(Rng& rng, double jitter = 0.2, double max_blur = 1.0);
Image apply_photometric(const Image& image, const PhotometricTransform& t);

struct ViewPair {
  Image view1;
  Image view2;
  PhotometricTransform t1;
  PhotometricTransform t2;
};

ViewPair make_view_pair(const Image& image, Rng& rng);

}  // namespace mixlab
