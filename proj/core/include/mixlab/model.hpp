#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mixlab/common.hpp"

namespace mixlab {

/// Channel-major activation tensor (channels x height x width).
template <typename T>
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> v;

  Tensor3() = default;
  Tensor3(int c, int h, int w, T fill = T(0))
      : channels(c), height(h), width(w), v(static_cast<size_t>(c) * h * w, fill) {}

  T& at(int c, int y, int x) { return v[(static_cast<size_t>(c) * height + y) * width + x]; }
  T at(int c, int y, int x) const { return v[(static_cast<size_t>(c) * height + y) * width + x]; }
  size_t plane() const { return static_cast<size_t>(height) * width; }
  bool same_shape(const Tensor3& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

/// Encoder features at stride 8: D x (H/8) x (W/8).
template <typename T>
using FeatureMap = Tensor3<T>;

/// Per-pixel class probabilities, C x H x W, always in double precision.
struct SoftPrediction {
  Tensor3<double> probs;

  int class_count() const { return probs.channels; }
  int height() const { return probs.height; }
  int width() const { return probs.width; }
};

struct ArchSpec {
  int in_channels = 3;
  /// Output widths of the three stride-2 conv blocks; the last is the feature width D.
  std::array<int, 3> widths{16, 24, 32};
  int residual_blocks = 2;
  int class_count = 5;

  int feature_dim() const { return widths[2]; }
  void validate() const;
  bool operator==(const ArchSpec&) const = default;
};

template <typename T>
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> values;
  bool is_bias = false;
  /// Classifier (G) parameters; everything else belongs to the encoder (E).
  bool is_head = false;

  size_t size() const { return values.size(); }
};

/// Named parameter arrays of M = G o E. Also used to hold gradients.
template <typename T>
struct ModelParams {
  ArchSpec arch;
  std::vector<ParamTensor<T>> tensors;

  static constexpr size_t kStemConvs = 3;

  ParamTensor<T>& conv_w(size_t i) { return tensors[2 * i]; }
  const ParamTensor<T>& conv_w(size_t i) const { return tensors[2 * i]; }
  ParamTensor<T>& conv_b(size_t i) { return tensors[2 * i + 1]; }
  const ParamTensor<T>& conv_b(size_t i) const { return tensors[2 * i + 1]; }
  ParamTensor<T>& cls_w() { return tensors[tensors.size() - 2]; }
  const ParamTensor<T>& cls_w() const { return tensors[tensors.size() - 2]; }
  ParamTensor<T>& cls_b() { return tensors.back(); }
  const ParamTensor<T>& cls_b() const { return tensors.back(); }
  /// Convs in forward order: 3 stride-2 stem convs followed by residual convs.
  size_t conv_count() const { return (tensors.size() - 2) / 2; }

  size_t total_size() const;
  bool all_finite() const;
  bool same_shapes(const ModelParams& o) const;
  ModelParams zeros_like() const;
  void set_zero();
  /// this += scale * other
  void add_scaled(const ModelParams& other, T scale);

  /// Flat indexing across all tensors (gradient checks).
  T& flat(size_t i);
  T flat(size_t i) const;

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.arch = arch;
    for (const auto& t : tensors) {
      ParamTensor<U> u{t.name, t.shape, std::vector<U>(t.values.begin(), t.values.end()), t.is_bias,
                       t.is_head};
      out.tensors.push_back(std::move(u));
    }
    return out;
  }

  bool operator==(const ModelParams& o) const;
};

enum class InitMode { kFanInUniform, kZero };

template <typename T>
ModelParams<T> init_params(uint64_t seed, const ArchSpec& arch, InitMode mode = InitMode::kFanInUniform);

/// Intermediate activations kept for the backward pass.
template <typename T>
struct ForwardPass {
  int image_height = 0;
  int image_width = 0;
  Tensor3<T> input;
  std::vector<std::vector<T>> cols;  // im2col buffer per conv
  std::vector<Tensor3<T>> pre;       // conv pre-activations
  std::vector<Tensor3<T>> out;       // block outputs
  Tensor3<T> low_logits;             // C x h x w
  Tensor3<T> logits;                 // C x H x W
  SoftPrediction pred;
  bool has_head = false;

  const FeatureMap<T>& features() const { return out.back(); }
};

/// Runs E only (features at stride 8).
template <typename T>
ForwardPass<T> encode(const ModelParams<T>& params, const Image& image);

/// Runs E then G; logits are bilinearly upsampled to H x W before the softmax.
template <typename T>
ForwardPass<T> forward(const ModelParams<T>& params, const Image& image);

/// Observes every ReLU input seen by encode() on the installing thread.
struct ActivationProbe {
  double min_abs_pre = std::numeric_limits<double>::infinity();
  /// Order-dependent hash of the on/off pattern of all ReLUs.
  uint64_t pattern_hash = 0;
};

/// Installs `probe` for the calling thread; nullptr removes it.
void set_activation_probe(ActivationProbe* probe);

/// Accumulates parameter gradients into `grads`.
/// `d_logits` is the loss gradient w.r.t. the full-resolution logits (may be null),
/// `d_features` an extra gradient w.r.t. the encoder features (may be null).
template <typename T>
void backward(const ModelParams<T>& params, const ForwardPass<T>& pass, const Tensor3<T>* d_logits,
              const Tensor3<T>* d_features, ModelParams<T>& grads);

/// G applied to a single D-vector.
template <typename T>
std::vector<T> classify_vector(const ModelParams<T>& params, std::span<const T> v);

/// Backward of classify_vector: accumulates into grads (if non-null) and
/// returns the gradient w.r.t. `v`.
template <typename T>
std::vector<T> classify_vector_backward(const ModelParams<T>& params, std::span<const T> v,
                                        std::span<const T> d_logits, ModelParams<T>* grads);

/// Bilinear (half-pixel centers, edge clamped) upsampling and its adjoint.
template <typename T>
Tensor3<T> upsample_bilinear(const Tensor3<T>& in, int out_h, int out_w);
template <typename T>
Tensor3<T> upsample_bilinear_adjoint(const Tensor3<T>& d_out, int in_h, int in_w);

SoftPrediction softmax_channels(const Tensor3<double>& logits);

template <typename T>
struct TeacherState {
  ModelParams<T> params;
  double momentum = 0.99;
};

/// theta_teacher <- m * theta_teacher + (1 - m) * theta_student
template <typename T>
TeacherState<T> ema_update(const TeacherState<T>& teacher, const ModelParams<T>& student);

/// Binary checkpoint container; round-trips bit-exactly.
template <typename T>
void save_checkpoint(const std::string& path, const ModelParams<T>& params);
template <typename T>
ModelParams<T> load_checkpoint(const std::string& path);

inline constexpr uint32_t kCheckpointVersion = 1;

}  // namespace mixlab
