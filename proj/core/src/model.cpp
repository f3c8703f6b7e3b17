#include "mixlab/model.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mixlab/rng.hpp"

namespace mixlab {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

constexpr int kKernel = 3;

thread_local ActivationProbe* g_probe = nullptr;

template <typename T>
void observe(const Tensor3<T>& pre) {
  for (T v : pre.v) {
    g_probe->min_abs_pre = std::min(g_probe->min_abs_pre, std::abs(static_cast<double>(v)));
    g_probe->pattern_hash = (g_probe->pattern_hash ^ (v > T(0) ? 1u : 2u)) * 0x100000001b3ULL;
  }
}

int conv_out_size(int in, int stride) { return (in + 2 - kKernel) / stride + 1; }

template <typename T>
void im2col(const Tensor3<T>& in, int stride, int out_h, int out_w, std::vector<T>& col) {
  const size_t cols = static_cast<size_t>(out_h) * out_w;
  col.assign(static_cast<size_t>(in.channels) * kKernel * kKernel * cols, T(0));
  for (int c = 0; c < in.channels; ++c) {
    for (int ky = 0; ky < kKernel; ++ky) {
      for (int kx = 0; kx < kKernel; ++kx) {
        T* row = &col[((static_cast<size_t>(c) * kKernel + ky) * kKernel + kx) * cols];
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= in.height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= in.width) continue;
            row[static_cast<size_t>(oy) * out_w + ox] = in.at(c, iy, ix);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const std::vector<T>& col, int stride, int out_h, int out_w, Tensor3<T>& d_in) {
  const size_t cols = static_cast<size_t>(out_h) * out_w;
  for (int c = 0; c < d_in.channels; ++c) {
    for (int ky = 0; ky < kKernel; ++ky) {
      for (int kx = 0; kx < kKernel; ++kx) {
        const T* row = &col[((static_cast<size_t>(c) * kKernel + ky) * kKernel + kx) * cols];
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= d_in.height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= d_in.width) continue;
            d_in.at(c, iy, ix) += row[static_cast<size_t>(oy) * out_w + ox];
          }
        }
      }
    }
  }
}

/// pre = W * im2col(in) + b
template <typename T>
Tensor3<T> conv_forward(const Tensor3<T>& in, const ParamTensor<T>& w, const ParamTensor<T>& b,
                        int stride, std::vector<T>& col) {
  const int out_c = w.shape[0];
  const int oh = conv_out_size(in.height, stride);
  const int ow = conv_out_size(in.width, stride);
  im2col(in, stride, oh, ow, col);
  Tensor3<T> out(out_c, oh, ow);
  const auto k = static_cast<Eigen::Index>(in.channels * kKernel * kKernel);
  const auto n = static_cast<Eigen::Index>(out.plane());
  ConstMatMap<T> wm(w.values.data(), out_c, k);
  ConstMatMap<T> cm(col.data(), k, n);
  MatMap<T> om(out.v.data(), out_c, n);
  om.noalias() = wm * cm;
  for (int c = 0; c < out_c; ++c) om.row(c).array() += b.values[static_cast<size_t>(c)];
  return out;
}

/// Accumulates dW, db and returns d_in for a conv whose pre-activation gradient is `d_pre`.
template <typename T>
Tensor3<T> conv_backward(const Tensor3<T>& d_pre, const std::vector<T>& col, int in_c, int in_h,
                         int in_w, int stride, const ParamTensor<T>& w, ParamTensor<T>& dw,
                         ParamTensor<T>& db, bool need_input_grad) {
  const int out_c = d_pre.channels;
  const auto k = static_cast<Eigen::Index>(in_c * kKernel * kKernel);
  const auto n = static_cast<Eigen::Index>(d_pre.plane());
  ConstMatMap<T> dm(d_pre.v.data(), out_c, n);
  ConstMatMap<T> cm(col.data(), k, n);
  MatMap<T> dwm(dw.values.data(), out_c, k);
  dwm.noalias() += dm * cm.transpose();
  for (int c = 0; c < out_c; ++c) db.values[static_cast<size_t>(c)] += dm.row(c).sum();
  Tensor3<T> d_in;
  if (!need_input_grad) return d_in;
  ConstMatMap<T> wm(w.values.data(), out_c, k);
  std::vector<T> dcol(static_cast<size_t>(k * n));
  MatMap<T> dcm(dcol.data(), k, n);
  dcm.noalias() = wm.transpose() * dm;
  d_in = Tensor3<T>(in_c, in_h, in_w);
  col2im_add(dcol, stride, d_pre.height, d_pre.width, d_in);
  return d_in;
}

/// 1-D bilinear interpolation weights for half-pixel centers with edge clamping.
struct Interp {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

Interp interp_weights(int in, int out) {
  Interp w;
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int l = static_cast<int>(std::floor(src));
    if (l > in - 1) l = in - 1;
    const int h = std::min(l + 1, in - 1);
    w.lo.push_back(l);
    w.hi.push_back(h);
    w.frac.push_back(src - l);
  }
  return w;
}

template <typename T>
Tensor3<T> image_to_tensor(const Image& image) {
  if (image.height <= 0 || image.width <= 0 || image.height % 8 != 0 || image.width % 8 != 0) {
    throw DimensionError("image dimensions must be positive multiples of 8, got " +
                         std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  Tensor3<T> t(3, image.height, image.width);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = static_cast<T>(image.at(y, x, c)) - T(0.5);
    }
  }
  return t;
}

template <typename T>
ParamTensor<T> make_tensor(std::string name, std::vector<int> shape, bool bias, bool head) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return ParamTensor<T>{std::move(name), std::move(shape), std::vector<T>(n, T(0)), bias, head};
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

constexpr char kMagic[8] = {'M', 'I', 'X', 'L', 'A', 'B', 'C', 'K'};

}  // namespace

void ArchSpec::validate() const {
  if (in_channels != 3) throw ArgumentError("ArchSpec: in_channels must be 3");
  for (int w : widths) {
    if (w < 1) throw ArgumentError("ArchSpec: widths must be >= 1");
  }
  if (residual_blocks < 0) throw ArgumentError("ArchSpec: residual_blocks must be >= 0");
  if (class_count < 2) throw ArgumentError("ArchSpec: class_count must be >= 2");
}

template <typename T>
size_t ModelParams<T>::total_size() const {
  size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

template <typename T>
bool ModelParams<T>::all_finite() const {
  for (const auto& t : tensors) {
    for (T v : t.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

template <typename T>
bool ModelParams<T>::same_shapes(const ModelParams& o) const {
  if (tensors.size() != o.tensors.size()) return false;
  for (size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].shape != o.tensors[i].shape || tensors[i].name != o.tensors[i].name) return false;
  }
  return true;
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros_like() const {
  ModelParams out = *this;
  out.set_zero();
  return out;
}

template <typename T>
void ModelParams<T>::set_zero() {
  for (auto& t : tensors) std::fill(t.values.begin(), t.values.end(), T(0));
}

template <typename T>
void ModelParams<T>::add_scaled(const ModelParams& other, T scale) {
  if (!same_shapes(other)) throw ShapeError("add_scaled: parameter shape mismatch");
  for (size_t i = 0; i < tensors.size(); ++i) {
    auto& a = tensors[i].values;
    const auto& b = other.tensors[i].values;
    for (size_t j = 0; j < a.size(); ++j) a[j] += scale * b[j];
  }
}

template <typename T>
T& ModelParams<T>::flat(size_t i) {
  for (auto& t : tensors) {
    if (i < t.size()) return t.values[i];
    i -= t.size();
  }
  throw ArgumentError("flat parameter index out of range");
}

template <typename T>
T ModelParams<T>::flat(size_t i) const {
  return const_cast<ModelParams*>(this)->flat(i);
}

template <typename T>
bool ModelParams<T>::operator==(const ModelParams& o) const {
  if (!(arch == o.arch) || !same_shapes(o)) return false;
  for (size_t i = 0; i < tensors.size(); ++i) {
    const auto& a = tensors[i];
    const auto& b = o.tensors[i];
    if (a.is_bias != b.is_bias || a.is_head != b.is_head) return false;
    if (std::memcmp(a.values.data(), b.values.data(), a.size() * sizeof(T)) != 0) return false;
  }
  return true;
}

template <typename T>
ModelParams<T> init_params(uint64_t seed, const ArchSpec& arch, InitMode mode) {
  arch.validate();
  ModelParams<T> p;
  p.arch = arch;
  int in_c = arch.in_channels;
  for (size_t i = 0; i < 3; ++i) {
    const int out_c = arch.widths[i];
    p.tensors.push_back(make_tensor<T>("enc.stem" + std::to_string(i) + ".w",
                                       {out_c, in_c, kKernel, kKernel}, false, false));
    p.tensors.push_back(make_tensor<T>("enc.stem" + std::to_string(i) + ".b", {out_c}, true, false));
    in_c = out_c;
  }
  const int d = arch.feature_dim();
  for (int r = 0; r < arch.residual_blocks; ++r) {
    p.tensors.push_back(
        make_tensor<T>("enc.res" + std::to_string(r) + ".w", {d, d, kKernel, kKernel}, false, false));
    p.tensors.push_back(make_tensor<T>("enc.res" + std::to_string(r) + ".b", {d}, true, false));
  }
  p.tensors.push_back(make_tensor<T>("cls.w", {arch.class_count, d}, false, true));
  p.tensors.push_back(make_tensor<T>("cls.b", {arch.class_count}, true, true));
  if (mode == InitMode::kZero) return p;

  for (size_t ti = 0; ti < p.tensors.size(); ++ti) {
    auto& t = p.tensors[ti];
    if (t.is_bias) continue;
    size_t fan_in = 1;
    for (size_t k = 1; k < t.shape.size(); ++k) fan_in *= static_cast<size_t>(t.shape[k]);
    // He-uniform for ReLU convs; residual branches start at half scale and the
    // classifier uses LeCun-uniform.
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    if (t.name.rfind("enc.res", 0) == 0) bound *= 0.5;
    if (t.is_head) bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    Rng rng = Rng::keyed(seed, 0x1417, ti);
    for (auto& v : t.values) v = static_cast<T>(rng.uniform(-bound, bound));
  }
  return p;
}

void set_activation_probe(ActivationProbe* probe) { g_probe = probe; }

template <typename T>
ForwardPass<T> encode(const ModelParams<T>& params, const Image& image) {
  ForwardPass<T> pass;
  pass.image_height = image.height;
  pass.image_width = image.width;
  pass.input = image_to_tensor<T>(image);
  const size_t n_conv = params.conv_count();
  pass.cols.resize(n_conv);
  const Tensor3<T>* x = &pass.input;
  for (size_t i = 0; i < n_conv; ++i) {
    const bool stem = i < ModelParams<T>::kStemConvs;
    Tensor3<T> pre = conv_forward(*x, params.conv_w(i), params.conv_b(i), stem ? 2 : 1, pass.cols[i]);
    if (g_probe) observe(pre);
    Tensor3<T> out = pre;
    for (size_t j = 0; j < out.v.size(); ++j) {
      const T a = std::max(pre.v[j], T(0));
      out.v[j] = stem ? a : x->v[j] + a;
    }
    pass.pre.push_back(std::move(pre));
    pass.out.push_back(std::move(out));
    x = &pass.out.back();
  }
  return pass;
}

template <typename T>
ForwardPass<T> forward(const ModelParams<T>& params, const Image& image) {
  ForwardPass<T> pass = encode(params, image);
  const auto& f = pass.features();
  const int c_out = params.arch.class_count;
  const int d = f.channels;
  pass.low_logits = Tensor3<T>(c_out, f.height, f.width);
  ConstMatMap<T> wm(params.cls_w().values.data(), c_out, d);
  ConstMatMap<T> fm(f.v.data(), d, static_cast<Eigen::Index>(f.plane()));
  MatMap<T> lm(pass.low_logits.v.data(), c_out, static_cast<Eigen::Index>(f.plane()));
  lm.noalias() = wm * fm;
  for (int c = 0; c < c_out; ++c) lm.row(c).array() += params.cls_b().values[static_cast<size_t>(c)];
  pass.logits = upsample_bilinear(pass.low_logits, image.height, image.width);
  Tensor3<double> ld(pass.logits.channels, pass.logits.height, pass.logits.width);
  std::copy(pass.logits.v.begin(), pass.logits.v.end(), ld.v.begin());
  pass.pred = softmax_channels(ld);
  pass.has_head = true;
  return pass;
}

template <typename T>
void backward(const ModelParams<T>& params, const ForwardPass<T>& pass, const Tensor3<T>* d_logits,
              const Tensor3<T>* d_features, ModelParams<T>& grads) {
  const auto& f = pass.features();
  Tensor3<T> d_f(f.channels, f.height, f.width);
  if (d_features) {
    if (!d_features->same_shape(f)) throw ShapeError("backward: feature gradient shape mismatch");
    d_f.v = d_features->v;
  }
  if (d_logits) {
    if (!pass.has_head) throw ArgumentError("backward: logit gradient given for an encode-only pass");
    if (!d_logits->same_shape(pass.logits)) throw ShapeError("backward: logit gradient shape mismatch");
    Tensor3<T> d_low = upsample_bilinear_adjoint(*d_logits, f.height, f.width);
    const int c_out = params.arch.class_count;
    const int d = f.channels;
    const auto n = static_cast<Eigen::Index>(f.plane());
    ConstMatMap<T> dl(d_low.v.data(), c_out, n);
    ConstMatMap<T> fm(f.v.data(), d, n);
    MatMap<T> dw(grads.cls_w().values.data(), c_out, d);
    dw.noalias() += dl * fm.transpose();
    for (int c = 0; c < c_out; ++c) grads.cls_b().values[static_cast<size_t>(c)] += dl.row(c).sum();
    ConstMatMap<T> wm(params.cls_w().values.data(), c_out, d);
    MatMap<T> dfm(d_f.v.data(), d, n);
    dfm.noalias() += wm.transpose() * dl;
  }

  Tensor3<T> d_out = std::move(d_f);
  for (size_t i = params.conv_count(); i-- > 0;) {
    const bool stem = i < ModelParams<T>::kStemConvs;
    const Tensor3<T>& in = i == 0 ? pass.input : pass.out[i - 1];
    const Tensor3<T>& pre = pass.pre[i];
    Tensor3<T> d_pre = d_out;
    for (size_t j = 0; j < d_pre.v.size(); ++j) {
      if (!(pre.v[j] > T(0))) d_pre.v[j] = T(0);
    }
    Tensor3<T> d_in = conv_backward(d_pre, pass.cols[i], in.channels, in.height, in.width,
                                    stem ? 2 : 1, params.conv_w(i), grads.conv_w(i),
                                    grads.conv_b(i), i > 0);
    if (!stem) {
      for (size_t j = 0; j < d_in.v.size(); ++j) d_in.v[j] += d_out.v[j];
    }
    d_out = std::move(d_in);
  }
}

template <typename T>
std::vector<T> classify_vector(const ModelParams<T>& params, std::span<const T> v) {
  const int c_out = params.arch.class_count;
  const int d = params.arch.feature_dim();
  if (static_cast<int>(v.size()) != d) throw ShapeError("classify_vector: dimension mismatch");
  std::vector<T> z(static_cast<size_t>(c_out));
  const auto& w = params.cls_w().values;
  for (int c = 0; c < c_out; ++c) {
    T acc = params.cls_b().values[static_cast<size_t>(c)];
    for (int k = 0; k < d; ++k) acc += w[static_cast<size_t>(c) * d + k] * v[static_cast<size_t>(k)];
    z[static_cast<size_t>(c)] = acc;
  }
  return z;
}

template <typename T>
std::vector<T> classify_vector_backward(const ModelParams<T>& params, std::span<const T> v,
                                        std::span<const T> d_logits, ModelParams<T>* grads) {
  const int c_out = params.arch.class_count;
  const int d = params.arch.feature_dim();
  std::vector<T> dv(static_cast<size_t>(d), T(0));
  const auto& w = params.cls_w().values;
  for (int c = 0; c < c_out; ++c) {
    const T g = d_logits[static_cast<size_t>(c)];
    if (grads) grads->cls_b().values[static_cast<size_t>(c)] += g;
    for (int k = 0; k < d; ++k) {
      const size_t idx = static_cast<size_t>(c) * d + k;
      dv[static_cast<size_t>(k)] += w[idx] * g;
      if (grads) grads->cls_w().values[idx] += g * v[static_cast<size_t>(k)];
    }
  }
  return dv;
}

template <typename T>
Tensor3<T> upsample_bilinear(const Tensor3<T>& in, int out_h, int out_w) {
  const Interp wy = interp_weights(in.height, out_h);
  const Interp wx = interp_weights(in.width, out_w);
  Tensor3<T> out(in.channels, out_h, out_w);
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < out_h; ++y) {
      const T fy = static_cast<T>(wy.frac[static_cast<size_t>(y)]);
      const int y0 = wy.lo[static_cast<size_t>(y)], y1 = wy.hi[static_cast<size_t>(y)];
      for (int x = 0; x < out_w; ++x) {
        const T fx = static_cast<T>(wx.frac[static_cast<size_t>(x)]);
        const int x0 = wx.lo[static_cast<size_t>(x)], x1 = wx.hi[static_cast<size_t>(x)];
        const T top = in.at(c, y0, x0) * (T(1) - fx) + in.at(c, y0, x1) * fx;
        const T bot = in.at(c, y1, x0) * (T(1) - fx) + in.at(c, y1, x1) * fx;
        out.at(c, y, x) = top * (T(1) - fy) + bot * fy;
      }
    }
  }
  return out;
}

template <typename T>
Tensor3<T> upsample_bilinear_adjoint(const Tensor3<T>& d_out, int in_h, int in_w) {
  const Interp wy = interp_weights(in_h, d_out.height);
  const Interp wx = interp_weights(in_w, d_out.width);
  Tensor3<T> d_in(d_out.channels, in_h, in_w);
  for (int c = 0; c < d_out.channels; ++c) {
    for (int y = 0; y < d_out.height; ++y) {
      const T fy = static_cast<T>(wy.frac[static_cast<size_t>(y)]);
      const int y0 = wy.lo[static_cast<size_t>(y)], y1 = wy.hi[static_cast<size_t>(y)];
      for (int x = 0; x < d_out.width; ++x) {
        const T fx = static_cast<T>(wx.frac[static_cast<size_t>(x)]);
        const int x0 = wx.lo[static_cast<size_t>(x)], x1 = wx.hi[static_cast<size_t>(x)];
        const T g = d_out.at(c, y, x);
        d_in.at(c, y0, x0) += g * (T(1) - fy) * (T(1) - fx);
        d_in.at(c, y0, x1) += g * (T(1) - fy) * fx;
        d_in.at(c, y1, x0) += g * fy * (T(1) - fx);
        d_in.at(c, y1, x1) += g * fy * fx;
      }
    }
  }
  return d_in;
}

SoftPrediction softmax_channels(const Tensor3<double>& logits) {
  SoftPrediction p;
  p.probs = Tensor3<double>(logits.channels, logits.height, logits.width);
  const size_t plane = logits.plane();
  const int c_out = logits.channels;
  for (size_t i = 0; i < plane; ++i) {
    double m = -INFINITY;
    for (int c = 0; c < c_out; ++c) m = std::max(m, logits.v[c * plane + i]);
    double z = 0;
    for (int c = 0; c < c_out; ++c) {
      const double e = std::exp(logits.v[c * plane + i] - m);
      p.probs.v[c * plane + i] = e;
      z += e;
    }
    for (int c = 0; c < c_out; ++c) p.probs.v[c * plane + i] /= z;
  }
  return p;
}

template <typename T>
TeacherState<T> ema_update(const TeacherState<T>& teacher, const ModelParams<T>& student) {
  if (!teacher.params.same_shapes(student)) throw ShapeError("ema_update: teacher/student shape mismatch");
  if (!(teacher.momentum >= 0.0 && teacher.momentum < 1.0)) {
    throw ArgumentError("ema_update: momentum must be in [0,1)");
  }
  TeacherState<T> out = teacher;
  const T m = static_cast<T>(teacher.momentum);
  for (size_t i = 0; i < out.params.tensors.size(); ++i) {
    auto& t = out.params.tensors[i].values;
    const auto& s = student.tensors[i].values;
    for (size_t j = 0; j < t.size(); ++j) t[j] = m * t[j] + (T(1) - m) * s[j];
  }
  return out;
}

template <typename T>
void save_checkpoint(const std::string& path, const ModelParams<T>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(out, kCheckpointVersion);
  write_pod<uint32_t>(out, sizeof(T));
  const auto& a = params.arch;
  for (int v : {a.in_channels, a.widths[0], a.widths[1], a.widths[2], a.residual_blocks, a.class_count}) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(v));
  }
  write_pod<uint32_t>(out, static_cast<uint32_t>(params.tensors.size()));
  for (const auto& t : params.tensors) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_pod<uint32_t>(out, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) write_pod<uint32_t>(out, static_cast<uint32_t>(d));
    write_pod<uint8_t>(out, t.is_bias ? 1 : 0);
    write_pod<uint8_t>(out, t.is_head ? 1 : 0);
    write_pod<uint64_t>(out, t.values.size());
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(T)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

template <typename T>
ModelParams<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
  }
  const auto version = read_pod<uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  if (read_pod<uint32_t>(in) != sizeof(T)) throw std::runtime_error("checkpoint: scalar size mismatch");
  ModelParams<T> p;
  p.arch.in_channels = static_cast<int>(read_pod<uint32_t>(in));
  for (auto& w : p.arch.widths) w = static_cast<int>(read_pod<uint32_t>(in));
  p.arch.residual_blocks = static_cast<int>(read_pod<uint32_t>(in));
  p.arch.class_count = static_cast<int>(read_pod<uint32_t>(in));
  p.arch.validate();
  const auto n = read_pod<uint32_t>(in);
  for (uint32_t i = 0; i < n; ++i) {
    ParamTensor<T> t;
    t.name.resize(read_pod<uint32_t>(in));
    in.read(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    const auto nd = read_pod<uint32_t>(in);
    for (uint32_t k = 0; k < nd; ++k) t.shape.push_back(static_cast<int>(read_pod<uint32_t>(in)));
    t.is_bias = read_pod<uint8_t>(in) != 0;
    t.is_head = read_pod<uint8_t>(in) != 0;
    t.values.resize(read_pod<uint64_t>(in));
    in.read(reinterpret_cast<char*>(t.values.data()),
            static_cast<std::streamsize>(t.values.size() * sizeof(T)));
    if (!in) throw std::runtime_error("checkpoint: truncated tensor data");
    p.tensors.push_back(std::move(t));
  }
  const ModelParams<T> expected = init_params<T>(0, p.arch, InitMode::kZero);
  if (!expected.same_shapes(p)) throw std::runtime_error("checkpoint: tensor layout does not match arch");
  return p;
}

#define MIXLAB_INSTANTIATE_MODEL(T)                                                               \
  template struct ModelParams<T>;                                                                 \
  template ModelParams<T> init_params<T>(uint64_t, const ArchSpec&, InitMode);                    \
  template ForwardPass<T> encode<T>(const ModelParams<T>&, const Image&);                         \
  template ForwardPass<T> forward<T>(const ModelParams<T>&, const Image&);                        \
  template void backward<T>(const ModelParams<T>&, const ForwardPass<T>&, const Tensor3<T>*,      \
                            const Tensor3<T>*, ModelParams<T>&);                                  \
  template std::vector<T> classify_vector<T>(const ModelParams<T>&, std::span<const T>);          \
  template std::vector<T> classify_vector_backward<T>(const ModelParams<T>&, std::span<const T>,  \
                                                      std::span<const T>, ModelParams<T>*);       \
  template Tensor3<T> upsample_bilinear<T>(const Tensor3<T>&, int, int);                          \
  template Tensor3<T> upsample_bilinear_adjoint<T>(const Tensor3<T>&, int, int);                  \
  template TeacherState<T> ema_update<T>(const TeacherState<T>&, const ModelParams<T>&);          \
  template void save_checkpoint<T>(const std::string&, const ModelParams<T>&);                    \
  template ModelParams<T> load_checkpoint<T>(const std::string&);

MIXLAB_INSTANTIATE_MODEL(float)
MIXLAB_INSTANTIATE_MODEL(double)

#undef MIXLAB_INSTANTIATE_MODEL

}  // namespace mixlab
