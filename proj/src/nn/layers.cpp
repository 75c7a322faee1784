#include "ste/nn/layers.hpp"

#include <cmath>

namespace ste::nn {

namespace {

template <typename T>
Var<T> param(Tensor<T> t) {
  return Var<T>(std::move(t), true);
}

template <typename T>
Tensor<T> channel_vector(int channels, T fill) {
  return Tensor<T>(Shape{1, channels, 1, 1}, fill);
}

}  // namespace

template <typename T>
Tensor<T> he_normal(Shape shape, int fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  Tensor<T> t(shape);
  for (T& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Conv2d<T>::Conv2d(int in, int out, ops::ConvGeometry g, bool with_bias, std::mt19937_64& rng)
    : weight(param(he_normal<T>({out, in, g.kernel, g.kernel}, in * g.kernel * g.kernel, rng))),
      geometry(g) {
  if (with_bias) bias = param(channel_vector<T>(out, T(0)));
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  out.add(prefix + ".weight", weight);
  if (bias.defined()) out.add(prefix + ".bias", bias);
}

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(int in, int out, ops::ConvGeometry g, std::mt19937_64& rng)
    : weight(param(he_normal<T>({in, out, g.kernel, g.kernel}, in * g.kernel * g.kernel, rng))),
      bias(param(channel_vector<T>(out, T(0)))),
      geometry(g) {}

template <typename T>
void ConvTranspose2d<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  out.add(prefix + ".weight", weight);
  out.add(prefix + ".bias", bias);
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int channels)
    : gamma(param(channel_vector<T>(channels, T(1)))),
      beta(param(channel_vector<T>(channels, T(0)))),
      stats{channel_vector<T>(channels, T(0)), channel_vector<T>(channels, T(1))} {}

template <typename T>
Var<T> BatchNorm2d<T>::forward(const Var<T>& x) {
  const bool batch = training && !frozen;
  return ops::batch_norm(x, gamma, beta, stats, batch, batch && GradMode::enabled(), momentum, eps);
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string& prefix, ParamSet<T>& out) {
  out.add(prefix + ".gamma", gamma);
  out.add(prefix + ".beta", beta);
  out.add_buffer(prefix + ".running_mean", &stats.running_mean);
  out.add_buffer(prefix + ".running_var", &stats.running_var);
}

template <typename T>
void BatchNorm2d<T>::freeze() {
  frozen = true;
  gamma.set_requires_grad(false);
  beta.set_requires_grad(false);
}

template <typename T>
LayerNorm<T>::LayerNorm(int channels)
    : gamma(param(channel_vector<T>(channels, T(1)))),
      beta(param(channel_vector<T>(channels, T(0)))) {}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  out.add(prefix + ".gamma", gamma);
  out.add(prefix + ".beta", beta);
}

template <typename T>
PartialConv2d<T>::PartialConv2d(int in, int out, ops::ConvGeometry g, bool with_bias,
                                std::mt19937_64& rng)
    : weight(param(he_normal<T>({out, in, g.kernel, g.kernel}, in * g.kernel * g.kernel, rng))),
      geometry(g) {
  if (with_bias) bias = param(channel_vector<T>(out, T(0)));
}

template <typename T>
Tensor<T> PartialConv2d<T>::update_mask(const Tensor<T>& mask, ops::ConvGeometry g,
                                        Tensor<T>* scale) {
  const Shape ms = mask.shape();
  if (ms.c != 1) throw Error(ErrorKind::kShapeMismatch, "partial conv mask must have one channel");
  const int out_h = ops::conv_out(ms.h, g);
  const int out_w = ops::conv_out(ms.w, g);
  const int window = g.kernel * g.kernel;
  Tensor<T> updated(Shape{ms.n, 1, out_h, out_w});
  if (scale) *scale = Tensor<T>(updated.shape());
  for (int n = 0; n < ms.n; ++n) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        int holes = 0;
        for (int ki = 0; ki < g.kernel; ++ki) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= ms.h) continue;
          for (int kj = 0; kj < g.kernel; ++kj) {
            const int ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < ms.w && mask.at(n, 0, iy, ix) < T(0.5)) ++holes;
          }
        }
        const int valid = window - holes;
        if (valid > 0) {
          updated.at(n, 0, oy, ox) = T(1);
          if (scale) scale->at(n, 0, oy, ox) = static_cast<T>(window) / static_cast<T>(valid);
        }
      }
    }
  }
  return updated;
}

template <typename T>
PConvState<T> PartialConv2d<T>::forward(const PConvState<T>& in) const {
  const Shape fs = in.feature.shape();
  require_shape(in.mask.shape(), Shape{fs.n, 1, fs.h, fs.w}, "partial conv mask");
  Tensor<T> scale;
  Tensor<T> updated = update_mask(in.mask, geometry, &scale);
  Var<T> y = ops::conv2d(ops::mul_bcast(in.feature, Var<T>(in.mask)), weight, Var<T>(), geometry);
  y = ops::mul_bcast(y, Var<T>(scale));
  if (bias.defined()) y = ops::mul_bcast(ops::add_channel_bias(y, bias), Var<T>(updated));
  return {y, std::move(updated)};
}

template <typename T>
void PartialConv2d<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  out.add(prefix + ".weight", weight);
  if (bias.defined()) out.add(prefix + ".bias", bias);
}

template <typename T>
GcBlock<T>::GcBlock(int channels, int ratio, std::mt19937_64& rng)
    : attention(channels, 1, {1, 1, 0}, true, rng),
      reduce(channels, channels / ratio, {1, 1, 0}, true, rng),
      norm(channels / ratio),
      expand(channels / ratio, channels, {1, 1, 0}, true, rng) {
  if (channels % ratio != 0) {
    throw Error(ErrorKind::kInvalidArgument, "GC block channels must be divisible by the ratio");
  }
  expand.weight.mutable_value().fill(T(0));
}

template <typename T>
Var<T> GcBlock<T>::context(const Var<T>& x) const {
  return ops::weighted_pool(x, ops::softmax_spatial(attention.forward(x)));
}

template <typename T>
Var<T> GcBlock<T>::forward(const Var<T>& x) const {
  const Var<T> t = expand.forward(ops::relu(norm.forward(reduce.forward(context(x)))));
  return ops::add_bcast_spatial(x, t);
}

template <typename T>
void GcBlock<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  attention.collect(prefix + ".attention", out);
  reduce.collect(prefix + ".reduce", out);
  norm.collect(prefix + ".norm", out);
  expand.collect(prefix + ".expand", out);
}

template <typename T>
Bottleneck<T>::Bottleneck(int channels, int inner, std::mt19937_64& rng)
    : reduce(channels, inner, {1, 1, 0}, true, rng),
      conv(inner, inner, {3, 1, 1}, true, rng),
      expand(inner, channels, {1, 1, 0}, true, rng) {}

template <typename T>
Var<T> Bottleneck<T>::forward(const Var<T>& x) const {
  const Var<T> h = ops::relu(conv.forward(ops::relu(reduce.forward(x))));
  return ops::relu(ops::add(x, expand.forward(h)));
}

template <typename T>
void Bottleneck<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  reduce.collect(prefix + ".reduce", out);
  conv.collect(prefix + ".conv", out);
  expand.collect(prefix + ".expand", out);
}

#define STE_INSTANTIATE_LAYERS(T)                                             \
  template Tensor<T> he_normal<T>(Shape, int, std::mt19937_64&);              \
  template class Conv2d<T>;                                                   \
  template class ConvTranspose2d<T>;                                          \
  template class BatchNorm2d<T>;                                              \
  template class LayerNorm<T>;                                                \
  template class PartialConv2d<T>;                                            \
  template class GcBlock<T>;                                                  \
  template class Bottleneck<T>;

STE_INSTANTIATE_LAYERS(float)
STE_INSTANTIATE_LAYERS(double)

#undef STE_INSTANTIATE_LAYERS

}  // namespace ste::nn
