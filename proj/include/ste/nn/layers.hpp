#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ste/nn/ops.hpp"

namespace ste::nn {

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  Tensor<T>* tensor;
};

// Registry filled by every layer's collect(); names are dotted paths.
template <typename T>
struct ParamSet {
  std::vector<NamedParam<T>> params;
  std::vector<NamedBuffer<T>> buffers;

  void add(const std::string& name, const Var<T>& v) { params.push_back({name, v}); }
  void add_buffer(const std::string& name, Tensor<T>* t) { buffers.push_back({name, t}); }
};

// He-normal weights (std = sqrt(2 / fan_in)).
template <typename T>
Tensor<T> he_normal(Shape shape, int fan_in, std::mt19937_64& rng);

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in, int out, ops::ConvGeometry g, bool bias, std::mt19937_64& rng);

  Var<T> forward(const Var<T>& x) const { return ops::conv2d(x, weight, bias, geometry); }
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  Var<T> weight;
  Var<T> bias;
  ops::ConvGeometry geometry;
};

// Weight layout [in, out, k, k].
template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(int in, int out, ops::ConvGeometry g, std::mt19937_64& rng);

  Var<T> forward(const Var<T>& x) const {
    return ops::conv_transpose2d(x, weight, bias, geometry);
  }
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  Var<T> weight;
  Var<T> bias;
  ops::ConvGeometry geometry;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);

  // Batch statistics in training mode unless frozen; running statistics
  // otherwise. Running statistics only move in unfrozen training mode.
  Var<T> forward(const Var<T>& x);
  void collect(const std::string& prefix, ParamSet<T>& out);
  // Eval-mode statistics and non-trainable affine parameters.
  void freeze();

  Var<T> gamma;
  Var<T> beta;
  ops::BatchNormStats<T> stats;
  T momentum = T(0.1);
  T eps = T(1e-5);
  bool training = true;
  bool frozen = false;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(int channels);

  Var<T> forward(const Var<T>& x) const { return ops::layer_norm(x, gamma, beta, eps); }
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  Var<T> gamma;
  Var<T> beta;
  T eps = T(1e-5);
};

// Features plus a binary validity mask [N,1,H,W] (1 = valid).
template <typename T>
struct PConvState {
  Var<T> feature;
  Tensor<T> mask;
};

// Partial convolution with mask update. Zero padding counts as valid, so an
// all-ones mask reproduces a plain convolution exactly.
template <typename T>
class PartialConv2d {
 public:
  PartialConv2d() = default;
  PartialConv2d(int in, int out, ops::ConvGeometry g, bool bias, std::mt19937_64& rng);

  PConvState<T> forward(const PConvState<T>& in) const;
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  // Returns the updated mask and writes k*k / count (0 where count == 0).
  static Tensor<T> update_mask(const Tensor<T>& mask, ops::ConvGeometry g, Tensor<T>* scale);

  Var<T> weight;
  Var<T> bias;
  ops::ConvGeometry geometry;
};

// Global context block: softmax attention pooling, bottleneck transform
// (1x1 conv, LayerNorm, ReLU, 1x1 conv), broadcast residual add. The last
// conv starts at zero so the block is an identity at initialization.
template <typename T>
class GcBlock {
 public:
  GcBlock() = default;
  GcBlock(int channels, int ratio, std::mt19937_64& rng);

  Var<T> forward(const Var<T>& x) const;
  // Attention-pooled context vector [N,C,1,1].
  Var<T> context(const Var<T>& x) const;
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  Conv2d<T> attention;
  Conv2d<T> reduce;
  LayerNorm<T> norm;
  Conv2d<T> expand;
};

// 1x1 reduce, 3x3, 1x1 expand with identity shortcut and ReLU after the add.
template <typename T>
class Bottleneck {
 public:
  Bottleneck() = default;
  Bottleneck(int channels, int inner, std::mt19937_64& rng);

  Var<T> forward(const Var<T>& x) const;
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  Conv2d<T> reduce;
  Conv2d<T> conv;
  Conv2d<T> expand;
};

}  // namespace ste::nn
