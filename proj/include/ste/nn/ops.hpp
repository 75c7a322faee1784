#pragma once

#include <vector>

#include "ste/nn/autograd.hpp"

// Differentiable primitives. All are instantiated for float and double.
namespace ste::nn::ops {

struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  // Transposed convolution only.
  int output_pad = 0;
};

inline int conv_out(int in, const ConvGeometry& g) {
  return (in + 2 * g.pad - g.kernel) / g.stride + 1;
}

// x [N,Ci,H,W], weight [Co,Ci,k,k], bias [1,Co,1,1] or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry g);

// x [N,Ci,H,W], weight [Ci,Co,k,k]; output (H-1)*s - 2p + k + output_pad.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
                        ConvGeometry g);

template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> abs(const Var<T>& x);

// Same-shape elementwise arithmetic.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b);
// scale * x + shift
template <typename T> Var<T> affine(const Var<T>& x, T scale, T shift);

// x [N,C,H,W] * m [N,1,H,W], m broadcast over channels.
template <typename T> Var<T> mul_bcast(const Var<T>& x, const Var<T>& m);
// x [N,C,H,W] + b [1,C,1,1].
template <typename T> Var<T> add_channel_bias(const Var<T>& x, const Var<T>& b);
// x [N,C,H,W] + v [N,C,1,1], v broadcast over space.
template <typename T> Var<T> add_bcast_spatial(const Var<T>& x, const Var<T>& v);
// Fixed per-channel (x - mean[c]) / std[c].
template <typename T>
Var<T> normalize_channels(const Var<T>& x, const std::vector<T>& mean, const std::vector<T>& stddev);

template <typename T> Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T> Var<T> upsample_nearest2x(const Var<T>& x);
template <typename T> Var<T> max_pool2x2(const Var<T>& x);
// [N,C,H,W] -> [N,1,H,W]
template <typename T> Var<T> channel_mean(const Var<T>& x);

template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
// [N,C,H,W] -> [N,1,1,1]
template <typename T> Var<T> sum_per_sample(const Var<T>& x);

// Running statistics owned by a BatchNorm layer.
template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

// With use_batch_stats the batch mean/variance normalize x (and, if
// update_running, the running statistics move by `momentum`); otherwise the
// running statistics are used.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T>& stats,
                  bool use_batch_stats, bool update_running, T momentum, T eps);

// Normalizes over (C,H,W) per sample, then per-channel affine.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps);

// Softmax over all spatial positions of a single-channel map [N,1,H,W].
template <typename T> Var<T> softmax_spatial(const Var<T>& x);
// sum_j w[n,0,j] * x[n,c,j] -> [N,C,1,1]
template <typename T> Var<T> weighted_pool(const Var<T>& x, const Var<T>& w);

// phi phi^T / (C H W) per sample -> [N,1,C,C]
template <typename T> Var<T> gram(const Var<T>& x);

// Sum of |x(i,j+1) - x(i,j)| and |x(i+1,j) - x(i,j)| over pairs whose
// rooted pixel (i,j) is in the hole (hole[n,0,i,j] > 0.5), divided by numel.
template <typename T> Var<T> masked_tv(const Var<T>& x, const Tensor<T>& hole);

}  // namespace ste::nn::ops
