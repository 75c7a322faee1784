#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ste/imagecore.hpp"
#include "ste/nn/layers.hpp"

namespace ste {

struct NetworkConfig {
  int input_height = 128;
  int input_width = 640;
  // Encoder widths at full, 1/2, 1/4, 1/8 resolution.
  std::array<int, 4> smpm_channels{32, 64, 128, 256};
  // Encoder widths at 1/2, 1/4, 1/8 resolution.
  std::array<int, 3> bipm_channels{64, 128, 256};
  int res_blocks = 4;
  // Inner width of the SMPM residual bottlenecks.
  int res_inner = 64;
  int gc_ratio = 4;
  // Text probability threshold for the binary hole mask.
  double mask_threshold = 0.5;
  bool bipm_batch_norm = true;
  bool bipm_decoder_skips = true;
  std::uint64_t seed = 0;

  // Every width divided by `divisor` at a reduced input size (multiple of 8).
  static NetworkConfig miniature(int height, int width, int divisor);
  void validate() const;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct LayerShape {
  std::string name;
  nn::Shape shape;
};

template <typename T>
struct SmpmOutput {
  nn::Var<T> logits;    // [N,3,H,W]
  nn::Var<T> features;  // F_m [N,C,H/8,W/8]
};

template <typename T>
struct EraseOutput {
  nn::Var<T> text_prob;    // soft mask [N,1,H,W], 1 = text
  nn::Tensor<T> valid;     // binary mask [N,1,H,W], 1 = background
  nn::Var<T> out;          // BIPM output [N,3,H,W] in [0,1]
  nn::Var<T> final_image;  // valid * input + (1 - valid) * out
};

template <typename T>
class EraseNet {
 public:
  explicit EraseNet(const NetworkConfig& config);
  ~EraseNet();
  EraseNet(EraseNet&&) noexcept;
  EraseNet& operator=(EraseNet&&) noexcept;

  const NetworkConfig& config() const { return config_; }

  SmpmOutput<T> smpm_forward(const nn::Var<T>& x);
  // sigmoid, then mean over the 3 logit channels.
  static nn::Var<T> reduce_mask(const nn::Var<T>& logits);
  // Binary validity: 1 where 1 - text_prob >= mask_threshold.
  nn::Tensor<T> valid_mask(const nn::Tensor<T>& text_prob) const;
  nn::Var<T> bipm_forward(const nn::Var<T>& x, const nn::Tensor<T>& valid,
                          const nn::Var<T>& features);
  EraseOutput<T> forward(const nn::Var<T>& x);

  // Output shape of every layer for a batch-1 input, recorded without gradients.
  std::vector<LayerShape> trace_shapes();

  nn::ParamSet<T> parameters();
  std::size_t count_parameters(bool trainable_only = true);

  // Train mode uses batch statistics in every unfrozen BN layer.
  void set_training(bool on);
  // Freezes every BN layer of the BIPM encoder; throws kNoBnLayers when the
  // configuration has none.
  void freeze_encoder_bn();
  bool encoder_bn_frozen() const;
  // The BN layers freeze_encoder_bn() affects, in encoder order.
  std::vector<nn::BatchNorm2d<T>*> encoder_bn_layers();

 private:
  struct Layers;

  void check_input(const nn::Var<T>& x) const;
  void record(const std::string& name, const nn::Shape& s);

  NetworkConfig config_;
  std::unique_ptr<Layers> layers_;
  std::vector<LayerShape>* trace_ = nullptr;
};

// Converts between HWC images and NCHW tensors.
template <typename T>
nn::Tensor<T> image_to_tensor(const ImageBuffer& img);
template <typename T>
nn::Tensor<T> images_to_tensor(const std::vector<ImageBuffer>& imgs);
template <typename T>
ImageBuffer tensor_to_image(const nn::Tensor<T>& t, int index = 0);
template <typename T>
nn::Tensor<T> mask_to_tensor(const std::vector<StrokeMask>& masks);
template <typename T>
StrokeMask tensor_to_mask(const nn::Tensor<T>& t, int index = 0);

}  // namespace ste
