#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "ste/nn/layers.hpp"

namespace ste {

// VGG19 feature extractor up to relu5_1 with frozen weights. Inputs are RGB
// in [0, 1]; the ImageNet mean/std normalization is applied internally.
template <typename T>
class Vgg19 {
 public:
  static constexpr int kTaps = 5;
  // torchvision `features` indices of the 13 convolutions used.
  static constexpr std::array<int, 13> kTorchIndices{0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28};

  // Random He-normal weights (every width divided by `width_divisor`).
  static Vgg19 random(std::uint64_t seed, int width_divisor = 1);
  // Weights from an archive with tensors "features.<i>.weight" / ".bias".
  static Vgg19 load(const std::filesystem::path& path);

  // relu1_1, relu2_1, relu3_1, relu4_1, relu5_1.
  std::vector<nn::Var<T>> features(const nn::Var<T>& rgb) const;

  const std::vector<nn::Conv2d<T>>& convs() const { return convs_; }

 private:
  Vgg19() = default;
  std::vector<nn::Conv2d<T>> convs_;
};

}  // namespace ste
