#include "ste/vgg.hpp"

#include <random>

#include "ste/archive.hpp"

namespace ste {

namespace {

constexpr std::array<int, 13> kWidths{64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512, 512};
// Tap after these conv indices; a 2x2 max pool precedes conv 2, 4, 8 and 12.
constexpr std::array<int, 5> kTapAfter{0, 2, 4, 8, 12};

bool pool_before(int i) { return i == 2 || i == 4 || i == 8 || i == 12; }

}  // namespace

template <typename T>
Vgg19<T> Vgg19<T>::random(std::uint64_t seed, int width_divisor) {
  if (width_divisor < 1) throw Error(ErrorKind::kInvalidArgument, "width divisor must be >= 1");
  std::mt19937_64 rng(seed);
  Vgg19 v;
  int in = 3;
  for (int w : kWidths) {
    const int out = std::max(1, w / width_divisor);
    v.convs_.emplace_back(in, out, nn::ops::ConvGeometry{3, 1, 1}, true, rng);
    in = out;
  }
  for (auto& c : v.convs_) {
    c.weight.set_requires_grad(false);
    c.bias.set_requires_grad(false);
  }
  return v;
}

template <typename T>
Vgg19<T> Vgg19<T>::load(const std::filesystem::path& path) {
  const Archive a = read_archive(path);
  Vgg19 v;
  int in = 3;
  for (std::size_t i = 0; i < kTorchIndices.size(); ++i) {
    const std::string stem = "features." + std::to_string(kTorchIndices[i]);
    const ArchiveEntry* w = a.find(stem + ".weight");
    const ArchiveEntry* b = a.find(stem + ".bias");
    if (!w || !b) throw Error(ErrorKind::kParseError, path.string() + " lacks " + stem);
    if (w->shape.c != in || w->shape.h != 3 || w->shape.w != 3 ||
        !(b->shape == nn::Shape{1, w->shape.n, 1, 1})) {
      throw Error(ErrorKind::kShapeMismatch, stem + " has shape " + w->shape.str());
    }
    nn::Conv2d<T> conv;
    conv.weight = nn::Var<T>(entry_tensor<T>(*w));
    conv.bias = nn::Var<T>(entry_tensor<T>(*b));
    conv.geometry = {3, 1, 1};
    v.convs_.push_back(std::move(conv));
    in = w->shape.n;
  }
  return v;
}

template <typename T>
std::vector<nn::Var<T>> Vgg19<T>::features(const nn::Var<T>& rgb) const {
  namespace ops = nn::ops;
  std::vector<nn::Var<T>> taps;
  nn::Var<T> h = ops::normalize_channels<T>(rgb, {T(0.485), T(0.456), T(0.406)},
                                            {T(0.229), T(0.224), T(0.225)});
  std::size_t next_tap = 0;
  for (int i = 0; i < static_cast<int>(convs_.size()); ++i) {
    if (pool_before(i)) h = ops::max_pool2x2(h);
    h = ops::relu(convs_[i].forward(h));
    if (next_tap < kTapAfter.size() && kTapAfter[next_tap] == i) {
      taps.push_back(h);
      ++next_tap;
    }
  }
  return taps;
}

template class Vgg19<float>;
template class Vgg19<double>;

}  // namespace ste
