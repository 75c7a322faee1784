#include "ste/net.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ste {

using nn::Shape;
using nn::Tensor;
using nn::Var;
namespace ops = nn::ops;

NetworkConfig NetworkConfig::miniature(int height, int width, int divisor) {
  NetworkConfig c;
  c.input_height = height;
  c.input_width = width;
  for (int& v : c.smpm_channels) v = std::max(1, v / divisor);
  for (int& v : c.bipm_channels) v = std::max(1, v / divisor);
  c.res_inner = std::max(1, c.res_inner / divisor);
  c.validate();
  return c;
}

void NetworkConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::kInvalidArgument, what); };
  if (input_height < 8 || input_width < 8 || input_height % 8 || input_width % 8) {
    fail("input size must be a positive multiple of 8");
  }
  for (int v : smpm_channels) {
    if (v < 1) fail("smpm channels must be positive");
  }
  for (int v : bipm_channels) {
    if (v < 1) fail("bipm channels must be positive");
  }
  if (res_blocks < 0 || res_inner < 1) fail("invalid residual block configuration");
  if (gc_ratio < 1 || (bipm_channels[2] + smpm_channels[3]) % gc_ratio != 0) {
    fail("GC block width must be divisible by gc_ratio");
  }
  if (!(mask_threshold > 0.0 && mask_threshold < 1.0)) fail("mask_threshold must be in (0,1)");
}

namespace {

constexpr ops::ConvGeometry k3{3, 1, 1};
constexpr ops::ConvGeometry k3s2{3, 2, 1};
constexpr ops::ConvGeometry k5s2{5, 2, 2};
constexpr ops::ConvGeometry k7s2{7, 2, 3};
constexpr ops::ConvGeometry deconv{3, 2, 1, 1};

template <typename T>
Tensor<T> upsample_mask(const Tensor<T>& m) {
  const Shape s = m.shape();
  Tensor<T> out(Shape{s.n, 1, s.h * 2, s.w * 2});
  for (int n = 0; n < s.n; ++n)
    for (int i = 0; i < s.h * 2; ++i)
      for (int j = 0; j < s.w * 2; ++j) out.at(n, 0, i, j) = m.at(n, 0, i / 2, j / 2);
  return out;
}

template <typename T>
Tensor<T> mask_or(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::max(a[i], b[i]);
  return out;
}

}  // namespace

template <typename T>
struct EraseNet<T>::Layers {
  // Partial conv, optional BN, then ReLU (or sigmoid for the output layer).
  struct PBlock {
    nn::PartialConv2d<T> conv;
    nn::BatchNorm2d<T> bn;
    bool has_bn = false;
    bool output = false;

    nn::PConvState<T> forward(const nn::PConvState<T>& in) {
      nn::PConvState<T> s = conv.forward(in);
      if (has_bn) s.feature = bn.forward(s.feature);
      s.feature = output ? ops::sigmoid(s.feature) : ops::relu(s.feature);
      return s;
    }
    void collect(const std::string& prefix, nn::ParamSet<T>& out) {
      conv.collect(prefix + ".pconv", out);
      if (has_bn) bn.collect(prefix + ".bn", out);
    }
  };

  // SMPM
  std::array<std::array<nn::Conv2d<T>, 2>, 4> enc;
  std::array<nn::Conv2d<T>, 3> down;
  std::vector<nn::Bottleneck<T>> res;
  std::array<nn::Conv2d<T>, 2> mid;
  std::array<nn::ConvTranspose2d<T>, 3> up;
  std::array<std::array<nn::Conv2d<T>, 2>, 3> dec;
  nn::Conv2d<T> head;

  // BIPM
  std::array<std::array<PBlock, 3>, 3> penc;
  nn::GcBlock<T> gc;
  nn::Conv2d<T> fuse;
  nn::BatchNorm2d<T> fuse_bn;
  std::array<std::array<PBlock, 3>, 3> pdec;

  Layers(const NetworkConfig& c, std::mt19937_64& rng) {
    const auto& sc = c.smpm_channels;
    int in = 3;
    for (int level = 0; level < 4; ++level) {
      if (level > 0) {
        down[level - 1] = nn::Conv2d<T>(sc[level - 1], sc[level], k3s2, true, rng);
        in = sc[level];
      }
      enc[level][0] = nn::Conv2d<T>(in, sc[level], k3, true, rng);
      enc[level][1] = nn::Conv2d<T>(sc[level], sc[level], k3, true, rng);
    }
    for (int i = 0; i < c.res_blocks; ++i) res.emplace_back(sc[3], c.res_inner, rng);
    mid[0] = nn::Conv2d<T>(sc[3], sc[3], k3, true, rng);
    mid[1] = nn::Conv2d<T>(sc[3], sc[3], k3, true, rng);
    for (int stage = 0; stage < 3; ++stage) {
      const int from = sc[3 - stage];
      const int to = sc[2 - stage];
      up[stage] = nn::ConvTranspose2d<T>(from, to, deconv, rng);
      dec[stage][0] = nn::Conv2d<T>(2 * to, to, k3, true, rng);
      dec[stage][1] = nn::Conv2d<T>(to, to, k3, true, rng);
    }
    head = nn::Conv2d<T>(sc[0], 3, k3, true, rng);

    const auto& bc = c.bipm_channels;
    const bool bn = c.bipm_batch_norm;
    auto block = [&](int ci, int co, ops::ConvGeometry g) {
      PBlock b;
      b.conv = nn::PartialConv2d<T>(ci, co, g, !bn, rng);
      b.has_bn = bn;
      if (bn) b.bn = nn::BatchNorm2d<T>(co);
      return b;
    };
    const std::array<ops::ConvGeometry, 3> stem{k7s2, k5s2, k3s2};
    in = 3;
    for (int level = 0; level < 3; ++level) {
      penc[level][0] = block(in, bc[level], stem[level]);
      penc[level][1] = block(bc[level], bc[level], k3);
      penc[level][2] = block(bc[level], bc[level], k3);
      in = bc[level];
    }
    const int joint = bc[2] + sc[3];
    gc = nn::GcBlock<T>(joint, c.gc_ratio, rng);
    fuse = nn::Conv2d<T>(joint, bc[2], k3, !bn, rng);
    if (bn) fuse_bn = nn::BatchNorm2d<T>(bc[2]);
    // Stage s upsamples to the resolution of encoder level 2 - s.
    const std::array<int, 3> wide{bc[2], bc[1], bc[0]};
    const std::array<int, 3> skip{bc[1], bc[0], 3};
    const std::array<int, 3> narrow{bc[1], bc[0], 3};
    for (int stage = 0; stage < 3; ++stage) {
      const int ci = wide[stage] + (c.bipm_decoder_skips ? skip[stage] : 0);
      pdec[stage][0] = block(ci, wide[stage], k3);
      pdec[stage][1] = block(wide[stage], wide[stage], k3);
      if (stage < 2) {
        pdec[stage][2] = block(wide[stage], narrow[stage], k3);
      } else {
        PBlock& out = pdec[stage][2];
        out.conv = nn::PartialConv2d<T>(wide[stage], 3, k3, true, rng);
        out.output = true;
      }
    }
  }

  void collect(nn::ParamSet<T>& out, bool with_bn) {
    for (int level = 0; level < 4; ++level) {
      const std::string p = "smpm.enc" + std::to_string(level);
      if (level > 0) down[level - 1].collect("smpm.down" + std::to_string(level), out);
      enc[level][0].collect(p + ".0", out);
      enc[level][1].collect(p + ".1", out);
    }
    for (std::size_t i = 0; i < res.size(); ++i) res[i].collect("smpm.res" + std::to_string(i), out);
    mid[0].collect("smpm.mid.0", out);
    mid[1].collect("smpm.mid.1", out);
    for (int stage = 0; stage < 3; ++stage) {
      const std::string p = "smpm.dec" + std::to_string(stage);
      up[stage].collect(p + ".deconv", out);
      dec[stage][0].collect(p + ".0", out);
      dec[stage][1].collect(p + ".1", out);
    }
    head.collect("smpm.head", out);
    for (int level = 0; level < 3; ++level) {
      for (int i = 0; i < 3; ++i) {
        penc[level][i].collect("bipm.enc" + std::to_string(level) + "." + std::to_string(i), out);
      }
    }
    gc.collect("bipm.gc", out);
    fuse.collect("bipm.fuse", out);
    if (with_bn) fuse_bn.collect("bipm.fuse_bn", out);
    for (int stage = 0; stage < 3; ++stage) {
      for (int i = 0; i < 3; ++i) {
        pdec[stage][i].collect("bipm.dec" + std::to_string(stage) + "." + std::to_string(i), out);
      }
    }
  }
};

template <typename T>
EraseNet<T>::EraseNet(const NetworkConfig& config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  layers_ = std::make_unique<Layers>(config_, rng);
}

template <typename T>
EraseNet<T>::~EraseNet() = default;
template <typename T>
EraseNet<T>::EraseNet(EraseNet&&) noexcept = default;
template <typename T>
EraseNet<T>& EraseNet<T>::operator=(EraseNet&&) noexcept = default;

template <typename T>
void EraseNet<T>::check_input(const Var<T>& x) const {
  const Shape s = x.shape();
  if (s.n < 1 || s.c != 3 || s.h != config_.input_height || s.w != config_.input_width) {
    throw Error(ErrorKind::kShapeMismatch,
                "network input must be [N,3," + std::to_string(config_.input_height) + "," +
                    std::to_string(config_.input_width) + "], got " + s.str());
  }
}

template <typename T>
void EraseNet<T>::record(const std::string& name, const Shape& s) {
  if (trace_) trace_->push_back({name, s});
}

template <typename T>
SmpmOutput<T> EraseNet<T>::smpm_forward(const Var<T>& x) {
  check_input(x);
  Layers& L = *layers_;
  auto conv2 = [](std::array<nn::Conv2d<T>, 2>& pair, const Var<T>& v) {
    return ops::relu(pair[1].forward(ops::relu(pair[0].forward(v))));
  };
  std::array<Var<T>, 4> skips;
  Var<T> h = x;
  for (int level = 0; level < 4; ++level) {
    if (level > 0) {
      h = ops::relu(L.down[level - 1].forward(h));
      record("smpm.down" + std::to_string(level), h.shape());
    }
    h = conv2(L.enc[level], h);
    record("smpm.enc" + std::to_string(level) + ".conv_x2", h.shape());
    skips[level] = h;
  }
  for (const auto& block : L.res) h = block.forward(h);
  record("smpm.resblocks", h.shape());
  const Var<T> features = h;
  h = conv2(L.mid, h);
  record("smpm.mid.conv_x2", h.shape());
  for (int stage = 0; stage < 3; ++stage) {
    h = ops::relu(L.up[stage].forward(h));
    record("smpm.dec" + std::to_string(stage) + ".deconv", h.shape());
    h = conv2(L.dec[stage], ops::concat_channels<T>({h, skips[2 - stage]}));
    record("smpm.dec" + std::to_string(stage) + ".conv_x2", h.shape());
  }
  const Var<T> logits = L.head.forward(h);
  record("smpm.head", logits.shape());
  return {logits, features};
}

template <typename T>
Var<T> EraseNet<T>::reduce_mask(const Var<T>& logits) {
  for (T v : logits.value().values()) {
    if (!std::isfinite(v)) throw Error(ErrorKind::kNonFiniteInput, "mask logits are not finite");
  }
  if (logits.shape().c != 3) {
    throw Error(ErrorKind::kShapeMismatch, "mask logits must have 3 channels");
  }
  return ops::channel_mean(ops::sigmoid(logits));
}

template <typename T>
Tensor<T> EraseNet<T>::valid_mask(const Tensor<T>& text_prob) const {
  Tensor<T> valid(text_prob.shape());
  const T tau = static_cast<T>(config_.mask_threshold);
  for (std::size_t i = 0; i < valid.numel(); ++i) {
    valid[i] = (T(1) - text_prob[i]) >= tau ? T(1) : T(0);
  }
  return valid;
}

template <typename T>
Var<T> EraseNet<T>::bipm_forward(const Var<T>& x, const Tensor<T>& valid, const Var<T>& features) {
  check_input(x);
  const Shape xs = x.shape();
  require_shape(valid.shape(), Shape{xs.n, 1, xs.h, xs.w}, "bipm hole mask");
  require_shape(features.shape(),
                Shape{xs.n, config_.smpm_channels[3], xs.h / 8, xs.w / 8}, "bipm F_m");
  Layers& L = *layers_;
  std::array<nn::PConvState<T>, 3> skips;
  nn::PConvState<T> s{x, valid};
  for (int level = 0; level < 3; ++level) {
    for (int i = 0; i < 3; ++i) {
      s = L.penc[level][i].forward(s);
      if (i != 1) {
        record("bipm.enc" + std::to_string(level) + (i == 0 ? ".pconv" : ".pconv_x2"),
               s.feature.shape());
      }
    }
    skips[level] = s;
  }
  Var<T> h = L.gc.forward(ops::concat_channels<T>({s.feature, features}));
  record("bipm.gc", h.shape());
  h = L.fuse.forward(h);
  if (config_.bipm_batch_norm) h = L.fuse_bn.forward(h);
  h = ops::relu(h);
  record("bipm.fuse", h.shape());
  Tensor<T> mask = s.mask;
  for (int stage = 0; stage < 3; ++stage) {
    h = ops::upsample_nearest2x(h);
    mask = upsample_mask(mask);
    record("bipm.dec" + std::to_string(stage) + ".upsample", h.shape());
    if (config_.bipm_decoder_skips) {
      const nn::PConvState<T>& skip = stage < 2 ? skips[1 - stage] : nn::PConvState<T>{x, valid};
      h = ops::concat_channels<T>({h, ops::mul_bcast(skip.feature, Var<T>(skip.mask))});
      mask = mask_or(mask, skip.mask);
    }
    nn::PConvState<T> d{h, mask};
    d = L.pdec[stage][0].forward(d);
    d = L.pdec[stage][1].forward(d);
    record("bipm.dec" + std::to_string(stage) + ".pconv_x2", d.feature.shape());
    d = L.pdec[stage][2].forward(d);
    record("bipm.dec" + std::to_string(stage) + ".pconv", d.feature.shape());
    h = d.feature;
    mask = d.mask;
  }
  return h;
}

template <typename T>
EraseOutput<T> EraseNet<T>::forward(const Var<T>& x) {
  const SmpmOutput<T> smpm = smpm_forward(x);
  EraseOutput<T> out;
  out.text_prob = reduce_mask(smpm.logits);
  out.valid = valid_mask(out.text_prob.value());
  out.out = bipm_forward(x, out.valid, smpm.features);
  Tensor<T> hole(out.valid.shape());
  for (std::size_t i = 0; i < hole.numel(); ++i) hole[i] = T(1) - out.valid[i];
  out.final_image = ops::add(ops::mul_bcast(x, Var<T>(out.valid)),
                             ops::mul_bcast(out.out, Var<T>(std::move(hole))));
  return out;
}

template <typename T>
std::vector<LayerShape> EraseNet<T>::trace_shapes() {
  std::vector<LayerShape> shapes;
  std::mt19937_64 rng(0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor<T> input(Shape{1, 3, config_.input_height, config_.input_width});
  for (T& v : input.values()) v = static_cast<T>(u(rng));
  nn::NoGradGuard guard;
  trace_ = &shapes;
  try {
    forward(Var<T>(std::move(input)));
  } catch (...) {
    trace_ = nullptr;
    throw;
  }
  trace_ = nullptr;
  return shapes;
}

template <typename T>
nn::ParamSet<T> EraseNet<T>::parameters() {
  nn::ParamSet<T> out;
  layers_->collect(out, config_.bipm_batch_norm);
  return out;
}

template <typename T>
std::size_t EraseNet<T>::count_parameters(bool trainable_only) {
  std::size_t total = 0;
  for (const auto& p : parameters().params) {
    if (!trainable_only || p.var.requires_grad()) total += p.var.value().numel();
  }
  return total;
}

template <typename T>
void EraseNet<T>::set_training(bool on) {
  Layers& L = *layers_;
  for (auto& level : L.penc)
    for (auto& b : level) b.bn.training = on;
  for (auto& stage : L.pdec)
    for (auto& b : stage) b.bn.training = on;
  L.fuse_bn.training = on;
}

template <typename T>
std::vector<nn::BatchNorm2d<T>*> EraseNet<T>::encoder_bn_layers() {
  std::vector<nn::BatchNorm2d<T>*> out;
  if (!config_.bipm_batch_norm) return out;
  for (auto& level : layers_->penc)
    for (auto& b : level) out.push_back(&b.bn);
  return out;
}

template <typename T>
void EraseNet<T>::freeze_encoder_bn() {
  const auto bns = encoder_bn_layers();
  if (bns.empty()) throw Error(ErrorKind::kNoBnLayers, "the BIPM encoder has no BN layers");
  for (auto* bn : bns) bn->freeze();
}

template <typename T>
bool EraseNet<T>::encoder_bn_frozen() const {
  if (!config_.bipm_batch_norm) return false;
  for (const auto& level : layers_->penc)
    for (const auto& b : level)
      if (!b.bn.frozen) return false;
  return true;
}

template <typename T>
Tensor<T> image_to_tensor(const ImageBuffer& img) {
  return images_to_tensor<T>({img});
}

template <typename T>
Tensor<T> images_to_tensor(const std::vector<ImageBuffer>& imgs) {
  if (imgs.empty()) throw Error(ErrorKind::kShapeMismatch, "no images");
  const int h = imgs[0].height();
  const int w = imgs[0].width();
  Tensor<T> t(Shape{static_cast<int>(imgs.size()), 3, h, w});
  for (int n = 0; n < static_cast<int>(imgs.size()); ++n) {
    if (imgs[n].height() != h || imgs[n].width() != w) {
      throw Error(ErrorKind::kShapeMismatch, "batch images differ in size");
    }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) t.at(n, c, y, x) = static_cast<T>(imgs[n].at(y, x, c));
  }
  return t;
}

template <typename T>
ImageBuffer tensor_to_image(const Tensor<T>& t, int index) {
  const Shape s = t.shape();
  if (s.c != 3 || index < 0 || index >= s.n) {
    throw Error(ErrorKind::kShapeMismatch, "cannot convert " + s.str() + " to an image");
  }
  ImageBuffer img(s.h, s.w);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) = std::clamp(static_cast<float>(t.at(index, c, y, x)), 0.0f, 1.0f);
      }
  return img;
}

template <typename T>
Tensor<T> mask_to_tensor(const std::vector<StrokeMask>& masks) {
  if (masks.empty()) throw Error(ErrorKind::kShapeMismatch, "no masks");
  const int h = masks[0].height();
  const int w = masks[0].width();
  Tensor<T> t(Shape{static_cast<int>(masks.size()), 1, h, w});
  for (int n = 0; n < static_cast<int>(masks.size()); ++n) {
    if (masks[n].height() != h || masks[n].width() != w) {
      throw Error(ErrorKind::kShapeMismatch, "batch masks differ in size");
    }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) t.at(n, 0, y, x) = static_cast<T>(masks[n].at(y, x));
  }
  return t;
}

template <typename T>
StrokeMask tensor_to_mask(const Tensor<T>& t, int index) {
  const Shape s = t.shape();
  if (s.c != 1 || index < 0 || index >= s.n) {
    throw Error(ErrorKind::kShapeMismatch, "cannot convert " + s.str() + " to a mask");
  }
  StrokeMask m(s.h, s.w);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) {
      m.at(y, x) = std::clamp(static_cast<float>(t.at(index, 0, y, x)), 0.0f, 1.0f);
    }
  return m;
}

#define STE_INSTANTIATE_NET(T)                                                \
  template class EraseNet<T>;                                                 \
  template Tensor<T> image_to_tensor<T>(const ImageBuffer&);                  \
  template Tensor<T> images_to_tensor<T>(const std::vector<ImageBuffer>&);    \
  template ImageBuffer tensor_to_image<T>(const Tensor<T>&, int);             \
  template Tensor<T> mask_to_tensor<T>(const std::vector<StrokeMask>&);       \
  template StrokeMask tensor_to_mask<T>(const Tensor<T>&, int);

STE_INSTANTIATE_NET(float)
STE_INSTANTIATE_NET(double)

#undef STE_INSTANTIATE_NET

}  // namespace ste
