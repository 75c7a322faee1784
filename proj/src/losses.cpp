#include "ste/losses.hpp"

#include <cmath>

namespace ste {

using nn::Tensor;
using nn::Var;
namespace ops = nn::ops;

void LossWeights::validate() const {
  for (double v : {dice, smpm, pixel, hole_pixel, perceptual, style, tv}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw Error(ErrorKind::kInvalidArgument, "loss weights must be finite and non-negative");
    }
  }
}

namespace {

template <typename T>
Var<T> l1_mean(const Var<T>& a, const Var<T>& b) {
  return ops::mean(ops::abs(ops::sub(a, b)));
}

template <typename T>
Var<T> one_minus(const Var<T>& x) {
  return ops::affine(x, T(-1), T(1));
}

template <typename T>
void check_taps(const std::vector<Var<T>>& a, const std::vector<Var<T>>& b,
                const std::vector<Var<T>>& c) {
  if (a.size() != c.size() || b.size() != c.size() || c.empty()) {
    throw Error(ErrorKind::kShapeMismatch, "feature tap lists differ in length");
  }
}

}  // namespace

template <typename T>
Var<T> dice_loss(const Var<T>& pred_text, const Var<T>& gt_text, T eps) {
  require_shape(gt_text.shape(), pred_text.shape(), "dice_loss");
  const int n = pred_text.shape().n;
  const Var<T> inter = ops::sum_per_sample(ops::mul(pred_text, gt_text));
  const Var<T> mass = ops::affine(
      ops::add(ops::sum_per_sample(pred_text), ops::sum_per_sample(gt_text)), T(1), eps);
  const Var<T> ratio = ops::div(inter, mass);
  // mean over samples of 1 - 2 ratio
  return ops::affine(ops::sum(ratio), T(-2) / static_cast<T>(n), T(1));
}

template <typename T>
Var<T> smpm_loss(const Var<T>& pred_text, const Var<T>& gt_text, T lambda0) {
  return ops::add(l1_mean(pred_text, gt_text), ops::affine(dice_loss(pred_text, gt_text), lambda0, T(0)));
}

template <typename T>
Var<T> pixel_loss(const Var<T>& out, const Var<T>& gt, const Var<T>& valid, T hole_weight) {
  require_shape(gt.shape(), out.shape(), "pixel_loss");
  const Var<T> d = ops::sub(out, gt);
  const Var<T> bg = ops::mean(ops::abs(ops::mul_bcast(d, valid)));
  const Var<T> hole = ops::mean(ops::abs(ops::mul_bcast(d, one_minus(valid))));
  return ops::add(bg, ops::affine(hole, hole_weight, T(0)));
}

template <typename T>
Var<T> compose(const Var<T>& out, const Var<T>& gt, const Var<T>& valid) {
  require_shape(gt.shape(), out.shape(), "compose");
  return ops::add(ops::mul_bcast(gt, valid), ops::mul_bcast(out, one_minus(valid)));
}

template <typename T>
Var<T> perceptual_loss(const std::vector<Var<T>>& f_out, const std::vector<Var<T>>& f_comp,
                       const std::vector<Var<T>>& f_gt) {
  check_taps(f_out, f_comp, f_gt);
  Var<T> acc;
  for (std::size_t i = 0; i < f_gt.size(); ++i) {
    const Var<T> term = ops::add(l1_mean(f_out[i], f_gt[i]), l1_mean(f_comp[i], f_gt[i]));
    acc = acc.defined() ? ops::add(acc, term) : term;
  }
  return acc;
}

template <typename T>
Var<T> style_loss(const std::vector<Var<T>>& f_out, const std::vector<Var<T>>& f_comp,
                  const std::vector<Var<T>>& f_gt) {
  check_taps(f_out, f_comp, f_gt);
  Var<T> acc;
  for (std::size_t i = 0; i < f_gt.size(); ++i) {
    const Var<T> g_gt = ops::gram(f_gt[i]);
    const Var<T> term =
        ops::add(l1_mean(ops::gram(f_out[i]), g_gt), l1_mean(ops::gram(f_comp[i]), g_gt));
    acc = acc.defined() ? ops::add(acc, term) : term;
  }
  return acc;
}

template <typename T>
Var<T> tv_loss(const Var<T>& comp, const Tensor<T>& hole) {
  return ops::masked_tv(comp, hole);
}

template <typename T>
std::map<std::string, double> LossTerms<T>::breakdown() const {
  return {{"smpm", smpm.value().item()},   {"pixel", pixel.value().item()},
          {"perceptual", perceptual.value().item()}, {"style", style.value().item()},
          {"tv", tv.value().item()},       {"total", total.value().item()}};
}

template <typename T>
LossTerms<T> total_loss(const LossInputs<T>& in, const Vgg19<T>& vgg, const LossWeights& w) {
  w.validate();
  LossTerms<T> t;
  const Var<T> gt(in.gt);
  const Var<T> valid = in.valid.numel() > 0 ? Var<T>(in.valid) : one_minus(in.text_prob);
  t.smpm = smpm_loss(in.text_prob, Var<T>(in.gt_text), static_cast<T>(w.dice));
  t.pixel = pixel_loss(in.out, gt, valid, static_cast<T>(w.hole_pixel));
  const Var<T> comp = compose(in.out, gt, valid);
  const auto f_out = vgg.features(in.out);
  const auto f_comp = vgg.features(comp);
  const auto f_gt = vgg.features(gt);
  t.perceptual = perceptual_loss(f_out, f_comp, f_gt);
  t.style = style_loss(f_out, f_comp, f_gt);
  t.tv = tv_loss(comp, in.hole);
  Var<T> total = ops::affine(t.smpm, static_cast<T>(w.smpm), T(0));
  total = ops::add(total, ops::affine(t.pixel, static_cast<T>(w.pixel), T(0)));
  total = ops::add(total, ops::affine(t.perceptual, static_cast<T>(w.perceptual), T(0)));
  total = ops::add(total, ops::affine(t.style, static_cast<T>(w.style), T(0)));
  total = ops::add(total, ops::affine(t.tv, static_cast<T>(w.tv), T(0)));
  t.total = total;
  return t;
}

#define STE_INSTANTIATE_LOSSES(T)                                                             \
  template Var<T> dice_loss(const Var<T>&, const Var<T>&, T);                                 \
  template Var<T> smpm_loss(const Var<T>&, const Var<T>&, T);                                 \
  template Var<T> pixel_loss(const Var<T>&, const Var<T>&, const Var<T>&, T);                 \
  template Var<T> compose(const Var<T>&, const Var<T>&, const Var<T>&);                       \
  template Var<T> perceptual_loss(const std::vector<Var<T>>&, const std::vector<Var<T>>&,     \
                                  const std::vector<Var<T>>&);                                \
  template Var<T> style_loss(const std::vector<Var<T>>&, const std::vector<Var<T>>&,          \
                             const std::vector<Var<T>>&);                                     \
  template Var<T> tv_loss(const Var<T>&, const Tensor<T>&);                                   \
  template struct LossTerms<T>;                                                               \
  template LossTerms<T> total_loss(const LossInputs<T>&, const Vgg19<T>&, const LossWeights&);

STE_INSTANTIATE_LOSSES(float)
STE_INSTANTIATE_LOSSES(double)

#undef STE_INSTANTIATE_LOSSES

}  // namespace ste
