#pragma once

#include <map>
#include <string>
#include <vector>

#include "ste/nn/ops.hpp"
#include "ste/vgg.hpp"

namespace ste {

struct LossWeights {
  double dice = 1.0;         // lambda0
  double smpm = 10.0;
  double pixel = 1.0;
  double hole_pixel = 6.0;
  double perceptual = 0.05;  // lambda1
  double style = 100.0;      // lambda2
  double tv = 0.1;           // lambda3

  void validate() const;
};

// Masks below are [N,1,H,W]; images [N,3,H,W]. All L1 norms are element means.

// 1 - 2 sum(pred * gt) / (sum(pred) + sum(gt) + eps) per sample, averaged over
// the batch. Both masks use text stroke = 1.
template <typename T>
nn::Var<T> dice_loss(const nn::Var<T>& pred_text, const nn::Var<T>& gt_text, T eps = T(1e-6));

// mean |pred - gt| + lambda0 * dice.
template <typename T>
nn::Var<T> smpm_loss(const nn::Var<T>& pred_text, const nn::Var<T>& gt_text, T lambda0);

// mean |valid * d| + hole_weight * mean |(1 - valid) * d| with d = out - gt and
// `valid` = 1 on background.
template <typename T>
nn::Var<T> pixel_loss(const nn::Var<T>& out, const nn::Var<T>& gt, const nn::Var<T>& valid,
                      T hole_weight);

// valid * gt + (1 - valid) * out.
template <typename T>
nn::Var<T> compose(const nn::Var<T>& out, const nn::Var<T>& gt, const nn::Var<T>& valid);

// Sum over taps of mean |f_out - f_gt| + mean |f_comp - f_gt|.
template <typename T>
nn::Var<T> perceptual_loss(const std::vector<nn::Var<T>>& f_out, const std::vector<nn::Var<T>>& f_comp,
                           const std::vector<nn::Var<T>>& f_gt);

// Same as perceptual_loss on Gram matrices phi phi^T / (C H W).
template <typename T>
nn::Var<T> style_loss(const std::vector<nn::Var<T>>& f_out, const std::vector<nn::Var<T>>& f_comp,
                      const std::vector<nn::Var<T>>& f_gt);

// Absolute differences to the right and lower neighbour of every hole pixel
// (hole = 1), summed and divided by the element count of `comp`.
template <typename T>
nn::Var<T> tv_loss(const nn::Var<T>& comp, const nn::Tensor<T>& hole);

template <typename T>
struct LossInputs {
  nn::Var<T> text_prob;  // predicted soft stroke mask, text = 1
  nn::Tensor<T> gt_text;  // ground-truth stroke mask, text = 1
  nn::Var<T> out;         // BIPM output
  nn::Tensor<T> gt;       // text-free ground truth
  nn::Tensor<T> hole;     // binarized predicted hole region for TV, hole = 1
  // Mask for the pixel loss and the composition, 1 = background. Held
  // constant when set; empty means 1 - text_prob with gradients.
  nn::Tensor<T> valid;
};

template <typename T>
struct LossTerms {
  nn::Var<T> smpm;
  nn::Var<T> pixel;
  nn::Var<T> perceptual;
  nn::Var<T> style;
  nn::Var<T> tv;
  nn::Var<T> total;

  std::map<std::string, double> breakdown() const;
};

// 10 L_smpm + 1 L_pixel + 0.05 L_per + 100 L_style + 0.1 L_tv (default weights).
// `valid` (or 1 - text_prob) drives the pixel loss and the composition.
template <typename T>
LossTerms<T> total_loss(const LossInputs<T>& in, const Vgg19<T>& vgg, const LossWeights& w);

}  // namespace ste
