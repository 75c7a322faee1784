#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ste/imagecore.hpp"

namespace ste {

inline constexpr double kPsnrCap = 99.0;

// Mean of (a - b)^2 over every channel and pixel.
double mse(const ImageBuffer& a, const ImageBuffer& b);

// 10 log10(peak^2 / mse); +infinity when the images are identical.
double psnr(const ImageBuffer& a, const ImageBuffer& b, double peak = 1.0);

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
};

// Mean local SSIM of the BT.601 luma over all fully contained Gaussian
// windows. Throws kImageTooSmall when either side is shorter than the window.
double ssim(const ImageBuffer& a, const ImageBuffer& b, const SsimParams& params = {});

// 0.299 R + 0.587 G + 0.114 B, row-major.
std::vector<double> luma(const ImageBuffer& img);

struct ImageScore {
  std::string name;
  double psnr = 0.0;  // capped at kPsnrCap
  double ssim = 0.0;
  double mse = 0.0;
};

struct EvalReport {
  std::vector<ImageScore> images;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double mean_mse = 0.0;

  std::string to_json() const;
  std::string to_csv() const;
};

ImageScore score_pair(const std::string& name, const ImageBuffer& pred, const ImageBuffer& gt,
                      const SsimParams& params = {});

EvalReport summarize(std::vector<ImageScore> scores);

// Scores every image in `pred_dir` against the file of the same name in
// `gt_dir`. Unmatched names on either side raise kInvalidArgument.
EvalReport evaluate_dirs(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                         int threads = 0);

}  // namespace ste
