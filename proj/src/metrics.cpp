#include "ste/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace ste {

namespace {

void require_same_shape(const ImageBuffer& a, const ImageBuffer& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw Error(ErrorKind::kShapeMismatch, "images differ in size: " + std::to_string(a.width()) + "x" +
                                               std::to_string(a.height()) + " vs " +
                                               std::to_string(b.width()) + "x" + std::to_string(b.height()));
  }
  if (a.empty()) throw Error(ErrorKind::kShapeMismatch, "empty image");
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size) * size);
  const double c = (size - 1) / 2.0;
  double total = 0.0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double d2 = (x - c) * (x - c) + (y - c) * (y - c);
      w[y * size + x] = std::exp(-d2 / (2 * sigma * sigma));
      total += w[y * size + x];
    }
  }
  for (double& v : w) v /= total;
  return w;
}

bool is_image_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

std::set<std::string> image_names(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorKind::kFileNotFound, dir.string());
  std::set<std::string> names;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) names.insert(entry.path().filename().string());
  }
  return names;
}

}  // namespace

double mse(const ImageBuffer& a, const ImageBuffer& b) {
  require_same_shape(a, b);
  double acc = 0.0;
  const auto va = a.values(), vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double d = static_cast<double>(va[i]) - vb[i];
    acc += d * d;
  }
  return acc / static_cast<double>(va.size());
}

double psnr(const ImageBuffer& a, const ImageBuffer& b, double peak) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / m);
}

std::vector<double> luma(const ImageBuffer& img) {
  std::vector<double> y(static_cast<std::size_t>(img.height()) * img.width());
  for (int r = 0; r < img.height(); ++r) {
    for (int c = 0; c < img.width(); ++c) {
      y[static_cast<std::size_t>(r) * img.width() + c] =
          0.299 * img.at(r, c, 0) + 0.587 * img.at(r, c, 1) + 0.114 * img.at(r, c, 2);
    }
  }
  return y;
}

double ssim(const ImageBuffer& a, const ImageBuffer& b, const SsimParams& p) {
  require_same_shape(a, b);
  if (p.window < 1 || !(p.sigma > 0.0)) throw Error(ErrorKind::kInvalidArgument, "bad SSIM window");
  const int h = a.height(), w = a.width(), k = p.window;
  if (h < k || w < k) {
    throw Error(ErrorKind::kImageTooSmall,
                std::to_string(w) + "x" + std::to_string(h) + " is smaller than the " + std::to_string(k) +
                    "-pixel SSIM window");
  }
  const std::vector<double> ya = luma(a), yb = luma(b), g = gaussian_window(k, p.sigma);
  const double c1 = (p.k1 * p.peak) * (p.k1 * p.peak);
  const double c2 = (p.k2 * p.peak) * (p.k2 * p.peak);
  double total = 0.0;
  for (int y0 = 0; y0 + k <= h; ++y0) {
    for (int x0 = 0; x0 + k <= w; ++x0) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = 0; dy < k; ++dy) {
        for (int dx = 0; dx < k; ++dx) {
          const double wt = g[dy * k + dx];
          const double va = ya[(y0 + dy) * w + x0 + dx], vb = yb[(y0 + dy) * w + x0 + dx];
          ma += wt * va;
          mb += wt * vb;
          saa += wt * va * va;
          sbb += wt * vb * vb;
          sab += wt * va * vb;
        }
      }
      const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
  }
  return total / (static_cast<double>(h - k + 1) * (w - k + 1));
}

ImageScore score_pair(const std::string& name, const ImageBuffer& pred, const ImageBuffer& gt,
                      const SsimParams& params) {
  ImageScore s;
  s.name = name;
  s.mse = mse(pred, gt);
  s.psnr = std::min(psnr(pred, gt), kPsnrCap);
  s.ssim = ssim(pred, gt, params);
  return s;
}

EvalReport summarize(std::vector<ImageScore> scores) {
  EvalReport r;
  r.images = std::move(scores);
  if (r.images.empty()) return r;
  for (const ImageScore& s : r.images) {
    r.mean_psnr += s.psnr;
    r.mean_ssim += s.ssim;
    r.mean_mse += s.mse;
  }
  const double n = static_cast<double>(r.images.size());
  r.mean_psnr /= n;
  r.mean_ssim /= n;
  r.mean_mse /= n;
  return r;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["count"] = images.size();
  j["mean"] = {{"psnr", mean_psnr}, {"ssim", mean_ssim}, {"mse", mean_mse}};
  j["images"] = nlohmann::json::array();
  for (const ImageScore& s : images) {
    j["images"].push_back({{"name", s.name}, {"psnr", s.psnr}, {"ssim", s.ssim}, {"mse", s.mse}});
  }
  return j.dump(2);
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "name,psnr,ssim,mse\n";
  for (const ImageScore& s : images) out << s.name << ',' << s.psnr << ',' << s.ssim << ',' << s.mse << '\n';
  out << "mean," << mean_psnr << ',' << mean_ssim << ',' << mean_mse << '\n';
  return out.str();
}

EvalReport evaluate_dirs(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                         int threads) {
  const std::set<std::string> pred = image_names(pred_dir), gt = image_names(gt_dir);
  std::vector<std::string> unmatched;
  std::set_symmetric_difference(pred.begin(), pred.end(), gt.begin(), gt.end(), std::back_inserter(unmatched));
  if (!unmatched.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "unmatched file: " + unmatched.front() + " (" +
                                                 std::to_string(unmatched.size()) + " total)");
  }
  const std::vector<std::string> names(pred.begin(), pred.end());
  std::vector<ImageScore> scores(names.size());
  const int workers = std::max(1, std::min<int>(threads > 0 ? threads : std::thread::hardware_concurrency(),
                                                static_cast<int>(names.size())));
  std::vector<std::future<void>> jobs;
  for (int t = 0; t < workers; ++t) {
    jobs.push_back(std::async(std::launch::async, [&, t] {
      for (std::size_t i = t; i < names.size(); i += workers) {
        scores[i] = score_pair(names[i], load_image(pred_dir / names[i]), load_image(gt_dir / names[i]));
      }
    }));
  }
  for (auto& j : jobs) j.get();
  return summarize(std::move(scores));
}

}  // namespace ste
