#include "ste/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCore>
#include <opencv2/freetype.hpp>
#include <opencv2/imgproc.hpp>

#include "ste/geom.hpp"

namespace ste {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng) * (hi > lo) + lo * !(hi > lo);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

bool chance(std::mt19937_64& rng, double p) { return std::uniform_real_distribution<double>(0, 1)(rng) < p; }

cv::Mat to_mat(const AlphaMap& a) {
  return cv::Mat(a.height, a.width, CV_32F, const_cast<float*>(a.values.data())).clone();
}

AlphaMap from_mat(const cv::Mat& m) {
  AlphaMap a(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) a.at(y, x) = m.at<float>(y, x);
  return a;
}

int blur_radius(double sigma) { return sigma > 0 ? static_cast<int>(std::ceil(3 * sigma)) : 0; }

AlphaMap gaussian(const AlphaMap& a, double sigma) {
  if (!(sigma > 0)) return a;
  cv::Mat out;
  const int k = 2 * blur_radius(sigma) + 1;
  cv::GaussianBlur(to_mat(a), out, cv::Size(k, k), sigma, sigma, cv::BORDER_CONSTANT);
  return from_mat(out);
}

AlphaMap shifted(const AlphaMap& a, int dx, int dy) {
  AlphaMap out(a.height, a.width);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      const int sy = y - dy, sx = x - dx;
      if (sy >= 0 && sy < a.height && sx >= 0 && sx < a.width) out.at(y, x) = a.at(sy, sx);
    }
  return out;
}

std::vector<fs::path> expand_paths(const std::vector<fs::path>& entries, const std::vector<std::string>& exts) {
  std::vector<fs::path> out;
  auto wanted = [&](const fs::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
    return std::find(exts.begin(), exts.end(), e) != exts.end();
  };
  for (const fs::path& p : entries) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && wanted(e.path())) found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(p)) {
      out.push_back(p);
    }
  }
  return out;
}

double luma(const std::array<float, 3>& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

// Harmonic part (boundary values only) and guided part (Laplacian of fg only)
// of the Poisson solution, each N x 3 in region scan order.
struct PoissonParts {
  std::vector<std::pair<int, int>> pixels;
  Eigen::MatrixXd harmonic;
  Eigen::MatrixXd guided;
};

PoissonParts solve_poisson(const ImageBuffer& bg, const ImageBuffer& fg, const AlphaMap& region, double tol,
                           int max_iterations) {
  const int h = bg.height(), w = bg.width();
  if (fg.height() != h || fg.width() != w || region.height != h || region.width != w) {
    throw Error(ErrorKind::kShapeMismatch, "poisson_blend inputs differ in size");
  }
  PoissonParts parts;
  std::vector<int> index(static_cast<std::size_t>(h) * w, -1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (region.at(y, x) == 0.0f) continue;
      if (y == 0 || x == 0 || y == h - 1 || x == w - 1) {
        throw Error(ErrorKind::kRegionOutOfBounds, "blend region touches the image border");
      }
      index[static_cast<std::size_t>(y) * w + x] = static_cast<int>(parts.pixels.size());
      parts.pixels.emplace_back(y, x);
    }
  const int n = static_cast<int>(parts.pixels.size());
  parts.harmonic = Eigen::MatrixXd::Zero(n, 3);
  parts.guided = Eigen::MatrixXd::Zero(n, 3);
  if (n == 0) return parts;

  std::vector<Eigen::Triplet<double>> trips;
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, 6);
  constexpr int kDy[4] = {-1, 1, 0, 0}, kDx[4] = {0, 0, -1, 1};
  for (int i = 0; i < n; ++i) {
    const auto [y, x] = parts.pixels[i];
    trips.emplace_back(i, i, 4.0);
    for (int c = 0; c < 3; ++c) rhs(i, 3 + c) = 4.0 * fg.at(y, x, c);
    for (int k = 0; k < 4; ++k) {
      const int ny = y + kDy[k], nx = x + kDx[k];
      const int j = index[static_cast<std::size_t>(ny) * w + nx];
      if (j >= 0) {
        trips.emplace_back(i, j, -1.0);
      } else {
        for (int c = 0; c < 3; ++c) rhs(i, c) += bg.at(ny, nx, c);
      }
      for (int c = 0; c < 3; ++c) rhs(i, 3 + c) -= fg.at(ny, nx, c);
    }
  }
  Eigen::SparseMatrix<double> a(n, n);
  a.setFromTriplets(trips.begin(), trips.end());
  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper,
                           Eigen::IncompleteCholesky<double>>
      cg;
  cg.setTolerance(tol);
  cg.setMaxIterations(max_iterations);
  cg.compute(a);
  Eigen::MatrixXd sol(n, 6);
  for (int col = 0; col < 6; ++col) {
    if (rhs.col(col).squaredNorm() == 0.0) {
      sol.col(col).setZero();
      continue;
    }
    sol.col(col) = cg.solve(rhs.col(col));
    if (cg.info() != Eigen::Success) {
      throw Error(ErrorKind::kSolverNotConverged,
                  "CG stopped after " + std::to_string(cg.iterations()) + " iterations, relative residual " +
                      std::to_string(cg.error()));
    }
  }
  parts.harmonic = sol.leftCols(3);
  parts.guided = sol.rightCols(3);
  return parts;
}

std::string random_words(std::mt19937_64& rng) {
  static constexpr char kChars[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
  const int words = uniform_int(rng, 1, 2);
  std::string out;
  for (int wd = 0; wd < words; ++wd) {
    if (wd) out += ' ';
    const int len = uniform_int(rng, 1, 12);
    for (int i = 0; i < len; ++i) out += kChars[uniform_int(rng, 0, static_cast<int>(sizeof(kChars)) - 2)];
  }
  return out;
}

template <typename A>
void check_range(const A& r, double lo, double hi, const char* name) {
  if (!(r[0] >= lo && r[1] <= hi && r[0] <= r[1])) {
    throw Error(ErrorKind::kInvalidArgument, std::string(name) + " must be an ordered range within [" +
                                                 std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
}

}  // namespace

void SynthConfig::validate() const {
  if (height < 16 || width < 16) throw Error(ErrorKind::kInvalidArgument, "output size must be at least 16x16");
  check_range(text_height_range, 0.05, 1.0, "text_height_range");
  for (double p : {direct_compose_probability, blur_probability, shadow_probability, border3d_probability}) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::kInvalidArgument, "probabilities must lie in [0, 1]");
  }
  check_range(fg_opacity_range, 0, 1, "fg_opacity_range");
  check_range(blur_sigma_range, 0, 10, "blur_sigma_range");
  check_range(shadow_opacity_range, 0, 1, "shadow_opacity_range");
  check_range(shadow_blur_range, 0, 10, "shadow_blur_range");
  check_range(border3d_depth_range, 1, 16, "border3d_depth_range");
  check_range(jpeg_quality_range, 1, 100, "jpeg_quality_range");
  if (mask_dilation_radius < 0) throw Error(ErrorKind::kInvalidArgument, "mask_dilation_radius must be >= 0");
  if (shadow_max_offset < 0 || shift_range < 0) throw Error(ErrorKind::kInvalidArgument, "offsets must be >= 0");
  if (!(poisson_tolerance > 0) || poisson_max_iterations < 1) {
    throw Error(ErrorKind::kInvalidArgument, "invalid Poisson solver settings");
  }
}

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig c;
  try {
    for (const auto& f : j.value("fonts", std::vector<std::string>{})) c.fonts.emplace_back(f);
    for (const auto& b : j.value("backgrounds", std::vector<std::string>{})) c.backgrounds.emplace_back(b);
    c.corpus = j.value("corpus", std::string());
#define STE_FIELD(name) c.name = j.value(#name, c.name)
    STE_FIELD(height);
    STE_FIELD(width);
    STE_FIELD(text_height_range);
    STE_FIELD(direct_compose_probability);
    STE_FIELD(fg_opacity_range);
    STE_FIELD(blur_probability);
    STE_FIELD(blur_sigma_range);
    STE_FIELD(shadow_enabled);
    STE_FIELD(shadow_probability);
    STE_FIELD(shadow_max_offset);
    STE_FIELD(shadow_opacity_range);
    STE_FIELD(shadow_blur_range);
    STE_FIELD(border3d_enabled);
    STE_FIELD(border3d_probability);
    STE_FIELD(border3d_depth_range);
    STE_FIELD(shift_range);
    STE_FIELD(jpeg_enabled);
    STE_FIELD(jpeg_quality_range);
    STE_FIELD(mask_dilation_radius);
    STE_FIELD(poisson_tolerance);
    STE_FIELD(poisson_max_iterations);
    STE_FIELD(seed);
#undef STE_FIELD
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParseError, std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

SynthConfig SynthConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kFileNotFound, path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParseError, path.string() + ": " + e.what());
  }
  SynthConfig c = from_json(j);
  const fs::path base = path.parent_path();
  auto resolve = [&](fs::path& p) {
    if (!p.empty() && p.is_relative()) p = base / p;
  };
  for (auto& f : c.fonts) resolve(f);
  for (auto& b : c.backgrounds) resolve(b);
  resolve(c.corpus);
  return c;
}

TextLayer render_text_layer(const std::string& text, const fs::path& font, int height, const TextStyle& style) {
  if (std::all_of(text.begin(), text.end(), [](unsigned char ch) { return std::isspace(ch); })) {
    throw Error(ErrorKind::kEmptyText, "nothing to render");
  }
  if (height < 2) throw Error(ErrorKind::kInvalidArgument, "text height must be >= 2");
  if (!fs::is_regular_file(font)) throw Error(ErrorKind::kFontLoadError, font.string());
  cv::Ptr<cv::freetype::FreeType2> ft = cv::freetype::createFreeType2();
  int baseline = 0;
  cv::Size size;
  try {
    ft->loadFontData(font.string(), 0);
    size = ft->getTextSize(text, height, -1, &baseline);
  } catch (const cv::Exception& e) {
    throw Error(ErrorKind::kFontLoadError, font.string() + ": " + e.what());
  }
  const int pad = height + style.bold + 2;
  cv::Mat rgb = cv::Mat::zeros(size.height + baseline + 2 * pad, size.width + 2 * pad, CV_8UC3);
  ft->putText(rgb, text, cv::Point(pad, pad + size.height), height, cv::Scalar(255, 255, 255), -1, cv::LINE_AA, true);
  cv::Mat canvas;
  cv::extractChannel(rgb, canvas, 0);
  if (style.bold > 0) {
    cv::dilate(canvas, canvas,
               cv::getStructuringElement(cv::MORPH_ELLIPSE, cv::Size(2 * style.bold + 1, 2 * style.bold + 1)));
  }
  std::vector<cv::Point> nz;
  cv::findNonZero(canvas, nz);
  if (nz.empty()) throw Error(ErrorKind::kEmptyText, "\"" + text + "\" renders no pixels");
  const cv::Rect r = cv::boundingRect(nz);
  TextLayer layer;
  layer.alpha = AlphaMap(r.height, r.width);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) layer.alpha.at(y, x) = canvas.at<std::uint8_t>(r.y + y, r.x + x) / 255.0f;
  layer.tight_bbox = TextRegion::axis_aligned(0, 0, r.width, r.height);
  return layer;
}

json EffectParams::to_json() const {
  json j = {{"blur_sigma", blur_sigma}, {"shadow", nullptr}, {"border3d", nullptr}};
  if (shadow) {
    j["shadow"] = {{"dx", shadow->dx}, {"dy", shadow->dy}, {"opacity", shadow->opacity},
                   {"blur_sigma", shadow->blur_sigma}, {"color", shadow->color}};
  }
  if (border3d) {
    j["border3d"] = {{"depth", border3d->depth}, {"dx", border3d->dx}, {"dy", border3d->dy},
                     {"color", border3d->color}};
  }
  return j;
}

EffectParams sample_effects(const SynthConfig& cfg, const std::array<float, 3>& text_color, std::mt19937_64& rng) {
  EffectParams p;
  if (chance(rng, cfg.blur_probability)) p.blur_sigma = uniform(rng, cfg.blur_sigma_range[0], cfg.blur_sigma_range[1]);
  if (cfg.shadow_enabled && chance(rng, cfg.shadow_probability)) {
    ShadowParams s;
    do {
      s.dx = uniform_int(rng, -cfg.shadow_max_offset, cfg.shadow_max_offset);
      s.dy = uniform_int(rng, -cfg.shadow_max_offset, cfg.shadow_max_offset);
    } while (cfg.shadow_max_offset > 0 && s.dx == 0 && s.dy == 0);
    s.opacity = uniform(rng, cfg.shadow_opacity_range[0], cfg.shadow_opacity_range[1]);
    s.blur_sigma = uniform(rng, cfg.shadow_blur_range[0], cfg.shadow_blur_range[1]);
    const float g = static_cast<float>(uniform(rng, 0.0, 0.15));
    s.color = {g, g, g};
    p.shadow = s;
  }
  if (cfg.border3d_enabled && chance(rng, cfg.border3d_probability)) {
    static constexpr int kDirs[8][2] = {{1, 1}, {1, 0}, {0, 1}, {-1, 1}, {1, -1}, {-1, 0}, {0, -1}, {-1, -1}};
    Border3dParams b;
    b.depth = uniform_int(rng, cfg.border3d_depth_range[0], cfg.border3d_depth_range[1]);
    const int d = uniform_int(rng, 0, 7);
    b.dx = kDirs[d][0];
    b.dy = kDirs[d][1];
    for (int c = 0; c < 3; ++c) b.color[c] = text_color[c] * 0.45f;
    p.border3d = b;
  }
  return p;
}

EffectLayer apply_effects(const AlphaMap& glyph, const std::array<float, 3>& text_color, const EffectParams& p) {
  const int h = glyph.height, w = glyph.width;
  const AlphaMap text = gaussian(glyph, p.blur_sigma);
  std::vector<float> prem(static_cast<std::size_t>(h) * w * 3, 0.0f);
  AlphaMap total(h, w);
  auto over = [&](const AlphaMap& a, const std::array<float, 3>& col) {
    for (std::size_t i = 0; i < a.values.size(); ++i) {
      const float ai = a.values[i];
      if (ai == 0.0f) continue;
      for (int c = 0; c < 3; ++c) prem[i * 3 + c] = ai * col[c] + (1 - ai) * prem[i * 3 + c];
      total.values[i] = ai + (1 - ai) * total.values[i];
    }
  };
  if (p.shadow) {
    AlphaMap s = gaussian(shifted(text, p.shadow->dx, p.shadow->dy), p.shadow->blur_sigma);
    for (float& v : s.values) v *= static_cast<float>(p.shadow->opacity);
    over(s, p.shadow->color);
  }
  if (p.border3d) {
    AlphaMap b(h, w);
    for (int k = 1; k <= p.border3d->depth; ++k) {
      const AlphaMap s = shifted(text, k * p.border3d->dx, k * p.border3d->dy);
      for (std::size_t i = 0; i < b.values.size(); ++i) b.values[i] = std::max(b.values[i], s.values[i]);
    }
    over(b, p.border3d->color);
  }
  over(text, text_color);
  EffectLayer out{ImageBuffer(h, w), total};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const float a = total.values[i];
      for (int c = 0; c < 3; ++c) {
        out.color.at(y, x, c) = a > 0 ? std::clamp(prem[i * 3 + c] / a, 0.0f, 1.0f) : text_color[c];
      }
    }
  return out;
}

ImageBuffer direct_compose(const ImageBuffer& bg, const ImageBuffer& fg, const AlphaMap& alpha) {
  if (fg.height() != bg.height() || fg.width() != bg.width() || alpha.height != bg.height() ||
      alpha.width != bg.width()) {
    throw Error(ErrorKind::kShapeMismatch, "direct_compose inputs differ in size");
  }
  ImageBuffer out = bg;
  for (int y = 0; y < bg.height(); ++y)
    for (int x = 0; x < bg.width(); ++x) {
      const float a = alpha.at(y, x);
      if (a == 0.0f) continue;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = a * fg.at(y, x, c) + (1 - a) * bg.at(y, x, c);
    }
  return out;
}

ImageBuffer poisson_blend(const ImageBuffer& bg, const ImageBuffer& fg, const AlphaMap& region, double tol,
                          int max_iterations) {
  const PoissonParts parts = solve_poisson(bg, fg, region, tol, max_iterations);
  ImageBuffer out = bg;
  for (std::size_t i = 0; i < parts.pixels.size(); ++i) {
    const auto [y, x] = parts.pixels[i];
    for (int c = 0; c < 3; ++c) out.at(y, x, c) = static_cast<float>(parts.harmonic(i, c) + parts.guided(i, c));
  }
  return out;
}

double poisson_residual(const ImageBuffer& result, const ImageBuffer& fg, const AlphaMap& region) {
  double worst = 0.0;
  auto lap = [](const ImageBuffer& im, int y, int x, int c) {
    return static_cast<double>(im.at(y - 1, x, c)) + im.at(y + 1, x, c) + im.at(y, x - 1, c) + im.at(y, x + 1, c) -
           4.0 * im.at(y, x, c);
  };
  for (int y = 1; y + 1 < result.height(); ++y)
    for (int x = 1; x + 1 < result.width(); ++x) {
      if (region.at(y, x) == 0.0f) continue;
      for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(lap(result, y, x, c) - lap(fg, y, x, c)));
    }
  return worst;
}

AlphaMap dilate_support(const AlphaMap& alpha, int radius) {
  cv::Mat bin(alpha.height, alpha.width, CV_8UC1);
  for (int y = 0; y < alpha.height; ++y)
    for (int x = 0; x < alpha.width; ++x) bin.at<std::uint8_t>(y, x) = alpha.at(y, x) > 0.0f ? 1 : 0;
  if (radius > 0) {
    cv::Mat disk = cv::Mat::zeros(2 * radius + 1, 2 * radius + 1, CV_8UC1);
    for (int y = -radius; y <= radius; ++y)
      for (int x = -radius; x <= radius; ++x)
        if (x * x + y * y <= radius * radius) disk.at<std::uint8_t>(y + radius, x + radius) = 1;
    cv::dilate(bin, bin, disk, cv::Point(-1, -1), 1, cv::BORDER_CONSTANT, cv::Scalar(0));
  }
  AlphaMap out(alpha.height, alpha.width);
  for (int y = 0; y < alpha.height; ++y)
    for (int x = 0; x < alpha.width; ++x) out.at(y, x) = bin.at<std::uint8_t>(y, x);
  return out;
}

SynthEngine::SynthEngine(SynthConfig config) : config_(std::move(config)) {
  config_.validate();
  fonts_ = expand_paths(config_.fonts, {".ttf", ".otf", ".ttc"});
  backgrounds_ = expand_paths(config_.backgrounds, {".png", ".jpg", ".jpeg", ".bmp"});
  if (fonts_.empty()) throw Error(ErrorKind::kNoFonts, "no font files configured");
  if (backgrounds_.empty()) throw Error(ErrorKind::kNoBackgrounds, "no background images configured");
  if (!config_.corpus.empty()) {
    std::ifstream in(config_.corpus);
    if (!in) throw Error(ErrorKind::kFileNotFound, config_.corpus.string());
    for (std::string line; std::getline(in, line);) {
      const auto b = line.find_first_not_of(" \t\r"), e = line.find_last_not_of(" \t\r");
      if (b != std::string::npos) corpus_.push_back(line.substr(b, e - b + 1));
    }
  }
}

std::uint64_t SynthEngine::sample_seed(std::uint64_t index) const {
  return splitmix64(config_.seed ^ splitmix64(index));
}

SynthSample SynthEngine::generate(std::uint64_t index) const {
  const SynthConfig& cfg = config_;
  const int H = cfg.height, W = cfg.width;
  const std::uint64_t seed = sample_seed(index);
  std::mt19937_64 rng(seed);

  // Background crop.
  const fs::path& bg_path = backgrounds_[std::uniform_int_distribution<std::size_t>(0, backgrounds_.size() - 1)(rng)];
  ImageBuffer bg = load_image(bg_path);
  const double cover = std::max(static_cast<double>(H) / bg.height(), static_cast<double>(W) / bg.width());
  if (cover > 1.0) {
    bg = geom::resize_bilinear(bg, {static_cast<int>(std::ceil(bg.height() * cover)), static_cast<int>(std::ceil(bg.width() * cover))});
  }
  const int cx = uniform_int(rng, 0, bg.width() - W), cy = uniform_int(rng, 0, bg.height() - H);
  const ImageBuffer gt = bg.crop(cx, cy, W, H);

  // Text, font, color.
  std::string text = corpus_.empty()
                         ? random_words(rng)
                         : corpus_[std::uniform_int_distribution<std::size_t>(0, corpus_.size() - 1)(rng)];
  const fs::path& font = fonts_[std::uniform_int_distribution<std::size_t>(0, fonts_.size() - 1)(rng)];
  double mean = 0.0;
  for (float v : gt.values()) mean += v;
  mean /= static_cast<double>(gt.size());
  std::array<float, 3> color{};
  for (int attempt = 0;; ++attempt) {
    for (float& c : color) c = static_cast<float>(uniform(rng, 0.0, 1.0));
    if (std::abs(luma(color) - mean) >= 0.3) break;
    if (attempt == 16) {
      color.fill(mean > 0.5 ? 0.05f : 0.95f);
      break;
    }
  }
  const EffectParams effects = sample_effects(cfg, color, rng);
  const TextStyle style{uniform_int(rng, 0, 2) == 2 ? 1 : 0};

  // Keep every effect and the dilated hole strictly inside the canvas.
  int margin = cfg.mask_dilation_radius + blur_radius(effects.blur_sigma) + cfg.shift_range + 2;
  if (effects.shadow) {
    margin += std::max(std::abs(effects.shadow->dx), std::abs(effects.shadow->dy)) + blur_radius(effects.shadow->blur_sigma);
  }
  if (effects.border3d) margin += effects.border3d->depth;
  if (2 * margin + 4 > std::min(H, W)) throw Error(ErrorKind::kDegenerateConfiguration, "effects exceed the canvas");
  int text_h = std::max(4, static_cast<int>(std::lround(uniform(rng, cfg.text_height_range[0], cfg.text_height_range[1]) * H)));
  TextLayer layer;
  for (int attempt = 0;; ++attempt) {
    layer = render_text_layer(text, font, text_h, style);
    const double fit = std::min(static_cast<double>(W - 2 * margin) / layer.alpha.width,
                                static_cast<double>(H - 2 * margin) / layer.alpha.height);
    if (fit >= 1.0) break;
    if (attempt >= 8) throw Error(ErrorKind::kDegenerateConfiguration, "text does not fit the canvas");
    const int next = static_cast<int>(std::floor(text_h * fit * 0.95));
    if (next < 8 && text.size() > 1) {
      text = text.substr(0, (text.size() + 1) / 2);
    } else {
      text_h = std::max(4, next);
    }
  }
  const int lw = layer.alpha.width, lh = layer.alpha.height;
  int x0 = uniform_int(rng, margin, W - margin - lw), y0 = uniform_int(rng, margin, H - margin - lh);
  const int sx = uniform_int(rng, -cfg.shift_range, cfg.shift_range), sy = uniform_int(rng, -cfg.shift_range, cfg.shift_range);
  x0 = std::clamp(x0 + sx, margin - cfg.shift_range, W - margin + cfg.shift_range - lw);
  y0 = std::clamp(y0 + sy, margin - cfg.shift_range, H - margin + cfg.shift_range - lh);
  AlphaMap glyph(H, W);
  for (int y = 0; y < lh; ++y)
    for (int x = 0; x < lw; ++x) glyph.at(y0 + y, x0 + x) = layer.alpha.at(y, x);

  const EffectLayer eff = apply_effects(glyph, color, effects);
  const AlphaMap hole = dilate_support(eff.alpha, cfg.mask_dilation_radius);

  SynthSample s;
  s.ground_truth = gt;
  const bool direct = chance(rng, cfg.direct_compose_probability);
  json composition;
  if (direct) {
    const double opacity = uniform(rng, cfg.fg_opacity_range[0], cfg.fg_opacity_range[1]);
    AlphaMap a = eff.alpha;
    for (float& v : a.values) v *= static_cast<float>(opacity);
    s.input = direct_compose(gt, eff.color, a);
    composition = {{"opacity", opacity}};
  } else {
    // Guidance: the effect layer over a flat fill of the mean boundary color.
    std::array<double, 3> fill{0, 0, 0};
    int ring = 0;
    for (int y = 1; y + 1 < H; ++y)
      for (int x = 1; x + 1 < W; ++x) {
        if (hole.at(y, x) != 0.0f) continue;
        if (hole.at(y - 1, x) + hole.at(y + 1, x) + hole.at(y, x - 1) + hole.at(y, x + 1) == 0.0f) continue;
        for (int c = 0; c < 3; ++c) fill[c] += gt.at(y, x, c);
        ++ring;
      }
    for (double& f : fill) f /= std::max(ring, 1);
    ImageBuffer fg(H, W);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const float a = eff.alpha.at(y, x);
        for (int c = 0; c < 3; ++c) fg.at(y, x, c) = a * eff.color.at(y, x, c) + (1 - a) * static_cast<float>(fill[c]);
      }
    const PoissonParts parts = solve_poisson(gt, fg, hole, cfg.poisson_tolerance, cfg.poisson_max_iterations);
    // Largest contrast scale in [0, 1] that keeps the blend inside [0, 1].
    double scale = 1.0;
    for (Eigen::Index i = 0; i < parts.harmonic.rows(); ++i)
      for (int c = 0; c < 3; ++c) {
        const double u0 = parts.harmonic(i, c), u1 = parts.guided(i, c);
        if (u1 > 0) scale = std::min(scale, (1.0 - u0) / u1);
        if (u1 < 0) scale = std::min(scale, -u0 / u1);
      }
    scale = std::clamp(scale, 0.0, 1.0);
    s.input = gt;
    for (std::size_t i = 0; i < parts.pixels.size(); ++i) {
      const auto [y, x] = parts.pixels[i];
      for (int c = 0; c < 3; ++c) {
        s.input.at(y, x, c) =
            static_cast<float>(std::clamp(parts.harmonic(i, c) + scale * parts.guided(i, c), 0.0, 1.0));
      }
    }
    s.guidance = fg;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 3; ++c) {
          s.guidance.at(y, x, c) =
              static_cast<float>(fill[c] + scale * (fg.at(y, x, c) - fill[c]));
        }
    composition = {{"contrast_scale", scale}};
  }

  s.pre_jpeg_input = s.input;
  int quality = 0;
  if (cfg.jpeg_enabled) {
    quality = uniform_int(rng, cfg.jpeg_quality_range[0], cfg.jpeg_quality_range[1]);
    s.input = jpeg_round_trip(s.input, quality);
  }
  s.mask = StrokeMask(H, W, 1.0f);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (hole.at(y, x) != 0.0f) s.mask.at(y, x) = 0.0f;

  json fx = effects.to_json();
  fx["shift"] = {sx, sy};
  fx["bold"] = style.bold;
  fx["text_height"] = text_h;
  s.meta = {{"seed", seed},
            {"index", index},
            {"mode", direct ? "direct" : "poisson"},
            {"font", font.filename().string()},
            {"text", text},
            {"color", color},
            {"background", bg_path.filename().string()},
            {"crop", {cx, cy}},
            {"composition", composition},
            {"effects", fx},
            {"jpeg_quality", quality}};
  return s;
}

SynthSample generate_sample(const SynthConfig& config, std::uint64_t index) {
  return SynthEngine(config).generate(index);
}

fs::path write_dataset(const SynthConfig& config, std::uint64_t count, const fs::path& out_dir, int workers) {
  const SynthEngine engine(config);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::kIoError, "cannot create " + out_dir.string() + ": " + ec.message());
  const std::string input_name = config.jpeg_enabled ? "input.jpg" : "input.png";
  std::vector<json> entries(count);
  auto work = [&](std::uint64_t first, std::uint64_t stride) {
    for (std::uint64_t i = first; i < count; i += stride) {
      const SynthSample s = engine.generate(i);
      char name[32];
      std::snprintf(name, sizeof(name), "sample_%08llu", static_cast<unsigned long long>(i));
      const fs::path dir = out_dir / name;
      fs::create_directories(dir);
      if (config.jpeg_enabled) {
        save_image(s.pre_jpeg_input, dir / input_name, ImageFormat::kJpeg, s.meta["jpeg_quality"].get<int>());
      } else {
        save_image(s.input, dir / input_name);
      }
      save_image(s.ground_truth, dir / "gt.png");
      save_mask(s.mask, dir / "mask.png");
      std::ofstream(dir / "meta.json") << s.meta.dump(2) << '\n';
      entries[i] = {{"dir", name}, {"index", i}, {"seed", s.meta["seed"]}, {"mode", s.meta["mode"]}, {"input", input_name}};
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(std::max<std::uint64_t>(count, 1))));
  std::vector<std::future<void>> jobs;
  for (int t = 0; t < n; ++t) jobs.push_back(std::async(n > 1 ? std::launch::async : std::launch::deferred, work, t, n));
  for (auto& j : jobs) j.get();

  const json manifest = {{"count", count}, {"seed", config.seed}, {"samples", entries}};
  const fs::path path = out_dir / "manifest.json";
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIoError, "cannot write " + path.string());
  out << manifest.dump(2) << '\n';
  return path;
}

}  // namespace ste
