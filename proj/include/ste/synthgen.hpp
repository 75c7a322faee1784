#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ste/imagecore.hpp"
#include "ste/region.hpp"

namespace ste {

// Row-major H x W alpha in [0, 1].
struct AlphaMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  AlphaMap() = default;
  AlphaMap(int h, int w, float fill = 0.0f) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}
  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  float& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const AlphaMap&, const AlphaMap&) = default;
};

struct SynthConfig {
  std::vector<std::filesystem::path> fonts;        // files, or directories scanned for .ttf/.otf
  std::vector<std::filesystem::path> backgrounds;  // files, or directories scanned for images
  std::filesystem::path corpus;                    // one text per line; empty = random words
  int height = 128;
  int width = 640;
  std::array<double, 2> text_height_range{0.35, 0.7};  // fraction of `height`
  double direct_compose_probability = 0.5;
  std::array<double, 2> fg_opacity_range{0.75, 1.0};   // direct composition only
  double blur_probability = 0.5;
  std::array<double, 2> blur_sigma_range{0.0, 2.0};
  bool shadow_enabled = true;
  double shadow_probability = 0.3;
  int shadow_max_offset = 8;
  std::array<double, 2> shadow_opacity_range{0.3, 0.8};
  std::array<double, 2> shadow_blur_range{0.0, 2.0};
  bool border3d_enabled = true;
  double border3d_probability = 0.3;
  std::array<int, 2> border3d_depth_range{1, 4};
  int shift_range = 3;
  bool jpeg_enabled = true;
  std::array<int, 2> jpeg_quality_range{40, 95};
  int mask_dilation_radius = 2;
  double poisson_tolerance = 1e-6;
  int poisson_max_iterations = 10000;
  std::uint64_t seed = 0;

  void validate() const;
  static SynthConfig from_json(const nlohmann::json& j);
  static SynthConfig load(const std::filesystem::path& path);
};

struct TextStyle {
  int bold = 0;  // extra dilation of the glyph alpha, pixels
};

struct TextLayer {
  AlphaMap alpha;           // cropped to the tight bounds of alpha > 0
  TextRegion tight_bbox;    // in layer coordinates
};

// Throws kFontLoadError, kEmptyText.
TextLayer render_text_layer(const std::string& text, const std::filesystem::path& font, int height,
                            const TextStyle& style = {});

struct ShadowParams {
  int dx = 0, dy = 0;
  double opacity = 0.5;
  double blur_sigma = 0.0;
  std::array<float, 3> color{0.0f, 0.0f, 0.0f};
};

struct Border3dParams {
  int depth = 1;
  int dx = 1, dy = 1;
  std::array<float, 3> color{0.0f, 0.0f, 0.0f};
};

struct EffectParams {
  double blur_sigma = 0.0;
  std::optional<ShadowParams> shadow;
  std::optional<Border3dParams> border3d;

  nlohmann::json to_json() const;
};

// RGB + alpha foreground on the output canvas.
struct EffectLayer {
  ImageBuffer color;
  AlphaMap alpha;  // union of text, shadow and border coverage
};

EffectParams sample_effects(const SynthConfig& config, const std::array<float, 3>& text_color,
                            std::mt19937_64& rng);

// Layers shadow, extruded border and (optionally blurred) text, bottom to top.
EffectLayer apply_effects(const AlphaMap& glyph, const std::array<float, 3>& text_color,
                          const EffectParams& params);

// alpha * fg + (1 - alpha) * background.
ImageBuffer direct_compose(const ImageBuffer& background, const ImageBuffer& fg, const AlphaMap& alpha);

// Solves the 5-point Poisson equation on `region` (nonzero = inside) so that
// the result's Laplacian equals fg's there, with Dirichlet values from
// `background`; outside the region the result is `background`. Values are not
// clamped. Throws kRegionOutOfBounds when the region touches the image border,
// kSolverNotConverged when CG stalls.
ImageBuffer poisson_blend(const ImageBuffer& background, const ImageBuffer& fg, const AlphaMap& region,
                          double tolerance = 1e-6, int max_iterations = 10000);

// Max |lap(result) - lap(fg)| over region pixels (5-point stencil).
double poisson_residual(const ImageBuffer& result, const ImageBuffer& fg, const AlphaMap& region);

// Binary support (alpha > 0) dilated by the Euclidean disk x^2 + y^2 <= radius^2.
AlphaMap dilate_support(const AlphaMap& alpha, int radius);

struct SynthSample {
  ImageBuffer input;
  ImageBuffer ground_truth;
  StrokeMask mask;      // 1 = background, 0 = text hole
  nlohmann::json meta;
  // Poisson mode only: the guidance image whose Laplacian the input matches
  // inside `mask`'s hole, before JPEG.
  ImageBuffer guidance;
  ImageBuffer pre_jpeg_input;
};

class SynthEngine {
 public:
  // Expands font/background directories and loads the corpus. Throws kNoFonts,
  // kNoBackgrounds.
  explicit SynthEngine(SynthConfig config);

  // Pure function of (config, index).
  SynthSample generate(std::uint64_t index) const;

  const SynthConfig& config() const { return config_; }
  std::uint64_t sample_seed(std::uint64_t index) const;

 private:
  SynthConfig config_;
  std::vector<std::filesystem::path> fonts_;
  std::vector<std::filesystem::path> backgrounds_;
  std::vector<std::string> corpus_;
};

SynthSample generate_sample(const SynthConfig& config, std::uint64_t index);

// Writes sample_%08d/{input.jpg|input.png, gt.png, mask.png, meta.json} and
// manifest.json; returns the manifest path.
std::filesystem::path write_dataset(const SynthConfig& config, std::uint64_t count,
                                    const std::filesystem::path& out_dir, int workers = 1);

}  // namespace ste
