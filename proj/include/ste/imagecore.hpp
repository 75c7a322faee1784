#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "ste/error.hpp"

namespace ste {

// H x W x 3 RGB image with float channels in [0, 1], stored row-major with
// interleaved channels.
class ImageBuffer {
 public:
  static constexpr int kChannels = 3;

  ImageBuffer() = default;
  ImageBuffer(int height, int width, float fill = 0.0f);

  // Validates dimensions and the [0, 1] range.
  static ImageBuffer from_values(int height, int width, std::vector<float> values);

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }

  float at(int y, int x, int c) const { return data_[index(y, x, c)]; }
  float& at(int y, int x, int c) { return data_[index(y, x, c)]; }

  std::span<const float> values() const { return data_; }
  std::span<float> values() { return data_; }

  // Sub-image [x, x + w) x [y, y + h); throws kShapeMismatch when out of range.
  ImageBuffer crop(int x, int y, int w, int h) const;

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

// H x W scalar map in [0, 1]. Polarity: 1 = valid background, 0 = text-stroke
// hole.
class StrokeMask {
 public:
  StrokeMask() = default;
  StrokeMask(int height, int width, float fill = 1.0f);

  static StrokeMask from_values(int height, int width, std::vector<float> values);

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }

  float at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  float& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<const float> values() const { return data_; }
  std::span<float> values() { return data_; }

  StrokeMask crop(int x, int y, int w, int h) const;

  friend bool operator==(const StrokeMask&, const StrokeMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

enum class ImageFormat { kPng, kJpeg };

// round(v * 255) / 255 per channel: the exact result of a PNG round trip.
ImageBuffer quantize(const ImageBuffer& img);

ImageBuffer load_image(const std::filesystem::path& path);
// quality is only used for JPEG and must be in [1, 100].
void save_image(const ImageBuffer& img, const std::filesystem::path& path,
                ImageFormat format = ImageFormat::kPng, int quality = 95);

// JPEG encode/decode in memory; used by the synthesis engine.
ImageBuffer jpeg_round_trip(const ImageBuffer& img, int quality);

// Mask files are single-channel 8-bit PNG with text stroke = 255. Loading
// converts to the internal polarity (1 = valid).
StrokeMask load_mask(const std::filesystem::path& path);
void save_mask(const StrokeMask& mask, const std::filesystem::path& path);

// output = 1 where mask >= threshold, else 0.
StrokeMask binarize(const StrokeMask& mask, float threshold = 0.5f);

// Flips polarity (1 - v): converts between the hole convention and the
// text-stroke = 1 representation.
StrokeMask invert(const StrokeMask& mask);

}  // namespace ste
