#include "ste/imagecore.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace ste {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kFileNotFound: return "FileNotFound";
    case ErrorKind::kUnsupportedFormat: return "UnsupportedFormat";
    case ErrorKind::kCorruptImage: return "CorruptImage";
    case ErrorKind::kIoError: return "IoError";
    case ErrorKind::kInvalidQuality: return "InvalidQuality";
    case ErrorKind::kInvalidArgument: return "InvalidArgument";
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kFontLoadError: return "FontLoadError";
    case ErrorKind::kEmptyText: return "EmptyText";
    case ErrorKind::kRegionOutOfBounds: return "RegionOutOfBounds";
    case ErrorKind::kSolverNotConverged: return "SolverNotConverged";
    case ErrorKind::kNoFonts: return "NoFonts";
    case ErrorKind::kNoBackgrounds: return "NoBackgrounds";
    case ErrorKind::kDegenerateRegion: return "DegenerateRegion";
    case ErrorKind::kDegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorKind::kSingularSystem: return "SingularSystem";
    case ErrorKind::kNonFiniteInput: return "NonFiniteInput";
    case ErrorKind::kNoBnLayers: return "NoBnLayers";
    case ErrorKind::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::kImageTooSmall: return "ImageTooSmall";
    case ErrorKind::kParseError: return "ParseError";
  }
  return "Unknown";
}

namespace {

void check_dims(int height, int width) {
  if (height < 1 || width < 1) {
    throw Error(ErrorKind::kShapeMismatch,
                "image dimensions must be >= 1, got " + std::to_string(height) + "x" +
                    std::to_string(width));
  }
}

void check_unit_range(std::span<const float> values) {
  for (float v : values) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw Error(ErrorKind::kInvalidArgument, "value outside [0,1]: " + std::to_string(v));
    }
  }
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

enum class Sniffed { kPng, kJpeg, kOther };

Sniffed sniff(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIoError, "cannot open " + path.string());
  std::array<unsigned char, 8> head{};
  in.read(reinterpret_cast<char*>(head.data()), head.size());
  const auto n = in.gcount();
  static constexpr std::array<unsigned char, 8> kPngSig = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (n == 8 && head == kPngSig) return Sniffed::kPng;
  if (n >= 3 && head[0] == 0xFF && head[1] == 0xD8 && head[2] == 0xFF) return Sniffed::kJpeg;
  return Sniffed::kOther;
}

cv::Mat read_checked(const std::filesystem::path& path, int flags) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorKind::kFileNotFound, path.string());
  }
  if (sniff(path) == Sniffed::kOther) {
    throw Error(ErrorKind::kUnsupportedFormat, path.string() + " is not PNG or JPEG");
  }
  cv::Mat mat;
  try {
    mat = cv::imread(path.string(), flags);
  } catch (const cv::Exception& e) {
    throw Error(ErrorKind::kCorruptImage, path.string() + ": " + e.what());
  }
  if (mat.empty()) throw Error(ErrorKind::kCorruptImage, path.string());
  if (mat.depth() != CV_8U) {
    throw Error(ErrorKind::kUnsupportedFormat, path.string() + " is not 8-bit");
  }
  return mat;
}

ImageBuffer from_bgr(const cv::Mat& bgr) {
  ImageBuffer img(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = row[x][2 - c] / 255.0f;
    }
  }
  return img;
}

cv::Mat to_bgr(const ImageBuffer& img) {
  cv::Mat bgr(img.height(), img.width(), CV_8UC3);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) row[x][2 - c] = to_byte(img.at(y, x, c));
    }
  }
  return bgr;
}

void check_quality(int quality) {
  if (quality < 1 || quality > 100) {
    throw Error(ErrorKind::kInvalidQuality, "JPEG quality must be in [1,100], got " +
                                                std::to_string(quality));
  }
}

void write_checked(const std::filesystem::path& path, const cv::Mat& mat,
                   const std::vector<int>& params) {
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), mat, params);
  } catch (const cv::Exception& e) {
    throw Error(ErrorKind::kIoError, path.string() + ": " + e.what());
  }
  if (!ok) throw Error(ErrorKind::kIoError, "failed to write " + path.string());
}

}  // namespace

ImageBuffer::ImageBuffer(int height, int width, float fill)
    : height_(height), width_(width) {
  check_dims(height, width);
  if (!(fill >= 0.0f && fill <= 1.0f)) {
    throw Error(ErrorKind::kInvalidArgument, "fill outside [0,1]");
  }
  data_.assign(static_cast<std::size_t>(height) * width * kChannels, fill);
}

ImageBuffer ImageBuffer::from_values(int height, int width, std::vector<float> values) {
  check_dims(height, width);
  if (values.size() != static_cast<std::size_t>(height) * width * kChannels) {
    throw Error(ErrorKind::kShapeMismatch, "value count does not match HxWx3");
  }
  check_unit_range(values);
  ImageBuffer img;
  img.height_ = height;
  img.width_ = width;
  img.data_ = std::move(values);
  return img;
}

ImageBuffer ImageBuffer::crop(int x, int y, int w, int h) const {
  if (x < 0 || y < 0 || w < 1 || h < 1 || x + w > width_ || y + h > height_) {
    throw Error(ErrorKind::kShapeMismatch, "crop window outside image");
  }
  ImageBuffer out(h, w);
  for (int r = 0; r < h; ++r) {
    const auto* src = &data_[index(y + r, x, 0)];
    std::copy(src, src + static_cast<std::size_t>(w) * kChannels, &out.data_[out.index(r, 0, 0)]);
  }
  return out;
}

StrokeMask::StrokeMask(int height, int width, float fill) : height_(height), width_(width) {
  check_dims(height, width);
  if (!(fill >= 0.0f && fill <= 1.0f)) {
    throw Error(ErrorKind::kInvalidArgument, "fill outside [0,1]");
  }
  data_.assign(static_cast<std::size_t>(height) * width, fill);
}

StrokeMask StrokeMask::from_values(int height, int width, std::vector<float> values) {
  check_dims(height, width);
  if (values.size() != static_cast<std::size_t>(height) * width) {
    throw Error(ErrorKind::kShapeMismatch, "value count does not match HxW");
  }
  check_unit_range(values);
  StrokeMask m;
  m.height_ = height;
  m.width_ = width;
  m.data_ = std::move(values);
  return m;
}

StrokeMask StrokeMask::crop(int x, int y, int w, int h) const {
  if (x < 0 || y < 0 || w < 1 || h < 1 || x + w > width_ || y + h > height_) {
    throw Error(ErrorKind::kShapeMismatch, "crop window outside mask");
  }
  StrokeMask out(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) out.at(r, c) = at(y + r, x + c);
  }
  return out;
}

ImageBuffer quantize(const ImageBuffer& img) {
  ImageBuffer out = img;
  for (float& v : out.values()) v = to_byte(v) / 255.0f;
  return out;
}

ImageBuffer load_image(const std::filesystem::path& path) {
  return from_bgr(read_checked(path, cv::IMREAD_COLOR));
}

void save_image(const ImageBuffer& img, const std::filesystem::path& path, ImageFormat format,
                int quality) {
  if (img.empty()) throw Error(ErrorKind::kShapeMismatch, "cannot save an empty image");
  std::vector<int> params;
  if (format == ImageFormat::kJpeg) {
    check_quality(quality);
    params = {cv::IMWRITE_JPEG_QUALITY, quality};
  }
  write_checked(path, to_bgr(img), params);
}

ImageBuffer jpeg_round_trip(const ImageBuffer& img, int quality) {
  check_quality(quality);
  std::vector<std::uint8_t> bytes;
  if (!cv::imencode(".jpg", to_bgr(img), bytes, {cv::IMWRITE_JPEG_QUALITY, quality})) {
    throw Error(ErrorKind::kIoError, "JPEG encode failed");
  }
  cv::Mat decoded = cv::imdecode(bytes, cv::IMREAD_COLOR);
  if (decoded.empty()) throw Error(ErrorKind::kCorruptImage, "JPEG decode failed");
  return from_bgr(decoded);
}

StrokeMask load_mask(const std::filesystem::path& path) {
  cv::Mat gray = read_checked(path, cv::IMREAD_GRAYSCALE);
  StrokeMask mask(gray.rows, gray.cols);
  for (int y = 0; y < gray.rows; ++y) {
    const auto* row = gray.ptr<std::uint8_t>(y);
    for (int x = 0; x < gray.cols; ++x) mask.at(y, x) = 1.0f - row[x] / 255.0f;
  }
  return mask;
}

void save_mask(const StrokeMask& mask, const std::filesystem::path& path) {
  if (mask.empty()) throw Error(ErrorKind::kShapeMismatch, "cannot save an empty mask");
  cv::Mat gray(mask.height(), mask.width(), CV_8UC1);
  for (int y = 0; y < mask.height(); ++y) {
    auto* row = gray.ptr<std::uint8_t>(y);
    for (int x = 0; x < mask.width(); ++x) row[x] = to_byte(1.0f - mask.at(y, x));
  }
  write_checked(path, gray, {});
}

StrokeMask binarize(const StrokeMask& mask, float threshold) {
  if (!(threshold > 0.0f && threshold < 1.0f)) {
    throw Error(ErrorKind::kInvalidArgument, "threshold must be in (0,1)");
  }
  StrokeMask out = mask;
  for (float& v : out.values()) v = v >= threshold ? 1.0f : 0.0f;
  return out;
}

StrokeMask invert(const StrokeMask& mask) {
  StrokeMask out = mask;
  for (float& v : out.values()) v = 1.0f - v;
  return out;
}

}  // namespace ste
