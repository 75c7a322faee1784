#include <doctest.h>

#include <cmath>
#include <fstream>

#include "ste/imagecore.hpp"
#include "test_helpers.hpp"

using namespace ste;
using ste::testing::TempDir;
using ste::testing::random_image;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected ste::Error");
  return ErrorKind::kParseError;
}

}  // namespace

TEST_CASE("ImageBuffer construction validates shape and range") {
  ImageBuffer img(2, 3, 0.25f);
  CHECK(img.size() == 18);
  CHECK(img.at(1, 2, 2) == 0.25f);
  CHECK(kind_of([] { ImageBuffer::from_values(2, 2, std::vector<float>(11, 0.f)); }) ==
        ErrorKind::kShapeMismatch);
  CHECK(kind_of([] { ImageBuffer::from_values(1, 1, {0.f, 1.5f, 0.f}); }) ==
        ErrorKind::kInvalidArgument);
  CHECK(kind_of([] { ImageBuffer::from_values(1, 1, {0.f, NAN, 0.f}); }) ==
        ErrorKind::kInvalidArgument);
}

TEST_CASE("crop copies the requested window") {
  const ImageBuffer img = random_image(6, 7, 3);
  const ImageBuffer c = img.crop(2, 1, 3, 4);
  REQUIRE(c.height() == 4);
  REQUIRE(c.width() == 3);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 3; ++x)
      for (int ch = 0; ch < 3; ++ch) CHECK(c.at(y, x, ch) == img.at(y + 1, x + 2, ch));
  CHECK(kind_of([&] { img.crop(5, 0, 3, 1); }) == ErrorKind::kShapeMismatch);
}

TEST_CASE("PNG round trip equals quantize") {
  TempDir dir("imagecore");
  const ImageBuffer img = random_image(9, 13, 7);
  save_image(img, dir / "a.png");
  const ImageBuffer back = load_image(dir / "a.png");
  CHECK(back == quantize(img));
  CHECK(quantize(back) == back);
}

TEST_CASE("channel order survives the codec") {
  TempDir dir("imagecore");
  ImageBuffer img(1, 1);
  img.at(0, 0, 0) = 1.0f;  // pure red
  save_image(img, dir / "red.png");
  const ImageBuffer back = load_image(dir / "red.png");
  CHECK(back.at(0, 0, 0) == 1.0f);
  CHECK(back.at(0, 0, 2) == 0.0f);
}

TEST_CASE("JPEG encode respects quality bounds") {
  TempDir dir("imagecore");
  const ImageBuffer img(16, 16, 0.5f);
  CHECK(kind_of([&] { save_image(img, dir / "q.jpg", ImageFormat::kJpeg, 0); }) ==
        ErrorKind::kInvalidQuality);
  CHECK(kind_of([&] { save_image(img, dir / "q.jpg", ImageFormat::kJpeg, 101); }) ==
        ErrorKind::kInvalidQuality);
  CHECK(kind_of([&] { jpeg_round_trip(img, 0); }) == ErrorKind::kInvalidQuality);
  save_image(img, dir / "q.jpg", ImageFormat::kJpeg, 90);
  const ImageBuffer back = load_image(dir / "q.jpg");
  REQUIRE(back.height() == 16);
  for (float v : back.values()) CHECK(std::abs(v - 0.5f) < 0.02f);
  const ImageBuffer rt = jpeg_round_trip(img, 90);
  for (float v : rt.values()) CHECK(std::abs(v - 0.5f) < 0.02f);
}

TEST_CASE("load_image error kinds") {
  TempDir dir("imagecore");
  CHECK(kind_of([&] { load_image(dir / "missing.png"); }) == ErrorKind::kFileNotFound);
  {
    std::ofstream(dir / "text.png") << "hello world, not an image";
  }
  CHECK(kind_of([&] { load_image(dir / "text.png"); }) == ErrorKind::kUnsupportedFormat);
  {
    std::ofstream out(dir / "trunc.png", std::ios::binary);
    const unsigned char sig[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n', 0, 0, 0, 13};
    out.write(reinterpret_cast<const char*>(sig), sizeof(sig));
  }
  CHECK(kind_of([&] { load_image(dir / "trunc.png"); }) == ErrorKind::kCorruptImage);
}

TEST_CASE("mask files store text as 255 and load as holes") {
  TempDir dir("imagecore");
  StrokeMask m(3, 4);
  m.at(1, 2) = 0.0f;
  save_mask(m, dir / "m.png");
  const StrokeMask back = load_mask(dir / "m.png");
  CHECK(back == m);
  const ImageBuffer raw = load_image(dir / "m.png");
  CHECK(raw.at(1, 2, 0) == 1.0f);
  CHECK(raw.at(0, 0, 0) == 0.0f);
}

TEST_CASE("binarize and invert") {
  const StrokeMask m = StrokeMask::from_values(1, 4, {0.0f, 0.49f, 0.5f, 1.0f});
  const StrokeMask b = binarize(m);
  CHECK(std::vector<float>(b.values().begin(), b.values().end()) ==
        std::vector<float>{0.f, 0.f, 1.f, 1.f});
  const StrokeMask inv = invert(m);
  CHECK(inv.at(0, 0) == 1.0f);
  CHECK(inv.at(0, 1) == doctest::Approx(0.51f));
  CHECK(invert(invert(b)) == b);
  CHECK(kind_of([&] { binarize(m, 0.0f); }) == ErrorKind::kInvalidArgument);
  CHECK(kind_of([&] { binarize(m, 1.0f); }) == ErrorKind::kInvalidArgument);
}
