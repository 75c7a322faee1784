#include <doctest.h>

#include <cmath>

#include "ste/geom.hpp"
#include "test_helpers.hpp"

using namespace ste;
using namespace ste::geom;

namespace {

ImageBuffer smooth_image(int h, int w) {
  ImageBuffer img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(y, x, 0) = 0.5f + 0.4f * std::sin(0.11f * x + 0.05f * y);
      img.at(y, x, 1) = 0.5f + 0.4f * std::cos(0.07f * y);
      img.at(y, x, 2) = static_cast<float>(x) / w;
    }
  return img;
}

double max_diff(const ImageBuffer& a, const ImageBuffer& b, int border) {
  double m = 0.0;
  for (int y = border; y < a.height() - border; ++y)
    for (int x = border; x < a.width() - border; ++x)
      for (int c = 0; c < 3; ++c) m = std::max(m, double(std::abs(a.at(y, x, c) - b.at(y, x, c))));
  return m;
}

}  // namespace

TEST_CASE("TextRegion quad reorders corners clockwise from top-left") {
  const TextRegion q = TextRegion::quad({Point2{10, 20}, Point2{0, 0}, Point2{10, 0}, Point2{0, 20}});
  CHECK(q.points[0] == Point2{0, 0});
  CHECK(q.points[1] == Point2{10, 0});
  CHECK(q.points[2] == Point2{10, 20});
  CHECK(q.points[3] == Point2{0, 20});
  CHECK(q.area() == doctest::Approx(200.0));
  CHECK(q.contains(5, 5));
  CHECK_FALSE(q.contains(11, 5));
}

TEST_CASE("expand_region grows by factor times the short side") {
  const TextRegion r = TextRegion::axis_aligned(10, 10, 30, 20);
  const TextRegion e = expand_region(r, {100, 100}, 0.15);
  const Box b = e.bounds();
  CHECK(b.x0 == doctest::Approx(8.5));
  CHECK(b.y0 == doctest::Approx(8.5));
  CHECK(b.x1 == doctest::Approx(31.5));
  CHECK(b.y1 == doctest::Approx(21.5));
  const Box clipped = expand_region(TextRegion::axis_aligned(0, 0, 20, 10), {10, 20}, 0.5).bounds();
  CHECK(clipped.x0 == 0.0);
  CHECK(clipped.y1 == 10.0);
  CHECK_THROWS_AS(expand_region(TextRegion::axis_aligned(1, 1, 1, 5), {10, 10}, 0.1), Error);
}

TEST_CASE("homography maps the four correspondences exactly") {
  const std::array<Point2, 4> src{Point2{3, 4}, Point2{50, 8}, Point2{47, 30}, Point2{5, 26}};
  const std::array<Point2, 4> dst{Point2{0, 0}, Point2{64, 0}, Point2{64, 16}, Point2{0, 16}};
  const Homography h = solve_homography(src, dst);
  for (int i = 0; i < 4; ++i) {
    const Point2 p = h.apply(src[i]);
    CHECK(p.x == doctest::Approx(dst[i].x).epsilon(1e-9));
    CHECK(std::abs(p.y - dst[i].y) < 1e-9);
    const Point2 q = h.inverse().apply(dst[i]);
    CHECK(std::abs(q.x - src[i].x) < 1e-9);
  }
  CHECK(h.matrix()(2, 2) == 1.0);
  const std::array<Point2, 4> bad{Point2{0, 0}, Point2{1, 1}, Point2{2, 2}, Point2{0, 5}};
  try {
    solve_homography(bad, dst);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDegenerateConfiguration);
  }
}

TEST_CASE("identity warp reproduces the image") {
  const ImageBuffer img = testing::random_image(12, 17, 5);
  CHECK(warp_perspective(img, Homography(), {12, 17}) == img);
}

TEST_CASE("perspective rectify then restore is near lossless on smooth content") {
  const ImageBuffer img = smooth_image(60, 90);
  const std::array<Point2, 4> quad{Point2{10, 10}, Point2{80, 14}, Point2{78, 50}, Point2{12, 46}};
  const std::array<Point2, 4> rect{Point2{0, 0}, Point2{140, 0}, Point2{140, 72}, Point2{0, 72}};
  const Homography h = solve_homography(quad, rect);
  const ImageBuffer flat = warp_perspective(img, h, {72, 140});
  const ImageBuffer back = warp_perspective(flat, h.inverse(), {60, 90});
  double m = 0.0;
  for (int y = 16; y < 42; ++y)
    for (int x = 16; x < 74; ++x)
      for (int c = 0; c < 3; ++c) m = std::max(m, double(std::abs(back.at(y, x, c) - img.at(y, x, c))));
  CHECK(m < 0.02);
}

TEST_CASE("TPS interpolates control points and reduces to affine") {
  const std::vector<Point2> src{{0, 0}, {10, 0}, {20, 2}, {20, 12}, {10, 10}, {0, 10}};
  std::vector<Point2> dst;
  for (const Point2& p : src) dst.push_back({2 * p.x + 1, 0.5 * p.y - 3});
  const TpsWarp affine = fit_tps(src, dst);
  for (std::size_t i = 0; i < src.size(); ++i) {
    CHECK(std::abs(affine.map(src[i]).x - dst[i].x) < 1e-8);
    CHECK(std::abs(affine.map(src[i]).y - dst[i].y) < 1e-8);
  }
  CHECK(affine.weights().cwiseAbs().maxCoeff() < 1e-8);
  const Point2 mid = affine.map({5, 5});
  CHECK(mid.x == doctest::Approx(11.0));
  CHECK(mid.y == doctest::Approx(-0.5));

  std::vector<Point2> bent = dst;
  bent[1].y += 3.0;
  const TpsWarp w = fit_tps(src, bent);
  for (std::size_t i = 0; i < src.size(); ++i) {
    CHECK(std::abs(w.map(src[i]).y - bent[i].y) < 1e-8);
  }
}

TEST_CASE("TPS rejects duplicate control points") {
  const std::vector<Point2> src{{0, 0}, {0, 0}, {5, 5}, {1, 7}};
  try {
    fit_tps(src, src);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kSingularSystem);
  }
}

TEST_CASE("TPS forward then inverse warp round trip") {
  const ImageBuffer img = smooth_image(40, 80);
  const TextRegion poly = TextRegion::polygon(
      {{5, 10}, {40, 5}, {75, 10}, {75, 32}, {40, 27}, {5, 32}});
  const Size size = rectified_size(poly);
  const auto rim = rectangle_rim(poly, size);
  const TpsWarp warp = fit_tps(rim, poly.points);
  const ImageBuffer flat = warp_tps(img, warp, size, WarpDirection::kInverse);
  CHECK(flat.height() == size.height);
  const ImageBuffer back = warp_tps(flat, warp, {40, 80}, WarpDirection::kForward);
  double m = 0.0;
  for (int y = 14; y < 26; ++y)
    for (int x = 12; x < 68; ++x)
      for (int c = 0; c < 3; ++c) m = std::max(m, double(std::abs(back.at(y, x, c) - img.at(y, x, c))));
  CHECK(m < 0.03);
}

TEST_CASE("bicubic sampling reproduces constants and samples exactly at pixel centers") {
  const ImageBuffer img = smooth_image(20, 30);
  const ImageBuffer same = warp_perspective(img, Homography(), {20, 30}, Interpolation::kBicubic);
  CHECK(same == img);
  ImageBuffer flat(10, 12);
  for (float& v : flat.values()) v = 0.375f;
  Eigen::Matrix3d m;
  m << 1.3, 0.1, -2.0, 0.05, 0.9, 1.0, 0.001, 0.0, 1.0;
  const ImageBuffer warped = warp_perspective(flat, Homography(m), {8, 8}, Interpolation::kBicubic);
  for (int y = 2; y < 6; ++y)
    for (int x = 2; x < 6; ++x) CHECK(warped.at(y, x, 0) == doctest::Approx(0.375f).epsilon(1e-6));
}

TEST_CASE("TPS inverse direction undoes the forward direction geometrically") {
  // A coordinate ramp survives forward then inverse warping only if the two
  // sampling maps are exact inverses.
  const TextRegion poly = TextRegion::polygon(
      {{5, 12}, {40, 4}, {75, 12}, {75, 34}, {40, 26}, {5, 34}});
  const Size size{48, 160};
  const TpsWarp warp = fit_tps(poly.points, rectangle_rim(poly, size));
  ImageBuffer ramp(40, 80);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 80; ++x) {
      ramp.at(y, x, 0) = x / 80.0f;
      ramp.at(y, x, 1) = y / 40.0f;
    }
  const ImageBuffer rect = warp_tps(ramp, warp, size, WarpDirection::kForward, Interpolation::kBicubic);
  const ImageBuffer back = warp_tps(rect, warp, {40, 80}, WarpDirection::kInverse, Interpolation::kBicubic);
  // Stay clear of the rim, where the spline boundary bows past the polyline.
  double m = 0.0;
  for (int y = 14; y < 24; ++y)
    for (int x = 8; x < 72; ++x)
      for (int c = 0; c < 2; ++c) m = std::max(m, double(std::abs(back.at(y, x, c) - ramp.at(y, x, c))));
  CHECK(m < 1e-3);
}

TEST_CASE("rectified_size and rectangle_rim") {
  const TextRegion q = TextRegion::quad({Point2{0, 0}, Point2{30, 0}, Point2{30, 10}, Point2{0, 10}});
  CHECK(rectified_size(q) == Size{10, 30});
  CHECK_THROWS_AS(TextRegion::polygon({{0, 0}, {10, 0}, {30, 0}, {30, 8}, {0, 8}}), Error);
  const TextRegion p4 = TextRegion::polygon({{0, 0}, {10, 0}, {30, 0}, {30, 8}, {20, 8}, {0, 8}});
  const auto rim = rectangle_rim(p4, {8, 30});
  CHECK(rim[1].x == doctest::Approx(10.0));
  CHECK(rim[4].x == doctest::Approx(20.0));
  CHECK(rim[4].y == 8.0);
}

TEST_CASE("resize_pad keeps aspect ratio and unpad restores size") {
  const ImageBuffer img = smooth_image(32, 40);
  const Padded p = resize_pad(img, {64, 200});
  CHECK(p.restore.content_width == 80);
  CHECK(p.restore.pad == 120);
  CHECK(p.image.at(10, 150, 1) == 0.0f);
  const ImageBuffer back = unpad(p.image, p.restore);
  CHECK(back.height() == 32);
  CHECK(back.width() == 40);
  CHECK(max_diff(back, img, 1) < 0.01);
  const Padded wide = resize_pad(smooth_image(10, 100), {20, 100});
  CHECK(wide.restore.pad == 0);
  CHECK(unpad(wide.image, wide.restore).width() == 100);
}

TEST_CASE("paste_back only touches pixels inside the region") {
  const ImageBuffer canvas = testing::random_image(20, 30, 1);
  const ImageBuffer crop(10, 12, 1.0f);
  const TextRegion r = TextRegion::axis_aligned(5, 4, 14, 11);
  const ImageBuffer out = paste_back(canvas, crop, r, 4, 3);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 30; ++x) {
      const bool inside = r.contains(x + 0.5, y + 0.5);
      for (int c = 0; c < 3; ++c) {
        if (inside) CHECK(out.at(y, x, c) == 1.0f);
        else CHECK(out.at(y, x, c) == canvas.at(y, x, c));
      }
    }
}
