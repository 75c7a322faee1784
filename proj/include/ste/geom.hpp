#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>

#include "ste/imagecore.hpp"
#include "ste/region.hpp"

namespace ste::geom {

inline constexpr double kDefaultExpandFactor = 0.15;
inline constexpr int kNetworkHeight = 128;
inline constexpr int kNetworkWidth = 640;

struct Size {
  int height = 0;
  int width = 0;

  friend bool operator==(const Size&, const Size&) = default;
};

// Grows the region outward by factor * (short side) on every side and clips it
// to [0, width] x [0, height]. Quads move along their own edge directions and
// polygons along the top/bottom point pairs.
TextRegion expand_region(const TextRegion& region, Size image_size, double factor);

// 3x3 projective map with element (2, 2) == 1.
class Homography {
 public:
  Homography() : m_(Eigen::Matrix3d::Identity()) {}
  explicit Homography(const Eigen::Matrix3d& m);

  const Eigen::Matrix3d& matrix() const { return m_; }
  Point2 apply(Point2 p) const;
  Homography inverse() const;

 private:
  Eigen::Matrix3d m_;
};

// Exact 4-point homography via the 8x8 linear system (h33 = 1). Throws
// kDegenerateConfiguration when three points of either set are collinear.
Homography solve_homography(const std::array<Point2, 4>& src, const std::array<Point2, 4>& dst);

enum class Interpolation { kBilinear, kBicubic };

// Inverse mapping: every output pixel center p is sampled at H^-1 p (bilinear
// unless asked otherwise); samples outside the source read as 0.
ImageBuffer warp_perspective(const ImageBuffer& img, const Homography& h, Size out_size,
                             Interpolation interp = Interpolation::kBilinear);
StrokeMask warp_perspective(const StrokeMask& mask, const Homography& h, Size out_size,
                            float fill = 1.0f);

// Thin-plate spline mapping src control points onto dst control points:
//   f(p) = a0 + ax * x + ay * y + sum_i w_i U(|p - src_i|),  U(r) = r^2 log r^2
class TpsWarp {
 public:
  const std::vector<Point2>& source() const { return source_; }
  const std::vector<Point2>& target() const { return target_; }
  // Rows: constant, x, y; columns: output x, output y.
  const Eigen::Matrix<double, 3, 2>& affine() const { return affine_; }
  // One row per control point; columns: output x, output y.
  const Eigen::MatrixX2d& weights() const { return weights_; }

  Point2 map(Point2 p) const;

 private:
  friend TpsWarp fit_tps(const std::vector<Point2>&, const std::vector<Point2>&);

  std::vector<Point2> source_;
  std::vector<Point2> target_;
  Eigen::Matrix<double, 3, 2> affine_ = Eigen::Matrix<double, 3, 2>::Zero();
  Eigen::MatrixX2d weights_;
};

// Throws kSingularSystem for duplicate or otherwise degenerate control points.
TpsWarp fit_tps(const std::vector<Point2>& src, const std::vector<Point2>& dst);

enum class WarpDirection {
  // Output lives in target space (e.g. rectify a curved crop).
  kForward,
  // Output lives in source space (e.g. restore a rectified crop).
  kInverse,
};

// Forward sampling uses a second spline fitted from target to source points;
// inverse sampling inverts that spline numerically, so the two directions
// undo each other.
ImageBuffer warp_tps(const ImageBuffer& img, const TpsWarp& warp, Size out_size,
                     WarpDirection direction, Interpolation interp = Interpolation::kBilinear);
StrokeMask warp_tps(const StrokeMask& mask, const TpsWarp& warp, Size out_size,
                    WarpDirection direction, float fill = 1.0f);

// Pixel-center aligned bilinear resize.
ImageBuffer resize_bilinear(const ImageBuffer& img, Size out_size);
StrokeMask resize_bilinear(const StrokeMask& mask, Size out_size);

struct RestoreInfo {
  Size original;
  // Width of the resized content before right padding.
  int content_width = 0;
  int pad = 0;
  double scale = 1.0;
};

struct Padded {
  ImageBuffer image;
  RestoreInfo restore;
};

// Height -> target.height keeping aspect ratio; narrower results are zero
// padded on the right, wider ones are resized to target.width.
Padded resize_pad(const ImageBuffer& img, Size target = {kNetworkHeight, kNetworkWidth});
// Inverse of resize_pad: drops the padding and resizes back to the original.
ImageBuffer unpad(const ImageBuffer& img, const RestoreInfo& info);
StrokeMask unpad(const StrokeMask& mask, const RestoreInfo& info);

// Writes crop pixels whose centers lie strictly inside `region` (canvas
// coordinates) onto a copy of the canvas. The crop's top-left pixel sits at
// canvas pixel (offset_x, offset_y). All other pixels are untouched.
ImageBuffer paste_back(const ImageBuffer& canvas, const ImageBuffer& crop, const TextRegion& region,
                       int offset_x, int offset_y);
StrokeMask paste_back(const StrokeMask& canvas, const StrokeMask& crop, const TextRegion& region,
                      int offset_x, int offset_y);

// Rectified size of a quad or polygon: width = mean of top/bottom boundary
// lengths, height = mean of left/right (or paired top/bottom) distances.
Size rectified_size(const TextRegion& region);

// Rim points of a width x height rectangle matching a polygon's 2N points:
// top points spread by arc length along y = 0, bottom points along y = height.
std::vector<Point2> rectangle_rim(const TextRegion& polygon, Size size);

}  // namespace ste::geom
