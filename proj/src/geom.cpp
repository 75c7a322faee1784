#include "ste/geom.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ste::geom {

namespace {

Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
double norm(Point2 a) { return std::hypot(a.x, a.y); }
Point2 normalized(Point2 a) {
  const double n = norm(a);
  return n > 0.0 ? Point2{a.x / n, a.y / n} : Point2{0.0, 0.0};
}

double polyline_length(const std::vector<Point2>& pts, std::size_t begin, std::size_t end) {
  double len = 0.0;
  for (std::size_t i = begin + 1; i < end; ++i) len += norm(pts[i] - pts[i - 1]);
  return len;
}

// Bottom point paired with top point i of a 2N polygon.
std::size_t partner(std::size_t i, std::size_t n_total) { return n_total - 1 - i; }

// Read-only view of interleaved float planes shared by images and masks.
struct PlaneView {
  const float* data;
  int height;
  int width;
  int channels;
};

// Bilinear sample at continuous point p; pixel centers sit at +0.5. Points
// farther than half a pixel outside the grid return `fill`.
void sample(const PlaneView& src, Point2 p, float fill, float* out) {
  const double fx = p.x - 0.5;
  const double fy = p.y - 0.5;
  if (!(fx >= -0.5 && fx <= src.width - 0.5 && fy >= -0.5 && fy <= src.height - 0.5)) {
    for (int c = 0; c < src.channels; ++c) out[c] = fill;
    return;
  }
  const double cx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
  const double cy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
  const int x0 = static_cast<int>(std::floor(cx));
  const int y0 = static_cast<int>(std::floor(cy));
  const int x1 = std::min(x0 + 1, src.width - 1);
  const int y1 = std::min(y0 + 1, src.height - 1);
  const double ax = cx - x0;
  const double ay = cy - y0;
  auto px = [&](int y, int x, int c) {
    return static_cast<double>(src.data[(static_cast<std::size_t>(y) * src.width + x) * src.channels + c]);
  };
  for (int c = 0; c < src.channels; ++c) {
    const double top = (1.0 - ax) * px(y0, x0, c) + ax * px(y0, x1, c);
    const double bottom = (1.0 - ax) * px(y1, x0, c) + ax * px(y1, x1, c);
    out[c] = static_cast<float>((1.0 - ay) * top + ay * bottom);
  }
}

// Catmull-Rom weights for taps at offsets -1, 0, 1, 2.
std::array<double, 4> cubic_weights(double t) {
  const double t2 = t * t, t3 = t2 * t;
  return {0.5 * (-t3 + 2 * t2 - t), 0.5 * (3 * t3 - 5 * t2 + 2), 0.5 * (-3 * t3 + 4 * t2 + t),
          0.5 * (t3 - t2)};
}

// Bicubic counterpart of `sample` with replicated edges.
void sample_cubic(const PlaneView& src, Point2 p, float fill, float* out) {
  const double fx = p.x - 0.5;
  const double fy = p.y - 0.5;
  if (!(fx >= -0.5 && fx <= src.width - 0.5 && fy >= -0.5 && fy <= src.height - 0.5)) {
    for (int c = 0; c < src.channels; ++c) out[c] = fill;
    return;
  }
  const double cx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
  const double cy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
  const int x0 = static_cast<int>(std::floor(cx));
  const int y0 = static_cast<int>(std::floor(cy));
  const auto wx = cubic_weights(cx - x0);
  const auto wy = cubic_weights(cy - y0);
  for (int c = 0; c < src.channels; ++c) {
    double acc = 0.0;
    for (int j = 0; j < 4; ++j) {
      const int yy = std::clamp(y0 - 1 + j, 0, src.height - 1);
      double row = 0.0;
      for (int i = 0; i < 4; ++i) {
        const int xx = std::clamp(x0 - 1 + i, 0, src.width - 1);
        row += wx[i] * src.data[(static_cast<std::size_t>(yy) * src.width + xx) * src.channels + c];
      }
      acc += wy[j] * row;
    }
    out[c] = static_cast<float>(acc);
  }
}

template <typename MapFn>
void warp_plane(const PlaneView& src, Size out_size, float fill, std::span<float> out, MapFn&& map,
                Interpolation interp = Interpolation::kBilinear) {
  for (int y = 0; y < out_size.height; ++y) {
    for (int x = 0; x < out_size.width; ++x) {
      const Point2 s = map(Point2{x + 0.5, y + 0.5});
      float* dst = &out[(static_cast<std::size_t>(y) * out_size.width + x) * src.channels];
      if (interp == Interpolation::kBicubic) {
        sample_cubic(src, s, fill, dst);
      } else {
        sample(src, s, fill, dst);
      }
    }
  }
}

PlaneView view(const ImageBuffer& img) {
  return {img.values().data(), img.height(), img.width(), ImageBuffer::kChannels};
}
PlaneView view(const StrokeMask& m) { return {m.values().data(), m.height(), m.width(), 1}; }

void clamp_unit(std::span<float> values) {
  for (float& v : values) v = std::clamp(v, 0.0f, 1.0f);
}

void check_size(Size s) {
  if (s.height < 1 || s.width < 1) {
    throw Error(ErrorKind::kShapeMismatch, "output size must be positive");
  }
}

bool collinear(Point2 a, Point2 b, Point2 c) {
  const double cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
  const double scale = std::max({norm(b - a), norm(c - a), norm(c - b), 1e-12});
  return std::abs(cross) <= 1e-9 * scale * scale;
}

bool any_three_collinear(const std::array<Point2, 4>& p) {
  return collinear(p[0], p[1], p[2]) || collinear(p[0], p[1], p[3]) ||
         collinear(p[0], p[2], p[3]) || collinear(p[1], p[2], p[3]);
}

double tps_kernel(double r2) { return r2 > 0.0 ? r2 * std::log(r2) : 0.0; }

template <typename Plane>
Plane resize_impl(const Plane& src, Size out_size) {
  check_size(out_size);
  Plane out(out_size.height, out_size.width);
  const PlaneView v = view(src);
  const double sx = static_cast<double>(src.width()) / out_size.width;
  const double sy = static_cast<double>(src.height()) / out_size.height;
  warp_plane(v, out_size, 0.0f, out.values(), [&](Point2 p) {
    // Clamp into the source so edges replicate rather than fade.
    return Point2{std::clamp(p.x * sx, 0.5, src.width() - 0.5),
                  std::clamp(p.y * sy, 0.5, src.height() - 0.5)};
  });
  clamp_unit(out.values());
  return out;
}

template <typename Plane>
Plane unpad_impl(const Plane& src, const RestoreInfo& info) {
  if (info.content_width < 1 || info.content_width > src.width()) {
    throw Error(ErrorKind::kShapeMismatch, "restore info does not match the padded image");
  }
  const Plane content = src.crop(0, 0, info.content_width, src.height());
  return resize_impl(content, info.original);
}

template <typename Plane>
Plane paste_impl(const Plane& canvas, const Plane& crop, const TextRegion& region, int ox, int oy,
                 int channels) {
  Plane out = canvas;
  if (region.area() <= 1e-12) return out;
  const Box b = region.bounds();
  const int y_begin = std::max({0, oy, static_cast<int>(std::floor(b.y0))});
  const int y_end = std::min({canvas.height(), oy + crop.height(), static_cast<int>(std::ceil(b.y1))});
  const int x_begin = std::max({0, ox, static_cast<int>(std::floor(b.x0))});
  const int x_end = std::min({canvas.width(), ox + crop.width(), static_cast<int>(std::ceil(b.x1))});
  auto dst = out.values();
  auto src = crop.values();
  for (int y = y_begin; y < y_end; ++y) {
    for (int x = x_begin; x < x_end; ++x) {
      if (!region.contains(x + 0.5, y + 0.5)) continue;
      const std::size_t di = (static_cast<std::size_t>(y) * canvas.width() + x) * channels;
      const std::size_t si =
          (static_cast<std::size_t>(y - oy) * crop.width() + (x - ox)) * channels;
      for (int c = 0; c < channels; ++c) dst[di + c] = src[si + c];
    }
  }
  return out;
}

}  // namespace

TextRegion expand_region(const TextRegion& region, Size image_size, double factor) {
  region.validate();
  if (region.area() <= 1e-12) {
    throw Error(ErrorKind::kDegenerateRegion, "region has zero area");
  }
  if (factor < 0.0) throw Error(ErrorKind::kInvalidArgument, "expand factor must be >= 0");
  TextRegion out = region;
  auto& p = out.points;
  switch (region.kind) {
    case RegionKind::kAxisAligned: {
      const Box b = region.bounds();
      const double pad = factor * std::min(b.width(), b.height());
      p[0] = {b.x0 - pad, b.y0 - pad};
      p[1] = {b.x1 + pad, b.y1 + pad};
      break;
    }
    case RegionKind::kQuad: {
      const Point2 u = normalized((p[1] - p[0]) + (p[2] - p[3]));
      const Point2 v = normalized((p[3] - p[0]) + (p[2] - p[1]));
      const double width = 0.5 * (norm(p[1] - p[0]) + norm(p[2] - p[3]));
      const double height = 0.5 * (norm(p[3] - p[0]) + norm(p[2] - p[1]));
      const double pad = factor * std::min(width, height);
      p[0] = p[0] - pad * (u + v);
      p[1] = p[1] + pad * (u - v);
      p[2] = p[2] + pad * (u + v);
      p[3] = p[3] + pad * (v - u);
      break;
    }
    case RegionKind::kPolygon: {
      const std::size_t n = p.size();
      const std::size_t half = n / 2;
      double pair_dist = 0.0;
      for (std::size_t i = 0; i < half; ++i) pair_dist += norm(p[partner(i, n)] - p[i]);
      const double height = pair_dist / half;
      const double width = 0.5 * (polyline_length(p, 0, half) + polyline_length(p, half, n));
      const double pad = factor * std::min(width, height);
      const std::vector<Point2> orig = p;
      for (std::size_t i = 0; i < half; ++i) {
        const Point2 v = normalized(orig[partner(i, n)] - orig[i]);
        p[i] = p[i] - pad * v;
        p[partner(i, n)] = p[partner(i, n)] + pad * v;
      }
      const Point2 t_first = normalized((orig[1] - orig[0]) + (orig[partner(1, n)] - orig[partner(0, n)]));
      const Point2 t_last = normalized((orig[half - 1] - orig[half - 2]) +
                                       (orig[partner(half - 1, n)] - orig[partner(half - 2, n)]));
      p[0] = p[0] - pad * t_first;
      p[partner(0, n)] = p[partner(0, n)] - pad * t_first;
      p[half - 1] = p[half - 1] + pad * t_last;
      p[partner(half - 1, n)] = p[partner(half - 1, n)] + pad * t_last;
      break;
    }
  }
  return out.clipped(image_size.width, image_size.height);
}

Homography::Homography(const Eigen::Matrix3d& m) : m_(m) {
  if (std::abs(m(2, 2)) < 1e-15) {
    throw Error(ErrorKind::kDegenerateConfiguration, "homography has h33 == 0");
  }
  m_ /= m(2, 2);
}

Point2 Homography::apply(Point2 p) const {
  const Eigen::Vector3d q = m_ * Eigen::Vector3d(p.x, p.y, 1.0);
  return {q.x() / q.z(), q.y() / q.z()};
}

Homography Homography::inverse() const {
  const Eigen::FullPivLU<Eigen::Matrix3d> lu(m_);
  if (!lu.isInvertible()) {
    throw Error(ErrorKind::kDegenerateConfiguration, "homography is singular");
  }
  return Homography(lu.inverse());
}

Homography solve_homography(const std::array<Point2, 4>& src, const std::array<Point2, 4>& dst) {
  if (any_three_collinear(src) || any_three_collinear(dst)) {
    throw Error(ErrorKind::kDegenerateConfiguration, "three of the four points are collinear");
  }
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double x = src[i].x, y = src[i].y, u = dst[i].x, v = dst[i].y;
    a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }
  const Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> lu(a);
  if (!lu.isInvertible()) {
    throw Error(ErrorKind::kDegenerateConfiguration, "homography system is singular");
  }
  const Eigen::Matrix<double, 8, 1> h = lu.solve(b);
  Eigen::Matrix3d m;
  m << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  return Homography(m);
}

ImageBuffer warp_perspective(const ImageBuffer& img, const Homography& h, Size out_size,
                             Interpolation interp) {
  check_size(out_size);
  const Homography inv = h.inverse();
  ImageBuffer out(out_size.height, out_size.width);
  warp_plane(view(img), out_size, 0.0f, out.values(), [&](Point2 p) { return inv.apply(p); }, interp);
  clamp_unit(out.values());
  return out;
}

StrokeMask warp_perspective(const StrokeMask& mask, const Homography& h, Size out_size, float fill) {
  check_size(out_size);
  const Homography inv = h.inverse();
  StrokeMask out(out_size.height, out_size.width);
  warp_plane(view(mask), out_size, fill, out.values(), [&](Point2 p) { return inv.apply(p); });
  clamp_unit(out.values());
  return out;
}

Point2 TpsWarp::map(Point2 p) const {
  double x = affine_(0, 0) + affine_(1, 0) * p.x + affine_(2, 0) * p.y;
  double y = affine_(0, 1) + affine_(1, 1) * p.x + affine_(2, 1) * p.y;
  for (std::size_t i = 0; i < source_.size(); ++i) {
    const double dx = p.x - source_[i].x;
    const double dy = p.y - source_[i].y;
    const double u = tps_kernel(dx * dx + dy * dy);
    x += weights_(static_cast<Eigen::Index>(i), 0) * u;
    y += weights_(static_cast<Eigen::Index>(i), 1) * u;
  }
  return {x, y};
}

TpsWarp fit_tps(const std::vector<Point2>& src, const std::vector<Point2>& dst) {
  if (src.size() != dst.size()) {
    throw Error(ErrorKind::kShapeMismatch, "TPS source and target point counts differ");
  }
  const auto n = static_cast<Eigen::Index>(src.size());
  if (n < 3) throw Error(ErrorKind::kSingularSystem, "TPS needs at least 3 control points");
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (norm(src[i] - src[j]) < 1e-9) {
        throw Error(ErrorKind::kSingularSystem, "duplicate TPS control points");
      }
    }
  }
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n + 3, n + 3);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + 3, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double dx = src[i].x - src[j].x;
      const double dy = src[i].y - src[j].y;
      l(i, j) = tps_kernel(dx * dx + dy * dy);
    }
    l(i, n) = l(n, i) = 1.0;
    l(i, n + 1) = l(n + 1, i) = src[i].x;
    l(i, n + 2) = l(n + 2, i) = src[i].y;
    rhs(i, 0) = dst[i].x;
    rhs(i, 1) = dst[i].y;
  }
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(l);
  if (!lu.isInvertible()) {
    throw Error(ErrorKind::kSingularSystem, "TPS system is singular (collinear points?)");
  }
  const Eigen::MatrixXd sol = lu.solve(rhs);
  if (!sol.allFinite() || ((l * sol - rhs).cwiseAbs().maxCoeff() > 1e-6)) {
    throw Error(ErrorKind::kSingularSystem, "TPS system is ill-conditioned");
  }
  TpsWarp warp;
  warp.source_ = src;
  warp.target_ = dst;
  warp.weights_ = sol.topRows(n);
  warp.affine_ = sol.bottomRows(3);
  return warp;
}

namespace {

// Solves back(q) = p by Newton steps from `guess`, so kInverse undoes kForward
// exactly. Falls back to the guess when the iteration stalls.
Point2 invert_map(const TpsWarp& back, Point2 p, Point2 guess) {
  constexpr double kStep = 1e-4;
  Point2 q = guess;
  for (int it = 0; it < 20; ++it) {
    const Point2 r = back.map(q) - p;
    if (norm(r) < 1e-9) return q;
    const Point2 dx = (1.0 / (2 * kStep)) * (back.map(q + Point2{kStep, 0}) - back.map(q - Point2{kStep, 0}));
    const Point2 dy = (1.0 / (2 * kStep)) * (back.map(q + Point2{0, kStep}) - back.map(q - Point2{0, kStep}));
    const double det = dx.x * dy.y - dy.x * dx.y;
    if (std::abs(det) < 1e-12) return guess;
    q = q - Point2{(dy.y * r.x - dy.x * r.y) / det, (-dx.y * r.x + dx.x * r.y) / det};
  }
  return norm(back.map(q) - p) < 1e-3 ? q : guess;
}

}  // namespace

ImageBuffer warp_tps(const ImageBuffer& img, const TpsWarp& warp, Size out_size,
                     WarpDirection direction, Interpolation interp) {
  check_size(out_size);
  ImageBuffer out(out_size.height, out_size.width);
  if (direction == WarpDirection::kForward) {
    const TpsWarp back = fit_tps(warp.target(), warp.source());
    warp_plane(view(img), out_size, 0.0f, out.values(), [&](Point2 p) { return back.map(p); }, interp);
  } else {
    const TpsWarp back = fit_tps(warp.target(), warp.source());
    warp_plane(view(img), out_size, 0.0f, out.values(),
               [&](Point2 p) { return invert_map(back, p, warp.map(p)); }, interp);
  }
  clamp_unit(out.values());
  return out;
}

StrokeMask warp_tps(const StrokeMask& mask, const TpsWarp& warp, Size out_size,
                    WarpDirection direction, float fill) {
  check_size(out_size);
  StrokeMask out(out_size.height, out_size.width);
  if (direction == WarpDirection::kForward) {
    const TpsWarp back = fit_tps(warp.target(), warp.source());
    warp_plane(view(mask), out_size, fill, out.values(), [&](Point2 p) { return back.map(p); });
  } else {
    const TpsWarp back = fit_tps(warp.target(), warp.source());
    warp_plane(view(mask), out_size, fill, out.values(),
               [&](Point2 p) { return invert_map(back, p, warp.map(p)); });
  }
  clamp_unit(out.values());
  return out;
}

ImageBuffer resize_bilinear(const ImageBuffer& img, Size out_size) {
  return resize_impl(img, out_size);
}

StrokeMask resize_bilinear(const StrokeMask& mask, Size out_size) {
  return resize_impl(mask, out_size);
}

Padded resize_pad(const ImageBuffer& img, Size target) {
  check_size(target);
  RestoreInfo info;
  info.original = {img.height(), img.width()};
  info.scale = static_cast<double>(target.height) / img.height();
  const int scaled_width =
      std::max(1, static_cast<int>(std::lround(img.width() * info.scale)));
  Padded out{ImageBuffer(target.height, target.width), info};
  if (scaled_width < target.width) {
    const ImageBuffer resized = resize_impl(img, {target.height, scaled_width});
    for (int y = 0; y < target.height; ++y) {
      for (int x = 0; x < scaled_width; ++x) {
        for (int c = 0; c < ImageBuffer::kChannels; ++c) out.image.at(y, x, c) = resized.at(y, x, c);
      }
    }
    out.restore.content_width = scaled_width;
    out.restore.pad = target.width - scaled_width;
  } else {
    out.image = resize_impl(img, target);
    out.restore.content_width = target.width;
    out.restore.pad = 0;
  }
  return out;
}

ImageBuffer unpad(const ImageBuffer& img, const RestoreInfo& info) { return unpad_impl(img, info); }

StrokeMask unpad(const StrokeMask& mask, const RestoreInfo& info) { return unpad_impl(mask, info); }

ImageBuffer paste_back(const ImageBuffer& canvas, const ImageBuffer& crop, const TextRegion& region,
                       int offset_x, int offset_y) {
  return paste_impl(canvas, crop, region, offset_x, offset_y, ImageBuffer::kChannels);
}

StrokeMask paste_back(const StrokeMask& canvas, const StrokeMask& crop, const TextRegion& region,
                      int offset_x, int offset_y) {
  return paste_impl(canvas, crop, region, offset_x, offset_y, 1);
}

Size rectified_size(const TextRegion& region) {
  region.validate();
  const auto& p = region.points;
  double width = 0.0;
  double height = 0.0;
  switch (region.kind) {
    case RegionKind::kAxisAligned: {
      const Box b = region.bounds();
      width = b.width();
      height = b.height();
      break;
    }
    case RegionKind::kQuad:
      width = 0.5 * (norm(p[1] - p[0]) + norm(p[2] - p[3]));
      height = 0.5 * (norm(p[3] - p[0]) + norm(p[2] - p[1]));
      break;
    case RegionKind::kPolygon: {
      const std::size_t n = p.size();
      const std::size_t half = n / 2;
      width = 0.5 * (polyline_length(p, 0, half) + polyline_length(p, half, n));
      for (std::size_t i = 0; i < half; ++i) height += norm(p[partner(i, n)] - p[i]);
      height /= half;
      break;
    }
  }
  return {std::max(1, static_cast<int>(std::lround(height))),
          std::max(1, static_cast<int>(std::lround(width)))};
}

std::vector<Point2> rectangle_rim(const TextRegion& polygon, Size size) {
  if (polygon.kind != RegionKind::kPolygon) {
    throw Error(ErrorKind::kInvalidArgument, "rectangle_rim expects a polygon region");
  }
  polygon.validate();
  const auto& p = polygon.points;
  const std::size_t n = p.size();
  const std::size_t half = n / 2;
  std::vector<Point2> rim(n);
  // Top runs left->right over points [0, half); bottom runs right->left over
  // [half, n), so its arc length is measured from the right end.
  const double top_len = std::max(polyline_length(p, 0, half), 1e-12);
  const double bottom_len = std::max(polyline_length(p, half, n), 1e-12);
  double acc = 0.0;
  for (std::size_t i = 0; i < half; ++i) {
    if (i > 0) acc += norm(p[i] - p[i - 1]);
    rim[i] = {size.width * acc / top_len, 0.0};
  }
  acc = 0.0;
  for (std::size_t i = half; i < n; ++i) {
    if (i > half) acc += norm(p[i] - p[i - 1]);
    rim[i] = {size.width * (1.0 - acc / bottom_len), static_cast<double>(size.height)};
  }
  return rim;
}

}  // namespace ste::geom
