#include "ste/region.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ste {

namespace {

double signed_area(const std::vector<Point2>& poly) {
  double acc = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point2& a = poly[i];
    const Point2& b = poly[(i + 1) % poly.size()];
    acc += a.x * b.y - b.x * a.y;
  }
  return 0.5 * acc;
}

}  // namespace

TextRegion TextRegion::axis_aligned(double x0, double y0, double x1, double y1) {
  return TextRegion{RegionKind::kAxisAligned,
                    {{std::min(x0, x1), std::min(y0, y1)}, {std::max(x0, x1), std::max(y0, y1)}}};
}

TextRegion TextRegion::quad(std::array<Point2, 4> corners) {
  std::vector<Point2> pts(corners.begin(), corners.end());
  Point2 center;
  for (const Point2& p : pts) {
    center.x += 0.25 * p.x;
    center.y += 0.25 * p.y;
  }
  // With y pointing down, increasing atan2 runs clockwise on screen.
  std::sort(pts.begin(), pts.end(), [&](const Point2& a, const Point2& b) {
    return std::atan2(a.y - center.y, a.x - center.x) < std::atan2(b.y - center.y, b.x - center.x);
  });
  const auto top_left = std::min_element(pts.begin(), pts.end(), [](const Point2& a, const Point2& b) {
    return a.x + a.y < b.x + b.y;
  });
  std::rotate(pts.begin(), top_left, pts.end());
  return TextRegion{RegionKind::kQuad, std::move(pts)};
}

TextRegion TextRegion::polygon(std::vector<Point2> points) {
  TextRegion r{RegionKind::kPolygon, std::move(points)};
  r.validate();
  return r;
}

void TextRegion::validate() const {
  const std::size_t n = points.size();
  bool ok = false;
  switch (kind) {
    case RegionKind::kAxisAligned: ok = n == 2; break;
    case RegionKind::kQuad: ok = n == 4; break;
    case RegionKind::kPolygon: ok = n >= 4 && n % 2 == 0; break;
  }
  if (!ok) {
    throw Error(ErrorKind::kInvalidArgument,
                "region has wrong number of points: " + std::to_string(n));
  }
  for (const Point2& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw Error(ErrorKind::kInvalidArgument, "region coordinate is not finite");
    }
  }
}

std::vector<Point2> TextRegion::outline() const {
  if (kind == RegionKind::kAxisAligned) {
    const Point2 a = points.at(0);
    const Point2 b = points.at(1);
    return {{a.x, a.y}, {b.x, a.y}, {b.x, b.y}, {a.x, b.y}};
  }
  return points;
}

double TextRegion::area() const { return std::abs(signed_area(outline())); }

Box TextRegion::bounds() const {
  Box box{points.at(0).x, points.at(0).y, points.at(0).x, points.at(0).y};
  for (const Point2& p : points) {
    box.x0 = std::min(box.x0, p.x);
    box.y0 = std::min(box.y0, p.y);
    box.x1 = std::max(box.x1, p.x);
    box.y1 = std::max(box.y1, p.y);
  }
  return box;
}

bool TextRegion::contains(double x, double y) const {
  if (kind == RegionKind::kAxisAligned) {
    const Box b = bounds();
    return x > b.x0 && x < b.x1 && y > b.y0 && y < b.y1;
  }
  const std::vector<Point2> poly = outline();
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point2& a = poly[i];
    const Point2& b = poly[j];
    if ((a.y > y) != (b.y > y)) {
      const double xc = (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x;
      if (x < xc) inside = !inside;
    }
  }
  return inside;
}

TextRegion TextRegion::clipped(int width, int height) const {
  TextRegion out = *this;
  for (Point2& p : out.points) {
    p.x = std::clamp(p.x, 0.0, static_cast<double>(width));
    p.y = std::clamp(p.y, 0.0, static_cast<double>(height));
  }
  return out;
}

}  // namespace ste
