#pragma once

#include <array>
#include <vector>

#include "ste/error.hpp"

namespace ste {

// Continuous image coordinates: pixel (i, j) covers [j, j+1) x [i, i+1), so its
// center is (j + 0.5, i + 0.5).
struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

struct Box {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
};

enum class RegionKind { kAxisAligned, kQuad, kPolygon };

// One annotated text instance.
//   axis_aligned: 2 points, (x0, y0) and (x1, y1)
//   quad:         4 points, clockwise from top-left
//   polygon:      2N points (N >= 2), top boundary left->right then bottom
//                 boundary right->left (clockwise)
struct TextRegion {
  RegionKind kind = RegionKind::kAxisAligned;
  std::vector<Point2> points;

  static TextRegion axis_aligned(double x0, double y0, double x1, double y1);
  // Reorders the corners to clockwise-from-top-left.
  static TextRegion quad(std::array<Point2, 4> corners);
  static TextRegion polygon(std::vector<Point2> points);

  // Closed outline as a clockwise polygon (axis boxes expand to 4 corners).
  std::vector<Point2> outline() const;
  double area() const;
  Box bounds() const;
  // Even-odd point-in-polygon test on the outline.
  bool contains(double x, double y) const;
  // Points clamped into [0, width] x [0, height].
  TextRegion clipped(int width, int height) const;

  // Throws kInvalidArgument when the point count does not match kind.
  void validate() const;
};

}  // namespace ste
