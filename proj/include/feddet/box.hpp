#pragma once

#include <algorithm>
#include <cmath>

namespace feddet {

// Axis-aligned box in normalized image coordinates, center format.
struct BBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double x_min() const { return cx - 0.5 * w; }
  double x_max() const { return cx + 0.5 * w; }
  double y_min() const { return cy - 0.5 * h; }
  double y_max() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  // Fully inside the unit square with positive extent.
  bool inside_unit() const {
    return w > 0.0 && h > 0.0 && w <= 1.0 && h <= 1.0 && x_min() >= 0.0 &&
           x_max() <= 1.0 && y_min() >= 0.0 && y_max() <= 1.0;
  }
};

// Intersection over union; 0 for disjoint or zero-area boxes.
inline double iou(const BBox& a, const BBox& b) {
  const double ix = std::min(a.x_max(), b.x_max()) - std::max(a.x_min(), b.x_min());
  const double iy = std::min(a.y_max(), b.y_max()) - std::max(a.y_min(), b.y_min());
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  // Areas use the same corner differences as the intersection so that
  // identical boxes score exactly 1.0.
  const double area_a = (a.x_max() - a.x_min()) * (a.y_max() - a.y_min());
  const double area_b = (b.x_max() - b.x_min()) * (b.y_max() - b.y_min());
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

}  // namespace feddet
