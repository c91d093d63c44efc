#pragma once

#include <array>

#include "relkit/tensor.hpp"

namespace relkit {

struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
};

Box box_at(const Tensor& boxes, std::size_t row);
double iou(const Box& a, const Box& b);
Box union_box(const Box& a, const Box& b);

inline constexpr std::size_t kBoxGeometryDim = 8;

/// (x1/W, y1/H, x2/W, y2/H, cx/W, cy/H, w/W, h/H); throws ValidationError on
/// an invalid box.
std::array<double, kBoxGeometryDim> box_geometry(const Box& box, double image_width, double image_height);

/// Row i is box_geometry of box i.
Tensor box_geometry_matrix(const Tensor& boxes, double image_width, double image_height);

}  // namespace relkit
