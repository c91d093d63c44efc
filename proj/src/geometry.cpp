#include "relkit/geometry.hpp"

#include <algorithm>

#include "relkit/data.hpp"
#include "relkit/errors.hpp"

namespace relkit {

Box box_at(const Tensor& boxes, std::size_t row) {
  if (boxes.cols() != 4 || row >= boxes.rows()) throw IndexError("box row out of range");
  return {boxes(row, 0), boxes(row, 1), boxes(row, 2), boxes(row, 3)};
}

double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

Box union_box(const Box& a, const Box& b) {
  return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2), std::max(a.y2, b.y2)};
}

std::array<double, kBoxGeometryDim> box_geometry(const Box& box, double image_width, double image_height) {
  validate_box(box.x1, box.y1, box.x2, box.y2, image_width, image_height);
  const double w = image_width, h = image_height;
  return {box.x1 / w,           box.y1 / h,           box.x2 / w,         box.y2 / h,
          box.center_x() / w,   box.center_y() / h,   box.width() / w,    box.height() / h};
}

Tensor box_geometry_matrix(const Tensor& boxes, double image_width, double image_height) {
  const std::size_t n = boxes.size() == 0 ? 0 : boxes.rows();
  Tensor out = Tensor::matrix(n, kBoxGeometryDim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto g = box_geometry(box_at(boxes, i), image_width, image_height);
    std::copy(g.begin(), g.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace relkit
