// Axis-aligned boxes in normalized image coordinates.
//
// Two paths on purpose: plain-double functions for matching and metrics,
// and Tensor functions (rows of cx,cy,w,h) for the differentiable loss.
#pragma once

#include <array>
#include <utility>

#include "cdet/tensor.hpp"

namespace cdet {

// Center-size form. The corner view is (x0,y0,x1,y1) with x0<=x1, y0<=y1.
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;

  static Box from_corners(double x0, double y0, double x1, double y1);
  std::array<double, 4> corners() const;
  double area() const { return w * h; }
  // Clamps the corner view into [0,1]. For output boundaries only; loss
  // computations must see raw coordinates.
  Box clamped01() const;
};

// Intersection over union in [0,1]. A pair of zero-area boxes yields 0 and
// sets *degenerate when given.
double iou(const Box& a, const Box& b, bool* degenerate = nullptr);

// iou - (hull - union)/hull, in (-1,1].
double giou(const Box& a, const Box& b, bool* degenerate = nullptr);

// (mean |coordinate difference|, 1 - giou); both in center-size form.
std::pair<double, double> box_loss(const Box& pred, const Box& gt);

// ----- differentiable path; boxes are (n,4) center-size rows -----

Tensor boxes_to_corners(const Tensor& boxes);  // (n,4) -> (n,4) corner rows
// Row-wise mean absolute coordinate difference -> (n,1).
Tensor rows_l1(const Tensor& pred, const Tensor& gt);
// Row-wise giou -> (n,1). Rows must have positive area; predictions from a
// sigmoid head satisfy this by construction.
Tensor rows_giou(const Tensor& pred, const Tensor& gt);

}  // namespace cdet
