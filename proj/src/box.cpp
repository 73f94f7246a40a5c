#include "cdet/box.hpp"

#include <algorithm>
#include <stdexcept>

namespace cdet {

Box Box::from_corners(double x0, double y0, double x1, double y1) {
  if (x1 < x0 || y1 < y0) {
    throw std::invalid_argument("Box: corner form needs x0<=x1 and y0<=y1");
  }
  return Box{(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0};
}

std::array<double, 4> Box::corners() const {
  if (w < 0 || h < 0) throw std::invalid_argument("Box: negative extent");
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

Box Box::clamped01() const {
  auto c = corners();
  for (double& v : c) v = std::clamp(v, 0.0, 1.0);
  return from_corners(c[0], c[1], c[2], c[3]);
}

namespace {

struct Overlap {
  double inter, uni, hull;
  bool degenerate;
};

Overlap overlap(const Box& a, const Box& b) {
  auto ca = a.corners();
  auto cb = b.corners();
  double iw = std::min(ca[2], cb[2]) - std::max(ca[0], cb[0]);
  double ih = std::min(ca[3], cb[3]) - std::max(ca[1], cb[1]);
  double inter = std::max(iw, 0.0) * std::max(ih, 0.0);
  double uni = a.area() + b.area() - inter;
  double hw = std::max(ca[2], cb[2]) - std::min(ca[0], cb[0]);
  double hh = std::max(ca[3], cb[3]) - std::min(ca[1], cb[1]);
  return {inter, uni, hw * hh, uni <= 0.0};
}

}  // namespace

double iou(const Box& a, const Box& b, bool* degenerate) {
  Overlap o = overlap(a, b);
  if (degenerate) *degenerate = o.degenerate;
  if (o.degenerate) return 0.0;
  return o.inter / o.uni;
}

double giou(const Box& a, const Box& b, bool* degenerate) {
  Overlap o = overlap(a, b);
  if (degenerate) *degenerate = o.degenerate;
  if (o.degenerate) return 0.0;
  double score = o.inter / o.uni;
  if (o.hull > 0.0) score -= (o.hull - o.uni) / o.hull;
  return score;
}

std::pair<double, double> box_loss(const Box& pred, const Box& gt) {
  double l1 = (std::abs(pred.cx - gt.cx) + std::abs(pred.cy - gt.cy) +
               std::abs(pred.w - gt.w) + std::abs(pred.h - gt.h)) /
              4.0;
  return {l1, 1.0 - giou(pred, gt)};
}

// ----- differentiable path -----

static void check_box_rows(const Tensor& t, const char* op) {
  if (t.ndim() != 2 || t.shape()[1] != 4) {
    throw std::invalid_argument(std::string(op) + ": expected (n,4) boxes, got " +
                                shape_str(t.shape()));
  }
}

Tensor boxes_to_corners(const Tensor& boxes) {
  check_box_rows(boxes, "boxes_to_corners");
  Tensor cxy = slice(boxes, 1, 0, 2);
  Tensor wh = slice(boxes, 1, 2, 4);
  Tensor half = mul_scalar(wh, 0.5);
  return concat({cxy - half, cxy + half}, 1);
}

Tensor rows_l1(const Tensor& pred, const Tensor& gt) {
  check_box_rows(pred, "rows_l1");
  check_box_rows(gt, "rows_l1");
  if (pred.shape() != gt.shape()) {
    throw std::invalid_argument("rows_l1: row counts differ: " + shape_str(pred.shape()) +
                                " vs " + shape_str(gt.shape()));
  }
  return mean_axis(abs(pred - gt), 1);
}

Tensor rows_giou(const Tensor& pred, const Tensor& gt) {
  check_box_rows(pred, "rows_giou");
  check_box_rows(gt, "rows_giou");
  if (pred.shape() != gt.shape()) {
    throw std::invalid_argument("rows_giou: row counts differ: " + shape_str(pred.shape()) +
                                " vs " + shape_str(gt.shape()));
  }
  Tensor ca = boxes_to_corners(pred);
  Tensor cb = boxes_to_corners(gt);
  auto col = [](const Tensor& t, int i) { return slice(t, 1, i, i + 1); };

  Tensor iw = relu(minimum(col(ca, 2), col(cb, 2)) - maximum(col(ca, 0), col(cb, 0)));
  Tensor ih = relu(minimum(col(ca, 3), col(cb, 3)) - maximum(col(ca, 1), col(cb, 1)));
  Tensor inter = iw * ih;

  Tensor area_a = col(pred, 2) * col(pred, 3);
  Tensor area_b = col(gt, 2) * col(gt, 3);
  Tensor uni = area_a + area_b - inter;

  Tensor hw = maximum(col(ca, 2), col(cb, 2)) - minimum(col(ca, 0), col(cb, 0));
  Tensor hh = maximum(col(ca, 3), col(cb, 3)) - minimum(col(ca, 1), col(cb, 1));
  Tensor hull = hw * hh;

  Tensor iou_t = inter / uni;
  return iou_t - (hull - uni) / hull;
}

}  // namespace cdet
