// Planar float images, primitive shape rendering, and PPM persistence.
#pragma once

#include <string>
#include <vector>

#include "cdet/box.hpp"

namespace cdet {

struct RGB {
  float r = 0, g = 0, b = 0;
  bool operator==(const RGB&) const = default;
};

// Channel-major (3,H,W), values in [0,1].
struct Image {
  int height = 0, width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, RGB fill);

  float& at(int c, int y, int x) {
    return data[static_cast<size_t>((c * height + y) * width + x)];
  }
  float at(int c, int y, int x) const {
    return data[static_cast<size_t>((c * height + y) * width + x)];
  }
  RGB pixel(int y, int x) const { return {at(0, y, x), at(1, y, x), at(2, y, x)}; }
  void set_pixel(int y, int x, RGB c) {
    at(0, y, x) = c.r;
    at(1, y, x) = c.g;
    at(2, y, x) = c.b;
  }
};

enum class ShapeKind { square, disc, triangle, cross };

// Inclusive pixel bounds of painted area.
struct PixelBounds {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;
  bool empty() const { return x1 < x0 || y1 < y0; }
};

// Paints the shape centered at (cx,cy) with half-extent `s`, returning the
// bounds actually painted. Pixels falling outside the canvas are dropped.
PixelBounds draw_shape(Image& img, ShapeKind kind, RGB color, int cx, int cy, int s);

// Normalized corner box from inclusive pixel bounds (exclusive right/bottom).
Box bounds_to_box(const PixelBounds& b, int width, int height);

// Tight bounds of pixels matching `color` exactly.
PixelBounds tight_bounds(const Image& img, RGB color);

Image hflip(const Image& img);
Box hflip(const Box& b);  // mirror about the vertical axis, normalized coords

// Binary 8-bit PPM (P6). Round trips values quantized to 1/255 steps.
void save_ppm(const Image& img, const std::string& path);
Image load_ppm(const std::string& path);

}  // namespace cdet
