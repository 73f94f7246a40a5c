#include "cdet/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace cdet {

Image::Image(int h, int w, RGB fill) : height(h), width(w) {
  if (h <= 0 || w <= 0) throw std::invalid_argument("Image: non-positive size");
  data.resize(static_cast<size_t>(3 * h * w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) set_pixel(y, x, fill);
  }
}

namespace {

bool inside_shape(ShapeKind kind, int dx, int dy, int s) {
  switch (kind) {
    case ShapeKind::square:
      return std::abs(dx) <= s && std::abs(dy) <= s;
    case ShapeKind::disc:
      return dx * dx + dy * dy <= s * s;
    case ShapeKind::triangle: {
      // Apex at the top; width grows linearly to the base.
      int r = dy + s;  // 0 at apex row, 2s at base row
      if (r < 0 || r > 2 * s) return false;
      return 2 * std::abs(dx) <= r;
    }
    case ShapeKind::cross: {
      if (std::abs(dx) > s || std::abs(dy) > s) return false;
      int arm = std::max(1, s / 3);
      return std::abs(dx) <= arm || std::abs(dy) <= arm;
    }
  }
  return false;
}

}  // namespace

PixelBounds draw_shape(Image& img, ShapeKind kind, RGB color, int cx, int cy, int s) {
  if (s <= 0) throw std::invalid_argument("draw_shape: half-extent must be positive");
  PixelBounds b{img.width, img.height, -1, -1};
  for (int dy = -s; dy <= s; ++dy) {
    int y = cy + dy;
    if (y < 0 || y >= img.height) continue;
    for (int dx = -s; dx <= s; ++dx) {
      int x = cx + dx;
      if (x < 0 || x >= img.width) continue;
      if (!inside_shape(kind, dx, dy, s)) continue;
      img.set_pixel(y, x, color);
      b.x0 = std::min(b.x0, x);
      b.y0 = std::min(b.y0, y);
      b.x1 = std::max(b.x1, x);
      b.y1 = std::max(b.y1, y);
    }
  }
  return b;
}

Box bounds_to_box(const PixelBounds& b, int width, int height) {
  if (b.empty()) throw std::invalid_argument("bounds_to_box: empty bounds");
  return Box::from_corners(static_cast<double>(b.x0) / width, static_cast<double>(b.y0) / height,
                           static_cast<double>(b.x1 + 1) / width,
                           static_cast<double>(b.y1 + 1) / height);
}

PixelBounds tight_bounds(const Image& img, RGB color) {
  PixelBounds b{img.width, img.height, -1, -1};
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (img.pixel(y, x) == color) {
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x);
        b.y1 = std::max(b.y1, y);
      }
    }
  }
  return b;
}

Image hflip(const Image& img) {
  Image out = img;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
      }
    }
  }
  return out;
}

Box hflip(const Box& b) { return Box{1.0 - b.cx, b.cy, b.w, b.h}; }

void save_ppm(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_ppm: cannot open " + path);
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        f.put(static_cast<char>(std::lround(v * 255.0f)));
      }
    }
  }
  if (!f) throw std::runtime_error("save_ppm: short write to " + path);
}

Image load_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_ppm: cannot open " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || w <= 0 || h <= 0) {
    throw std::runtime_error("load_ppm: unsupported header in " + path);
  }
  f.get();  // single whitespace after header
  Image img(h, w, RGB{});
  std::vector<char> buf(static_cast<size_t>(3 * w * h));
  f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (f.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw std::runtime_error("load_ppm: truncated pixel data in " + path);
  }
  size_t i = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(c, y, x) = static_cast<float>(static_cast<unsigned char>(buf[i++])) / 255.0f;
      }
    }
  }
  return img;
}

}  // namespace cdet
