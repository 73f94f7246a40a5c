#include "cdet/encoder.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cdet {

namespace {

int isqrt_exact(int p, const char* what) {
  int r = static_cast<int>(std::lround(std::sqrt(static_cast<double>(p))));
  if (r * r != p) {
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(p) +
                                " is not a perfect square");
  }
  return r;
}

}  // namespace

VisualEncoder::VisualEncoder(ParamStore& ps, const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.image_size % cfg.patch != 0) {
    throw std::invalid_argument("VisualEncoder: image size " + std::to_string(cfg.image_size) +
                                " not divisible by patch " + std::to_string(cfg.patch));
  }
  int g = isqrt_exact(cfg.p, "VisualEncoder: pooled token count");
  if (g > grid()) {
    throw std::invalid_argument("VisualEncoder: pooling grid exceeds the feature grid");
  }
  patch_embed_ = Linear(ps, "enc.patch", 3 * cfg.patch * cfg.patch, cfg.d, rng);
  local_proj_ = Linear(ps, "enc.local", cfg.d, cfg.d1, rng);
  full_proj_ = Linear(ps, "enc.full", cfg.d, cfg.d2, rng);
  pos_ = Embedding(ps, "enc.pos", m(), cfg.d2, rng);
  for (int i = 0; i < cfg.layers; ++i) {
    blocks_.emplace_back(ps, "enc.block" + std::to_string(i), cfg.d2, cfg.heads,
                         cfg.d2 * cfg.ffn_mult, rng, cfg.use_layer_norm);
  }
}

Tensor VisualEncoder::extract_features(const Image& img) const {
  if (img.height != cfg_.image_size || img.width != cfg_.image_size) {
    throw std::invalid_argument("extract_features: expected " + std::to_string(cfg_.image_size) +
                                "x" + std::to_string(cfg_.image_size) + " raster, got " +
                                std::to_string(img.height) + "x" + std::to_string(img.width));
  }
  int s = cfg_.patch;
  int g = grid();
  std::vector<double> pixels;
  pixels.reserve(static_cast<size_t>(m()) * 3 * s * s);
  for (int gy = 0; gy < g; ++gy) {
    for (int gx = 0; gx < g; ++gx) {
      for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < s; ++y) {
          for (int x = 0; x < s; ++x) {
            pixels.push_back(img.at(c, gy * s + y, gx * s + x));
          }
        }
      }
    }
  }
  Tensor patches = Tensor::from_values({m(), 3 * s * s}, std::move(pixels));
  return patch_embed_(patches);
}

Tensor VisualEncoder::local_tokens(const Tensor& v) const {
  if (v.ndim() != 2 || v.shape()[0] != m() || v.shape()[1] != cfg_.d) {
    throw std::invalid_argument("local_tokens: expected (" + std::to_string(m()) + "," +
                                std::to_string(cfg_.d) + ") features, got " + shape_str(v.shape()));
  }
  int g = grid();
  int q = isqrt_exact(cfg_.p, "local_tokens");
  std::vector<Tensor> bins;
  bins.reserve(static_cast<size_t>(cfg_.p));
  for (int bi = 0; bi < q; ++bi) {
    int y0 = bi * g / q, y1 = (bi + 1) * g / q;
    for (int bj = 0; bj < q; ++bj) {
      int x0 = bj * g / q, x1 = (bj + 1) * g / q;
      std::vector<int> idx;
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) idx.push_back(y * g + x);
      }
      bins.push_back(mean_axis(take_rows(v, idx), 0));
    }
  }
  return local_proj_(concat(bins, 0));
}

Tensor VisualEncoder::full_tokens(const Tensor& v) const {
  if (v.ndim() != 2 || v.shape()[0] != m() || v.shape()[1] != cfg_.d) {
    throw std::invalid_argument("full_tokens: expected (" + std::to_string(m()) + "," +
                                std::to_string(cfg_.d) + ") features, got " + shape_str(v.shape()));
  }
  std::vector<int> all(static_cast<size_t>(m()));
  std::iota(all.begin(), all.end(), 0);
  Tensor t = full_proj_(v) + pos_(all);
  for (const auto& b : blocks_) t = b(t);
  return t;
}

}  // namespace cdet
