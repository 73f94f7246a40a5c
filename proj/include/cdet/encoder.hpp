// Visual side of the pipeline: patch features, pooled local tokens for the
// language model, and transformer-refined full tokens for the box decoder.
#pragma once

#include "cdet/nn.hpp"
#include "cdet/raster.hpp"

namespace cdet {

struct EncoderConfig {
  int image_size = 64;
  int patch = 8;  // image_size must be divisible by this
  int d = 32;     // patch feature width
  int d1 = 64;    // local token width (language model width)
  int d2 = 64;    // full token width (box decoder width)
  int p = 9;      // pooled token count; must be a perfect square
  int layers = 6;
  int heads = 4;
  int ffn_mult = 2;
  bool use_layer_norm = true;
};

class VisualEncoder {
 public:
  VisualEncoder() = default;
  VisualEncoder(ParamStore& ps, const EncoderConfig& cfg, Rng& rng);

  // Raster -> (m, d) per-patch features, rows in row-major grid order.
  // Purely per patch: a linear map of each patch's pixels.
  Tensor extract_features(const Image& img) const;

  // (m, d) -> (p, d1): adaptive average pool to a sqrt(p) grid, then project.
  Tensor local_tokens(const Tensor& v) const;

  // (m, d) -> (m, d2): project, add learned 2-D position embeddings, run
  // the self-attention stack.
  Tensor full_tokens(const Tensor& v) const;

  const EncoderConfig& config() const { return cfg_; }
  int grid() const { return cfg_.image_size / cfg_.patch; }
  int m() const { return grid() * grid(); }

 private:
  EncoderConfig cfg_;
  Linear patch_embed_;  // (3*patch*patch, d)
  Linear local_proj_;   // (d, d1)
  Linear full_proj_;    // (d, d2)
  Embedding pos_;       // (m, d2)
  std::vector<TransformerBlock> blocks_;
};

}  // namespace cdet
