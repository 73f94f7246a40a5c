// Conditional visual decoder: a latent word embedding steers N object
// queries, which cross-attend to the full visual tokens and land on
// per-query (match probability, box) pairs.
#pragma once

#include <string>
#include <vector>

#include "cdet/box.hpp"
#include "cdet/nn.hpp"

namespace cdet {

struct DecoderConfig {
  int n_queries = 20;
  int d1 = 64;  // latent width coming out of the language model
  int d2 = 64;  // decoder width; full tokens must arrive at this width
  int layers = 6;
  int heads = 4;
  int ffn_mult = 2;
  bool query_self_attention = true;
  bool use_layer_norm = true;
};

// What produced the conditioning latent: the object word plus where it sat
// (mask ordinal for cloze, token position for prompts and generations).
struct Condition {
  std::string word;
  int position = -1;
  Tensor e;  // (1, d1)
};

struct DetectionOutput {
  Tensor match_logits;  // (N, 2) pre-softmax, for stable training losses
  Tensor match_probs;   // (N, 2) softmax rows, column 0 = matched
  Tensor box_params;    // (N, 4) sigmoid center-size, stays in the graph
  std::vector<Box> boxes;  // detached view of box_params
  std::string condition_word;
  int condition_position = -1;
};

class VisualDecoder {
 public:
  VisualDecoder() = default;
  VisualDecoder(ParamStore& ps, const DecoderConfig& cfg, Rng& rng);

  // q + Linear(Repeat(e)): every query row gets the same projected offset.
  Tensor condition_queries(const Tensor& e) const;

  // Runs the layer stack; c (m, d2) supplies keys and values throughout.
  Tensor refine(const Tensor& cond_queries, const Tensor& c) const;

  Tensor match_logits(const Tensor& refined) const;  // (N, 2)
  Tensor box_raw(const Tensor& refined) const;       // (N, 4) pre-sigmoid

  // Full pass for one condition.
  DetectionOutput detect(const Tensor& c, const Condition& cond) const;
  // Independent passes, outputs ordered as the inputs.
  std::vector<DetectionOutput> detect_for_conditions(const Tensor& c,
                                                     const std::vector<Condition>& conds) const;

  const Tensor& queries() const { return queries_->tensor; }
  const DecoderConfig& config() const { return cfg_; }

 private:
  struct Layer {
    LayerNorm ln_self, ln_cross, ln_ffn;
    MultiHeadAttention self_attn, cross_attn;
    Linear fc1, fc2;
  };

  DecoderConfig cfg_;
  Parameter* queries_ = nullptr;  // (N, d2)
  Linear cond_proj_;              // (d1, d2)
  std::vector<Layer> layers_;
  Linear cls_;                    // (d2, 2)
  Linear box1_, box2_, box3_;     // 3-layer box head
};

}  // namespace cdet
