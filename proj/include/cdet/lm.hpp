// Causal language model over a multimodal prefix.
//
// The prefix is [projected local visual tokens; embedded text]; an
// undefined z drops the visual segment (ablation mode). States are read in
// two conventions, both exposed on purpose:
//   - a token present in the input owns the state at its own position
//     (cloze masks, prompt words used as detection conditions);
//   - a generated token is conditioned on the state that emitted it, the
//     output at the previous position.
#pragma once

#include <vector>

#include "cdet/nn.hpp"
#include "cdet/vocab.hpp"

namespace cdet {

struct LmConfig {
  int d1 = 64;
  int layers = 2;
  int heads = 4;
  int ffn_mult = 2;
  int max_positions = 96;
  bool use_layer_norm = true;
};

class LanguageModel {
 public:
  LanguageModel() = default;
  LanguageModel(ParamStore& ps, const LmConfig& cfg, int vocab_size, Rng& rng);

  // Token rows plus learned position rows starting at position_offset.
  Tensor embed_tokens(const std::vector<int>& ids, int position_offset) const;

  // z: (p, d1) local tokens, or a default-constructed Tensor to ablate.
  Tensor build_prefix(const Tensor& z, const std::vector<int>& text) const;

  // Causal self-attention stack; (n, d1) in, (n, d1) final states out.
  Tensor states(const Tensor& rows) const;

  Tensor vocab_logits(const Tensor& states) const;  // (n, d1) -> (n, V)
  Tensor noun_logits(const Tensor& states) const;   // (n, d1) -> (n, 1)

  struct Step {
    std::vector<double> dist;  // full-vocabulary probabilities, sums to 1
    Tensor e;                  // (1, d1) state behind the distribution
    double noun_prob = 0;
  };
  // Predicts the continuation after the last row.
  Step decode_step(const Tensor& rows) const;

  struct DecodeResult {
    std::vector<int> ids;  // emitted tokens, [EOS] excluded
    bool hit_eos = false;
    std::vector<Tensor> e;                   // per emitted token, (1, d1)
    std::vector<std::vector<double>> dist;   // per emitted token
    std::vector<double> noun_probs;          // per emitted token
  };
  // Greedy decoding from the prefix; stops on [EOS] or max_len tokens.
  DecodeResult generate(const Tensor& prefix, int max_len, const Vocabulary& vocab) const;

  struct MaskReadout {
    int position = 0;               // index into the masked sequence
    std::vector<int> top_ids;       // best noun-flagged ids, descending
    std::vector<double> top_probs;  // renormalized over noun tokens
    Tensor e;                       // (1, d1) state at the mask position
  };
  // States over [z; masked text]; per-mask noun-restricted readout.
  std::vector<MaskReadout> cloze_fill(const Tensor& z, const std::vector<int>& masked_ids,
                                      const Vocabulary& vocab, int k) const;

  const LmConfig& config() const { return cfg_; }
  int vocab_size() const { return vocab_size_; }
  // Where the text segment starts inside a prefix built with this z.
  int text_offset(const Tensor& z) const { return z.defined() ? z.shape()[0] : 0; }

 private:
  LmConfig cfg_;
  int vocab_size_ = 0;
  Embedding tok_;     // (V, d1)
  Embedding pos_;     // (max_positions, d1)
  Linear z_proj_;     // (d1, d1)
  std::vector<TransformerBlock> blocks_;
  LayerNorm final_ln_;
  Linear vocab_head_;  // (d1, V)
  Linear noun_head_;   // (d1, 1)
};

// Positions whose noun probability clears the threshold.
std::vector<int> noun_positions(const LanguageModel::DecodeResult& r, double threshold = 0.5);

}  // namespace cdet
