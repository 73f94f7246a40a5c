// Full pipeline bundle: visual encoder, causal language model, conditional
// visual decoder, one parameter store. Widths must agree where tensors flow:
// local tokens feed the language model (d_model == d1) and full tokens feed
// decoder cross-attention (d_model == d2).
#pragma once

#include <string>

#include "cdet/decoder.hpp"
#include "cdet/encoder.hpp"
#include "cdet/lm.hpp"
#include "cdet/vocab.hpp"

namespace cdet {

struct ModelConfig {
  EncoderConfig encoder;
  LmConfig lm;
  DecoderConfig decoder;
  bool use_visual_prefix = true;  // false ablates z out of the language prefix
};

class ContextDet {
 public:
  ContextDet(const ModelConfig& cfg, const Vocabulary& vocab, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamStore& params() { return params_; }
  const VisualEncoder& encoder() const { return encoder_; }
  const LanguageModel& lm() const { return lm_; }
  const VisualDecoder& decoder() const { return decoder_; }

  // Prefix honoring the visual-ablation switch.
  Tensor prefix_for(const Tensor& z, const std::vector<int>& text) const;
  int text_offset_for(const Tensor& z) const;

  // Marks every lm.* parameter (un)frozen for the optimizer.
  void set_lm_frozen(bool frozen);
  bool lm_frozen() const { return lm_frozen_; }

  // Dimension fingerprint; checkpoints refuse to load across mismatches.
  std::string arch_string() const;

  // Inverse of arch_string minus the vocabulary size; throws on malformed
  // input. Lets a checkpoint alone reconstruct its model.
  static ModelConfig parse_arch(const std::string& arch);

 private:
  ModelConfig cfg_;
  Vocabulary vocab_;
  ParamStore params_;
  VisualEncoder encoder_;
  LanguageModel lm_;
  VisualDecoder decoder_;
  bool lm_frozen_ = false;
};

}  // namespace cdet
