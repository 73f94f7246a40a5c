// Small trainable layers shared by the encoder, language model, and decoder.
//
// Sequences are row-major: a length-n sequence of width-d states is (n, d).
// Layers register their parameters in a ParamStore at construction; the
// store owns them and hands out stable pointers, so optimizers and
// checkpoints see one flat named list in registration order.
#pragma once

#include <deque>
#include <string>
#include <vector>

#include "cdet/optimizer.hpp"
#include "cdet/rng.hpp"
#include "cdet/tensor.hpp"

namespace cdet {

class ParamStore {
 public:
  ParamStore() = default;
  // Modules cache Parameter pointers into the store; copies would dangle.
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter& add(const std::string& name, Tensor t);
  ParamRefs refs();
  Parameter* find(const std::string& name);
  size_t size() const { return params_.size(); }

 private:
  std::deque<Parameter> params_;  // deque keeps addresses stable
};

// Weights ~ N(0, init_std), biases zero.
struct Linear {
  Parameter* w = nullptr;  // (in, out)
  Parameter* b = nullptr;  // (1, out); null when bias is off

  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng, bool bias = true,
         double init_std = 0.02);
  Tensor operator()(const Tensor& x) const;  // (..., in) -> (..., out)
};

// Normalizes the last axis. Disabled instances pass input through, which
// gives tests a way to build exactly solvable configurations.
struct LayerNorm {
  Parameter* gamma = nullptr;  // (1, d)
  Parameter* beta = nullptr;   // (1, d)
  bool enabled = true;
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& name, int d, bool enabled_flag = true);
  Tensor operator()(const Tensor& x) const;
};

// Token table lookup; rows are embeddings.
struct Embedding {
  Parameter* table = nullptr;  // (count, d)

  Embedding() = default;
  Embedding(ParamStore& ps, const std::string& name, int count, int d, Rng& rng,
            double init_std = 0.02);
  Tensor operator()(const std::vector<int>& ids) const;
};

struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int heads = 1;
  int d = 0;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& ps, const std::string& name, int d_model, int n_heads, Rng& rng);
  // q_in (n_q, d), kv_in (n_kv, d) -> (n_q, d); mask broadcasts over heads.
  Tensor operator()(const Tensor& q_in, const Tensor& kv_in) const;
  Tensor operator()(const Tensor& q_in, const Tensor& kv_in, const Tensor& additive_mask) const;
};

// Pre-norm self-attention block: x + attn(ln(x)), then x + ffn(ln(x)).
struct TransformerBlock {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  Linear fc1, fc2;

  TransformerBlock() = default;
  TransformerBlock(ParamStore& ps, const std::string& name, int d_model, int n_heads,
                   int ffn_hidden, Rng& rng, bool use_layer_norm = true);
  Tensor operator()(const Tensor& x) const;
  Tensor operator()(const Tensor& x, const Tensor& additive_mask) const;
};

// (n, n) additive mask: 0 on and below the diagonal, -1e9 above.
Tensor causal_mask(int n);

}  // namespace cdet
