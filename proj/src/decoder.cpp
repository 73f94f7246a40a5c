#include "cdet/decoder.hpp"

#include <stdexcept>

namespace cdet {

VisualDecoder::VisualDecoder(ParamStore& ps, const DecoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.n_queries <= 0 || cfg.d1 <= 0 || cfg.d2 <= 0 || cfg.layers <= 0) {
    throw std::invalid_argument("VisualDecoder: config dimensions must be positive");
  }
  // Unit-scale init: queries must start mutually distinct, or the shared
  // conditioning offset swamps their identities and none can specialize.
  queries_ = &ps.add("dec.queries",
                     Tensor::from_values({cfg.n_queries, cfg.d2},
                                         rng.normals(static_cast<size_t>(cfg.n_queries) *
                                                         static_cast<size_t>(cfg.d2),
                                                     0.0, 1.0)));
  cond_proj_ = Linear(ps, "dec.cond_proj", cfg.d1, cfg.d2, rng);
  layers_.reserve(static_cast<size_t>(cfg.layers));
  for (int i = 0; i < cfg.layers; ++i) {
    std::string base = "dec.layer" + std::to_string(i);
    Layer l;
    l.ln_self = LayerNorm(ps, base + ".ln_self", cfg.d2, cfg.use_layer_norm);
    l.ln_cross = LayerNorm(ps, base + ".ln_cross", cfg.d2, cfg.use_layer_norm);
    l.ln_ffn = LayerNorm(ps, base + ".ln_ffn", cfg.d2, cfg.use_layer_norm);
    l.self_attn = MultiHeadAttention(ps, base + ".self", cfg.d2, cfg.heads, rng);
    l.cross_attn = MultiHeadAttention(ps, base + ".cross", cfg.d2, cfg.heads, rng);
    l.fc1 = Linear(ps, base + ".fc1", cfg.d2, cfg.ffn_mult * cfg.d2, rng);
    l.fc2 = Linear(ps, base + ".fc2", cfg.ffn_mult * cfg.d2, cfg.d2, rng);
    layers_.push_back(std::move(l));
  }
  cls_ = Linear(ps, "dec.cls", cfg.d2, 2, rng);
  box1_ = Linear(ps, "dec.box1", cfg.d2, cfg.d2, rng);
  box2_ = Linear(ps, "dec.box2", cfg.d2, cfg.d2, rng);
  box3_ = Linear(ps, "dec.box3", cfg.d2, 4, rng);
}

Tensor VisualDecoder::condition_queries(const Tensor& e) const {
  if (!e.defined() || e.numel() != cfg_.d1) {
    throw std::invalid_argument("VisualDecoder: latent must have extent d1=" +
                                std::to_string(cfg_.d1));
  }
  Tensor row = e.ndim() == 2 ? e : reshape(e, {1, cfg_.d1});
  // (1, d2) offset broadcasts over the N query rows: Repeat by broadcast.
  return queries_->tensor + cond_proj_(row);
}

Tensor VisualDecoder::refine(const Tensor& cond_queries, const Tensor& c) const {
  if (cond_queries.ndim() != 2 || cond_queries.shape()[1] != cfg_.d2) {
    throw std::invalid_argument("VisualDecoder: queries must be (N, d2)");
  }
  if (c.ndim() != 2 || c.shape()[1] != cfg_.d2) {
    throw std::invalid_argument("VisualDecoder: full tokens must be (m, " +
                                std::to_string(cfg_.d2) + "), got " + shape_str(c.shape()));
  }
  Tensor x = cond_queries;
  for (const auto& l : layers_) {
    if (cfg_.query_self_attention) {
      Tensor n = l.ln_self(x);
      x = x + l.self_attn(n, n);
    }
    x = x + l.cross_attn(l.ln_cross(x), c);
    x = x + l.fc2(relu(l.fc1(l.ln_ffn(x))));
  }
  return x;
}

Tensor VisualDecoder::match_logits(const Tensor& refined) const { return cls_(refined); }

Tensor VisualDecoder::box_raw(const Tensor& refined) const {
  return box3_(relu(box2_(relu(box1_(refined)))));
}

DetectionOutput VisualDecoder::detect(const Tensor& c, const Condition& cond) const {
  Tensor refined = refine(condition_queries(cond.e), c);
  DetectionOutput out;
  out.match_logits = match_logits(refined);
  out.match_probs = softmax(out.match_logits, 1);
  out.box_params = sigmoid(box_raw(refined));
  out.condition_word = cond.word;
  out.condition_position = cond.position;
  out.boxes.reserve(static_cast<size_t>(cfg_.n_queries));
  const auto& v = out.box_params.values();
  for (int i = 0; i < cfg_.n_queries; ++i) {
    out.boxes.push_back(Box{v[static_cast<size_t>(i) * 4 + 0], v[static_cast<size_t>(i) * 4 + 1],
                            v[static_cast<size_t>(i) * 4 + 2], v[static_cast<size_t>(i) * 4 + 3]});
  }
  return out;
}

std::vector<DetectionOutput> VisualDecoder::detect_for_conditions(
    const Tensor& c, const std::vector<Condition>& conds) const {
  std::vector<DetectionOutput> out;
  out.reserve(conds.size());
  for (const auto& cond : conds) out.push_back(detect(c, cond));
  return out;
}

}  // namespace cdet
