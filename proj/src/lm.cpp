#include "cdet/lm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cdet {

namespace {

std::vector<TransformerBlock> make_blocks(ParamStore& ps, const LmConfig& cfg, Rng& rng) {
  std::vector<TransformerBlock> blocks;
  blocks.reserve(static_cast<size_t>(cfg.layers));
  for (int i = 0; i < cfg.layers; ++i) {
    blocks.emplace_back(ps, "lm.block" + std::to_string(i), cfg.d1, cfg.heads,
                        cfg.ffn_mult * cfg.d1, rng, cfg.use_layer_norm);
  }
  return blocks;
}

}  // namespace

LanguageModel::LanguageModel(ParamStore& ps, const LmConfig& cfg, int vocab_size, Rng& rng)
    : cfg_(cfg),
      vocab_size_(vocab_size),
      tok_(ps, "lm.tok_emb", vocab_size, cfg.d1, rng),
      pos_(ps, "lm.pos_emb", cfg.max_positions, cfg.d1, rng),
      z_proj_(ps, "lm.z_proj", cfg.d1, cfg.d1, rng),
      blocks_(make_blocks(ps, cfg, rng)),
      final_ln_(ps, "lm.final_ln", cfg.d1, cfg.use_layer_norm),
      vocab_head_(ps, "lm.vocab_head", cfg.d1, vocab_size, rng),
      noun_head_(ps, "lm.noun_head", cfg.d1, 1, rng) {
  if (cfg.d1 <= 0 || cfg.layers <= 0 || cfg.max_positions <= 0) {
    throw std::invalid_argument("LanguageModel: config dimensions must be positive");
  }
  if (vocab_size <= 0) throw std::invalid_argument("LanguageModel: vocab_size must be positive");
}

Tensor LanguageModel::embed_tokens(const std::vector<int>& ids, int position_offset) const {
  if (ids.empty()) throw std::invalid_argument("LanguageModel: cannot embed an empty id list");
  for (int id : ids) {
    if (id < 0 || id >= vocab_size_) {
      throw std::out_of_range("LanguageModel: token id " + std::to_string(id) +
                              " outside vocabulary of size " + std::to_string(vocab_size_));
    }
  }
  int n = static_cast<int>(ids.size());
  if (position_offset < 0 || position_offset + n > cfg_.max_positions) {
    throw std::invalid_argument("LanguageModel: sequence exceeds max positions (" +
                                std::to_string(position_offset + n) + " > " +
                                std::to_string(cfg_.max_positions) + ")");
  }
  std::vector<int> pos_idx(ids.size());
  for (int i = 0; i < n; ++i) pos_idx[static_cast<size_t>(i)] = position_offset + i;
  return tok_(ids) + pos_(pos_idx);
}

Tensor LanguageModel::build_prefix(const Tensor& z, const std::vector<int>& text) const {
  if (!z.defined()) return embed_tokens(text, 0);
  if (z.ndim() != 2 || z.shape()[1] != cfg_.d1) {
    throw std::invalid_argument("LanguageModel: z must be (p, " + std::to_string(cfg_.d1) +
                                "), got " + shape_str(z.shape()));
  }
  int p = z.shape()[0];
  if (p >= cfg_.max_positions) {
    throw std::invalid_argument("LanguageModel: visual prefix exceeds max positions");
  }
  std::vector<int> zpos(static_cast<size_t>(p));
  for (int i = 0; i < p; ++i) zpos[static_cast<size_t>(i)] = i;
  Tensor zrows = z_proj_(z) + pos_(zpos);
  if (text.empty()) return zrows;
  return concat({zrows, embed_tokens(text, p)}, 0);
}

Tensor LanguageModel::states(const Tensor& rows) const {
  if (!rows.defined() || rows.ndim() != 2 || rows.shape()[1] != cfg_.d1) {
    throw std::invalid_argument("LanguageModel: states expects (n, d1) rows");
  }
  int n = rows.shape()[0];
  if (n == 0) throw std::invalid_argument("LanguageModel: empty context");
  if (n > cfg_.max_positions) {
    throw std::invalid_argument("LanguageModel: context exceeds max positions");
  }
  Tensor mask = causal_mask(n);
  Tensor h = rows;
  for (const auto& b : blocks_) h = b(h, mask);
  return final_ln_(h);
}

Tensor LanguageModel::vocab_logits(const Tensor& s) const { return vocab_head_(s); }

Tensor LanguageModel::noun_logits(const Tensor& s) const { return noun_head_(s); }

LanguageModel::Step LanguageModel::decode_step(const Tensor& rows) const {
  NoGradGuard ng;
  Tensor s = states(rows);
  int n = s.shape()[0];
  Tensor e = slice(s, 0, n - 1, n);
  Tensor probs = softmax(vocab_logits(e), 1);
  Step step;
  step.dist = probs.values();
  step.e = e;
  step.noun_prob = sigmoid(noun_logits(e)).item();
  return step;
}

LanguageModel::DecodeResult LanguageModel::generate(const Tensor& prefix, int max_len,
                                                    const Vocabulary& vocab) const {
  if (max_len < 0) throw std::invalid_argument("LanguageModel: max_len must be non-negative");
  NoGradGuard ng;
  DecodeResult out;
  Tensor rows = prefix;
  for (int t = 0; t < max_len; ++t) {
    if (rows.shape()[0] >= cfg_.max_positions) break;
    Step step = decode_step(rows);
    int best = 0;
    for (int i = 1; i < vocab_size_; ++i) {
      if (step.dist[static_cast<size_t>(i)] > step.dist[static_cast<size_t>(best)]) best = i;
    }
    if (best == vocab.eos_id()) {
      out.hit_eos = true;
      break;
    }
    out.ids.push_back(best);
    out.e.push_back(step.e);
    out.dist.push_back(std::move(step.dist));
    out.noun_probs.push_back(step.noun_prob);
    rows = concat({rows, embed_tokens({best}, rows.shape()[0])}, 0);
  }
  return out;
}

std::vector<LanguageModel::MaskReadout> LanguageModel::cloze_fill(
    const Tensor& z, const std::vector<int>& masked_ids, const Vocabulary& vocab, int k) const {
  if (k <= 0) throw std::invalid_argument("LanguageModel: cloze_fill needs k >= 1");
  std::vector<int> mask_pos;
  for (size_t i = 0; i < masked_ids.size(); ++i) {
    if (masked_ids[i] == vocab.mask_id()) mask_pos.push_back(static_cast<int>(i));
  }
  if (mask_pos.empty()) {
    throw std::invalid_argument("LanguageModel: cloze_fill got a sequence without [MASK]");
  }
  std::vector<int> nouns = vocab.noun_ids();
  if (nouns.empty()) throw std::invalid_argument("LanguageModel: vocabulary has no noun tokens");

  NoGradGuard ng;
  Tensor s = states(build_prefix(z, masked_ids));
  int offset = text_offset(z);
  std::vector<MaskReadout> out;
  out.reserve(mask_pos.size());
  for (int p : mask_pos) {
    Tensor e = slice(s, 0, offset + p, offset + p + 1);
    std::vector<double> probs = softmax(vocab_logits(e), 1).values();
    // Restrict to noun tokens and renormalize.
    std::vector<std::pair<double, int>> ranked;
    double total = 0;
    for (int id : nouns) {
      double pr = probs[static_cast<size_t>(id)];
      ranked.emplace_back(pr, id);
      total += pr;
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    MaskReadout r;
    r.position = p;
    int take = std::min<int>(k, static_cast<int>(ranked.size()));
    for (int i = 0; i < take; ++i) {
      r.top_ids.push_back(ranked[static_cast<size_t>(i)].second);
      r.top_probs.push_back(ranked[static_cast<size_t>(i)].first / total);
    }
    r.e = e;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<int> noun_positions(const LanguageModel::DecodeResult& r, double threshold) {
  std::vector<int> out;
  for (size_t i = 0; i < r.noun_probs.size(); ++i) {
    if (r.noun_probs[i] >= threshold) out.push_back(static_cast<int>(i));
  }
  return out;
}

}  // namespace cdet
