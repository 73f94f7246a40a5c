#include "cdet/model.hpp"

#include <sstream>
#include <stdexcept>

namespace cdet {

namespace {

VisualEncoder make_encoder(ParamStore& ps, const ModelConfig& cfg, Rng& rng) {
  if (cfg.encoder.d1 != cfg.lm.d1) {
    throw std::invalid_argument("ContextDet: local token width " + std::to_string(cfg.encoder.d1) +
                                " must equal language model width " + std::to_string(cfg.lm.d1));
  }
  if (cfg.decoder.d1 != cfg.lm.d1) {
    throw std::invalid_argument("ContextDet: decoder latent width " +
                                std::to_string(cfg.decoder.d1) +
                                " must equal language model width " + std::to_string(cfg.lm.d1));
  }
  if (cfg.encoder.d2 != cfg.decoder.d2) {
    throw std::invalid_argument("ContextDet: full token width " + std::to_string(cfg.encoder.d2) +
                                " must equal decoder width " + std::to_string(cfg.decoder.d2));
  }
  return VisualEncoder(ps, cfg.encoder, rng);
}

}  // namespace

ContextDet::ContextDet(const ModelConfig& cfg, const Vocabulary& vocab, uint64_t seed)
    : cfg_(cfg), vocab_(vocab) {
  Rng rng(seed);
  encoder_ = make_encoder(params_, cfg, rng);
  lm_ = LanguageModel(params_, cfg.lm, vocab.size(), rng);
  decoder_ = VisualDecoder(params_, cfg.decoder, rng);
}

Tensor ContextDet::prefix_for(const Tensor& z, const std::vector<int>& text) const {
  return lm_.build_prefix(cfg_.use_visual_prefix ? z : Tensor{}, text);
}

int ContextDet::text_offset_for(const Tensor& z) const {
  return lm_.text_offset(cfg_.use_visual_prefix ? z : Tensor{});
}

void ContextDet::set_lm_frozen(bool frozen) {
  for (Parameter* p : params_.refs()) {
    if (p->name.rfind("lm.", 0) == 0) p->frozen = frozen;
  }
  lm_frozen_ = frozen;
}

std::string ContextDet::arch_string() const {
  std::ostringstream os;
  os << "enc:" << cfg_.encoder.image_size << "," << cfg_.encoder.patch << "," << cfg_.encoder.d
     << "," << cfg_.encoder.d1 << "," << cfg_.encoder.d2 << "," << cfg_.encoder.p << ","
     << cfg_.encoder.layers << "," << cfg_.encoder.heads << "," << cfg_.encoder.ffn_mult << ","
     << cfg_.encoder.use_layer_norm;
  os << ";lm:" << cfg_.lm.d1 << "," << cfg_.lm.layers << "," << cfg_.lm.heads << ","
     << cfg_.lm.ffn_mult << "," << cfg_.lm.max_positions << "," << cfg_.lm.use_layer_norm;
  os << ";dec:" << cfg_.decoder.n_queries << "," << cfg_.decoder.d1 << "," << cfg_.decoder.d2
     << "," << cfg_.decoder.layers << "," << cfg_.decoder.heads << "," << cfg_.decoder.ffn_mult
     << "," << cfg_.decoder.query_self_attention << "," << cfg_.decoder.use_layer_norm;
  os << ";zprefix:" << cfg_.use_visual_prefix;
  os << ";vocab:" << vocab_.size();
  return os.str();
}

ModelConfig ContextDet::parse_arch(const std::string& arch) {
  auto fail = [&]() -> std::runtime_error {
    return std::runtime_error("model: malformed architecture string '" + arch + "'");
  };
  auto section = [&](const std::string& tag) {
    size_t at = arch.find(tag + ":");
    if (at != 0 && (at == std::string::npos || arch[at - 1] != ';')) throw fail();
    size_t begin = at + tag.size() + 1;
    size_t end = arch.find(';', begin);
    return arch.substr(begin, end == std::string::npos ? end : end - begin);
  };
  auto ints = [&](const std::string& body, size_t want) {
    std::vector<int> out;
    size_t pos = 0;
    while (pos <= body.size()) {
      size_t comma = body.find(',', pos);
      std::string piece = body.substr(pos, comma == std::string::npos ? comma : comma - pos);
      try {
        size_t used = 0;
        out.push_back(std::stoi(piece, &used));
        if (used != piece.size()) throw fail();
      } catch (const std::exception&) {
        throw fail();
      }
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (out.size() != want) throw fail();
    return out;
  };

  ModelConfig cfg;
  auto e = ints(section("enc"), 10);
  cfg.encoder.image_size = e[0];
  cfg.encoder.patch = e[1];
  cfg.encoder.d = e[2];
  cfg.encoder.d1 = e[3];
  cfg.encoder.d2 = e[4];
  cfg.encoder.p = e[5];
  cfg.encoder.layers = e[6];
  cfg.encoder.heads = e[7];
  cfg.encoder.ffn_mult = e[8];
  cfg.encoder.use_layer_norm = e[9] != 0;
  auto l = ints(section("lm"), 6);
  cfg.lm.d1 = l[0];
  cfg.lm.layers = l[1];
  cfg.lm.heads = l[2];
  cfg.lm.ffn_mult = l[3];
  cfg.lm.max_positions = l[4];
  cfg.lm.use_layer_norm = l[5] != 0;
  auto d = ints(section("dec"), 8);
  cfg.decoder.n_queries = d[0];
  cfg.decoder.d1 = d[1];
  cfg.decoder.d2 = d[2];
  cfg.decoder.layers = d[3];
  cfg.decoder.heads = d[4];
  cfg.decoder.ffn_mult = d[5];
  cfg.decoder.query_self_attention = d[6] != 0;
  cfg.decoder.use_layer_norm = d[7] != 0;
  cfg.use_visual_prefix = ints(section("zprefix"), 1)[0] != 0;
  return cfg;
}

}  // namespace cdet
