#include "cdet/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace cdet {

namespace {

constexpr char kMagic[4] = {'C', 'D', 'T', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(os, bits);
}

void put_str(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_f64s(std::ostream& os, const std::vector<double>& v) {
  put_u64(os, v.size());
  for (double d : v) put_f64(os, d);
}

struct Reader {
  std::ifstream is;
  std::string path;

  explicit Reader(const std::string& p) : is(p, std::ios::binary), path(p) {
    if (!is) throw std::runtime_error("checkpoint: cannot open " + p);
  }
  void need(std::streamsize n, char* out) {
    is.read(out, n);
    if (is.gcount() != n) throw std::runtime_error("checkpoint: truncated file " + path);
  }
  uint32_t u32() {
    unsigned char b[4];
    need(4, reinterpret_cast<char*>(b));
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    unsigned char b[8];
    need(8, reinterpret_cast<char*>(b));
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string str() {
    uint64_t n = u64();
    if (n > (1ull << 32)) throw std::runtime_error("checkpoint: corrupt string length in " + path);
    std::string s(static_cast<size_t>(n), '\0');
    if (n > 0) need(static_cast<std::streamsize>(n), s.data());
    return s;
  }
  std::vector<double> f64s() {
    uint64_t n = u64();
    if (n > (1ull << 40)) throw std::runtime_error("checkpoint: corrupt buffer length in " + path);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& d : v) d = f64();
    return v;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, ContextDet& model, AdamW& opt, const Rng& rng,
                     int step) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path);

  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_str(os, model.arch_string());

  const Vocabulary& vocab = model.vocab();
  put_u64(os, static_cast<uint64_t>(vocab.size()));
  for (int i = 0; i < vocab.size(); ++i) {
    put_str(os, vocab.word_of(i));
    os.put(vocab.is_noun(i) ? '\1' : '\0');
  }

  put_u64(os, static_cast<uint64_t>(step));
  put_u64(os, rng.seed());
  put_u64(os, rng.counter());
  put_u64(os, static_cast<uint64_t>(opt.t()));

  ParamRefs refs = model.params().refs();
  put_u64(os, refs.size());
  for (const Parameter* p : refs) {
    put_str(os, p->name);
    put_f64s(os, p->tensor.values());
  }
  auto& slots = opt.slots();
  if (slots.size() != refs.size()) {
    throw std::runtime_error("checkpoint: optimizer does not cover the model parameters");
  }
  for (const auto& slot : slots) {
    put_f64s(os, slot.m);
    put_f64s(os, slot.v);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

CheckpointInfo peek_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.need(4, magic);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
  }
  uint32_t version = r.u32();
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) +
                             " in " + path);
  }
  CheckpointInfo info;
  info.arch = r.str();
  uint64_t vsize = r.u64();
  if (vsize > (1ull << 24)) throw std::runtime_error("checkpoint: corrupt vocabulary in " + path);
  for (uint64_t i = 0; i < vsize; ++i) {
    info.words.push_back(r.str());
    char flag;
    r.need(1, &flag);
    info.noun_flags.push_back(flag != '\0');
  }
  info.step = static_cast<int>(r.u64());
  return info;
}

int load_checkpoint(const std::string& path, ContextDet& model, AdamW& opt, Rng& rng) {
  Reader r(path);

  char magic[4];
  r.need(4, magic);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
  }
  uint32_t version = r.u32();
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) +
                             " in " + path);
  }
  std::string arch = r.str();
  if (arch != model.arch_string()) {
    throw std::runtime_error("checkpoint: architecture '" + arch + "' does not match model '" +
                             model.arch_string() + "'");
  }

  const Vocabulary& vocab = model.vocab();
  uint64_t vsize = r.u64();
  if (vsize != static_cast<uint64_t>(vocab.size())) {
    throw std::runtime_error("checkpoint: vocabulary size mismatch in " + path);
  }
  for (int i = 0; i < vocab.size(); ++i) {
    std::string w = r.str();
    char flag;
    r.need(1, &flag);
    if (w != vocab.word_of(i) || (flag != '\0') != vocab.is_noun(i)) {
      throw std::runtime_error("checkpoint: vocabulary word " + std::to_string(i) +
                               " mismatch in " + path);
    }
  }

  int step = static_cast<int>(r.u64());
  uint64_t seed = r.u64();
  uint64_t counter = r.u64();
  int64_t t = static_cast<int64_t>(r.u64());

  ParamRefs refs = model.params().refs();
  uint64_t pcount = r.u64();
  if (pcount != refs.size()) {
    throw std::runtime_error("checkpoint: parameter count mismatch in " + path);
  }
  for (Parameter* p : refs) {
    std::string name = r.str();
    if (name != p->name) {
      throw std::runtime_error("checkpoint: parameter '" + name + "' does not match '" + p->name +
                               "'");
    }
    std::vector<double> vals = r.f64s();
    if (vals.size() != p->tensor.values().size()) {
      throw std::runtime_error("checkpoint: parameter '" + name + "' size mismatch");
    }
    p->tensor.values_mut() = std::move(vals);
  }
  auto& slots = opt.slots();
  if (slots.size() != refs.size()) {
    throw std::runtime_error("checkpoint: optimizer does not cover the model parameters");
  }
  for (size_t i = 0; i < slots.size(); ++i) {
    std::vector<double> m = r.f64s();
    std::vector<double> v = r.f64s();
    if (m.size() != refs[i]->tensor.values().size() || v.size() != m.size()) {
      throw std::runtime_error("checkpoint: moment buffer size mismatch for '" + refs[i]->name +
                               "'");
    }
    slots[i].m = std::move(m);
    slots[i].v = std::move(v);
  }

  opt.set_t(t);
  rng.restore(seed, counter);
  return step;
}

}  // namespace cdet
