#include "cdet/nn.hpp"

#include <stdexcept>

namespace cdet {

Parameter& ParamStore::add(const std::string& name, Tensor t) {
  if (find(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
  t.set_requires_grad(true);
  params_.push_back(Parameter{name, std::move(t), false});
  return params_.back();
}

ParamRefs ParamStore::refs() {
  ParamRefs out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

Parameter* ParamStore::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

Linear::Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng, bool bias,
               double init_std) {
  w = &ps.add(name + ".w",
              Tensor::from_values({in, out},
                                  rng.normals(static_cast<size_t>(in) * static_cast<size_t>(out),
                                              0.0, init_std)));
  if (bias) b = &ps.add(name + ".b", Tensor::zeros({1, out}));
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, w->tensor);
  if (b) y = y + b->tensor;
  return y;
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& name, int d, bool enabled_flag)
    : enabled(enabled_flag) {
  gamma = &ps.add(name + ".gamma", Tensor::full({1, d}, 1.0));
  beta = &ps.add(name + ".beta", Tensor::zeros({1, d}));
}

Tensor LayerNorm::operator()(const Tensor& x) const {
  if (!enabled) return x;
  Tensor mu = mean_axis(x, -1);
  Tensor xc = x - mu;
  Tensor var = mean_axis(xc * xc, -1);
  Tensor xn = xc / sqrt(add_scalar(var, eps));
  return xn * gamma->tensor + beta->tensor;
}

Embedding::Embedding(ParamStore& ps, const std::string& name, int count, int d, Rng& rng,
                     double init_std) {
  table = &ps.add(name, Tensor::from_values(
                            {count, d},
                            rng.normals(static_cast<size_t>(count) * static_cast<size_t>(d), 0.0,
                                        init_std)));
}

Tensor Embedding::operator()(const std::vector<int>& ids) const {
  return take_rows(table->tensor, ids);
}

MultiHeadAttention::MultiHeadAttention(ParamStore& ps, const std::string& name, int d_model,
                                       int n_heads, Rng& rng)
    : heads(n_heads), d(d_model) {
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("MultiHeadAttention: d_model " + std::to_string(d_model) +
                                " not divisible by heads " + std::to_string(n_heads));
  }
  wq = Linear(ps, name + ".wq", d_model, d_model, rng);
  wk = Linear(ps, name + ".wk", d_model, d_model, rng);
  wv = Linear(ps, name + ".wv", d_model, d_model, rng);
  wo = Linear(ps, name + ".wo", d_model, d_model, rng);
}

namespace {

// (n, d) -> (heads, n, d/heads)
Tensor split_heads(const Tensor& x, int heads) {
  int n = x.shape()[0];
  int d = x.shape()[1];
  return transpose(reshape(x, {n, heads, d / heads}), 0, 1);
}

Tensor merge_heads(const Tensor& x) {
  int heads = x.shape()[0], n = x.shape()[1], dh = x.shape()[2];
  return reshape(transpose(x, 0, 1), {n, heads * dh});
}

}  // namespace

Tensor MultiHeadAttention::operator()(const Tensor& q_in, const Tensor& kv_in) const {
  Tensor q = split_heads(wq(q_in), heads);
  Tensor k = split_heads(wk(kv_in), heads);
  Tensor v = split_heads(wv(kv_in), heads);
  return wo(merge_heads(attention(q, k, v)));
}

Tensor MultiHeadAttention::operator()(const Tensor& q_in, const Tensor& kv_in,
                                      const Tensor& additive_mask) const {
  Tensor q = split_heads(wq(q_in), heads);
  Tensor k = split_heads(wk(kv_in), heads);
  Tensor v = split_heads(wv(kv_in), heads);
  return wo(merge_heads(attention(q, k, v, additive_mask)));
}

TransformerBlock::TransformerBlock(ParamStore& ps, const std::string& name, int d_model,
                                   int n_heads, int ffn_hidden, Rng& rng, bool use_layer_norm) {
  ln1 = LayerNorm(ps, name + ".ln1", d_model, use_layer_norm);
  ln2 = LayerNorm(ps, name + ".ln2", d_model, use_layer_norm);
  attn = MultiHeadAttention(ps, name + ".attn", d_model, n_heads, rng);
  fc1 = Linear(ps, name + ".fc1", d_model, ffn_hidden, rng);
  fc2 = Linear(ps, name + ".fc2", ffn_hidden, d_model, rng);
}

Tensor TransformerBlock::operator()(const Tensor& x) const {
  Tensor n1 = ln1(x);
  Tensor h = x + attn(n1, n1);
  return h + fc2(relu(fc1(ln2(h))));
}

Tensor TransformerBlock::operator()(const Tensor& x, const Tensor& additive_mask) const {
  Tensor n1 = ln1(x);
  Tensor h = x + attn(n1, n1, additive_mask);
  return h + fc2(relu(fc1(ln2(h))));
}

Tensor causal_mask(int n) {
  Tensor m = Tensor::zeros({n, n});
  auto& vals = m.values_mut();
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) vals[static_cast<size_t>(i * n + j)] = -1e9;
  }
  return m;
}

}  // namespace cdet
