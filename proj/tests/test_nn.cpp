#include "cdet/nn.hpp"

#include <cmath>

#include "doctest.h"
#include "fd_check.hpp"

using namespace cdet;

namespace {

// Overwrites a (n,n) parameter with the identity matrix.
void set_identity(Parameter* p) {
  int n = p->tensor.shape()[0];
  REQUIRE(p->tensor.shape()[1] == n);
  auto& v = p->tensor.values_mut();
  std::fill(v.begin(), v.end(), 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i * n + i)] = 1.0;
}

void set_zero(Parameter* p) {
  auto& v = p->tensor.values_mut();
  std::fill(v.begin(), v.end(), 0.0);
}

}  // namespace

TEST_CASE("param store registration") {
  ParamStore ps;
  Rng rng(1);
  Linear l1(ps, "l1", 2, 3, rng);
  Linear l2(ps, "l2", 3, 1, rng, false);
  CHECK(ps.size() == 3);  // l1.w, l1.b, l2.w
  auto refs = ps.refs();
  CHECK(refs[0]->name == "l1.w");
  CHECK(refs[1]->name == "l1.b");
  CHECK(refs[2]->name == "l2.w");
  CHECK(ps.find("l1.b") != nullptr);
  CHECK(ps.find("nope") == nullptr);
  CHECK_THROWS(Linear(ps, "l1", 2, 2, rng));

  // Same seed, same init.
  ParamStore ps2;
  Rng rng2(1);
  Linear m1(ps2, "l1", 2, 3, rng2);
  CHECK(m1.w->tensor.values() == l1.w->tensor.values());
}

TEST_CASE("linear layer") {
  ParamStore ps;
  Rng rng(2);
  Linear lin(ps, "lin", 2, 3, rng);
  lin.w->tensor = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  lin.b->tensor = Tensor::from_values({1, 3}, {0.5, -0.5, 1.0}, true);

  Tensor x = Tensor::from_values({1, 2}, {2, 1});
  CHECK(lin(x).values() == std::vector<double>{6.5, 8.5, 13.0});

  // Leading batch dims pass through.
  Tensor xb = Tensor::from_values({2, 1, 2}, {2, 1, 0, 1});
  Tensor y = lin(xb);
  CHECK(y.shape() == Shape{2, 1, 3});
  CHECK(y.at(3) == doctest::Approx(4.5));

  auto res = testing::fd_check([&] { return sum(exp(mul_scalar(lin(x), 0.3))); }, ps.refs(), 12,
                               1e-6, 1e-4, 7);
  CHECK(res.ok());
}

TEST_CASE("layer norm normalizes rows") {
  ParamStore ps;
  Rng rng(3);
  LayerNorm ln(ps, "ln", 4);
  Tensor x = Tensor::from_values({2, 4}, {1.0, 3.0, -2.0, 6.0, 10.0, 10.5, 9.5, 10.0});
  Tensor y = ln(x);
  for (int r = 0; r < 2; ++r) {
    double mean = 0, var = 0;
    for (int c = 0; c < 4; ++c) mean += y.at(r * 4 + c);
    mean /= 4;
    for (int c = 0; c < 4; ++c) var += std::pow(y.at(r * 4 + c) - mean, 2);
    var /= 4;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps shifts variance slightly
  }

  // Scale and shift apply after normalization.
  ln.gamma->tensor.values_mut() = {2, 2, 2, 2};
  ln.beta->tensor.values_mut() = {1, 1, 1, 1};
  Tensor y2 = ln(x);
  CHECK(y2.at(0) == doctest::Approx(2 * y.at(0) + 1));

  // Disabled instance is the identity.
  LayerNorm off(ps, "off", 4, false);
  CHECK(off(x).values() == x.values());

  ln.gamma->tensor.values_mut() = {1.5, 0.5, 2.0, 1.0};
  ln.beta->tensor.values_mut() = {0.1, -0.2, 0.0, 0.3};
  auto res = testing::fd_check([&] { return sum(exp(ln(x) * Tensor::from_values({1, 4}, {0.3, -0.2, 0.1, 0.25}))); },
                               ps.refs(), 8, 1e-6, 1e-4, 9);
  // x is a constant here, so also push gradients through x itself.
  CHECK(res.ok());
  Tensor xv = Tensor::from_values({2, 4}, x.values(), true);
  backward(sum(exp(ln(xv))));
  const double h = 1e-6;
  for (size_t i = 0; i < xv.values().size(); ++i) {
    NoGradGuard ng;
    double saved = xv.values()[i];
    xv.values_mut()[i] = saved + h;
    double up = sum(exp(ln(xv))).item();
    xv.values_mut()[i] = saved - h;
    double dn = sum(exp(ln(xv))).item();
    xv.values_mut()[i] = saved;
    CHECK(xv.grad()[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-4));
  }
}

TEST_CASE("embedding rows") {
  ParamStore ps;
  Rng rng(4);
  Embedding emb(ps, "emb", 5, 3, rng);
  Tensor rows = emb({3, 0, 3});
  CHECK(rows.shape() == Shape{3, 3});
  for (int c = 0; c < 3; ++c) {
    CHECK(rows.at(c) == emb.table->tensor.at(3 * 3 + c));
    CHECK(rows.at(3 + c) == emb.table->tensor.at(c));
    CHECK(rows.at(6 + c) == emb.table->tensor.at(3 * 3 + c));
  }
}

TEST_CASE("multi-head attention") {
  SUBCASE("identity construction routes each query to itself") {
    ParamStore ps;
    Rng rng(5);
    MultiHeadAttention mha(ps, "mha", 4, 2, rng);
    set_zero(mha.wq.w);
    set_zero(mha.wq.b);
    set_zero(mha.wk.w);
    set_zero(mha.wk.b);
    set_identity(mha.wv.w);
    set_zero(mha.wv.b);
    set_identity(mha.wo.w);
    set_zero(mha.wo.b);

    Tensor x = Tensor::from_values({3, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
    // Diagonal-only mask makes the uniform scores one-hot.
    Tensor mask = Tensor::full({3, 3}, -1e9);
    for (int i = 0; i < 3; ++i) mask.values_mut()[static_cast<size_t>(i * 3 + i)] = 0.0;
    Tensor y = mha(x, x, mask);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.at(i) == doctest::Approx(x.at(i)));

    // Without the mask, zero q/k give uniform attention: every row becomes
    // the column mean.
    Tensor u = mha(x, x);
    for (int c = 0; c < 4; ++c) {
      double mean = (x.at(c) + x.at(4 + c) + x.at(8 + c)) / 3.0;
      for (int r = 0; r < 3; ++r) CHECK(u.at(r * 4 + c) == doctest::Approx(mean));
    }
  }

  SUBCASE("head count must divide width") {
    ParamStore ps;
    Rng rng(6);
    CHECK_THROWS(MultiHeadAttention(ps, "bad", 6, 4, rng));
  }

  SUBCASE("gradients flow through all projections") {
    ParamStore ps;
    Rng rng(7);
    MultiHeadAttention mha(ps, "mha", 4, 2, rng);
    Tensor q = Tensor::from_values({2, 4}, Rng(8).normals(8, 0, 0.5));
    Tensor kv = Tensor::from_values({3, 4}, Rng(9).normals(12, 0, 0.5));
    auto res = testing::fd_check([&] { return sum(exp(mul_scalar(mha(q, kv), 0.5))); },
                                 ps.refs(), 10, 1e-6, 1e-4, 10);
    CHECK(res.ok());
  }
}

TEST_CASE("causal mask and block causality") {
  Tensor m = causal_mask(3);
  CHECK(m.values() == std::vector<double>{0, -1e9, -1e9, 0, 0, -1e9, 0, 0, 0});

  ParamStore ps;
  Rng rng(11);
  TransformerBlock block(ps, "blk", 8, 2, 16, rng);
  const int n = 5;
  Tensor x = Tensor::from_values({n, 8}, Rng(12).normals(n * 8, 0, 0.7));
  Tensor mask = causal_mask(n);
  Tensor y;
  {
    NoGradGuard ng;
    y = block(x, mask);
  }
  // Perturb a later position; earlier outputs must be bit-identical.
  for (int perturbed = 1; perturbed < n; ++perturbed) {
    Tensor x2 = Tensor::from_values(x.shape(), x.values());
    for (int c = 0; c < 8; ++c) x2.values_mut()[static_cast<size_t>(perturbed * 8 + c)] += 3.7;
    NoGradGuard ng;
    Tensor y2 = block(x2, mask);
    for (int i = 0; i < perturbed; ++i) {
      for (int c = 0; c < 8; ++c) {
        REQUIRE(y2.at(i * 8 + c) == y.at(i * 8 + c));
      }
    }
  }
}

TEST_CASE("zero-contribution block is the identity") {
  ParamStore ps;
  Rng rng(13);
  TransformerBlock block(ps, "blk", 6, 2, 12, rng, false);  // layer norm off
  set_zero(block.attn.wo.w);
  set_zero(block.attn.wo.b);
  set_zero(block.fc2.w);
  set_zero(block.fc2.b);
  Tensor x = Tensor::from_values({4, 6}, Rng(14).normals(24, 0, 1.0));
  Tensor y = block(x);
  CHECK(y.values() == x.values());
}

TEST_CASE("transformer block end-to-end gradients") {
  ParamStore ps;
  Rng rng(15);
  TransformerBlock block(ps, "blk", 4, 2, 8, rng);
  Tensor x = Tensor::from_values({3, 4}, Rng(16).normals(12, 0, 0.5));
  Tensor mask = causal_mask(3);
  auto res = testing::fd_check(
      [&] { return mean(mul(block(x, mask), block(x, mask))); }, ps.refs(), 6, 1e-6, 1e-4, 17);
  CHECK(res.ok());
  CHECK(res.checked > 50);
}
