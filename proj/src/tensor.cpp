#include "cdet/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace cdet {

namespace {

using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RMat>;
using MapConstMat = Eigen::Map<const RMat>;
using MapArr = Eigen::Map<Eigen::ArrayXd>;
using MapConstArr = Eigen::Map<const Eigen::ArrayXd>;

thread_local bool g_grad_enabled = true;

int normalize_axis(int axis, int ndim, const char* op) {
  int a = axis < 0 ? axis + ndim : axis;
  if (a < 0 || a >= ndim) {
    std::ostringstream os;
    os << op << ": axis " << axis << " invalid for rank " << ndim;
    throw std::invalid_argument(os.str());
  }
  return a;
}

std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
    st[static_cast<size_t>(d)] = acc;
    acc *= s[static_cast<size_t>(d)];
  }
  return st;
}

// Strides of `shape` padded/broadcast against `out`: 0 where the extent is 1.
std::vector<int64_t> broadcast_strides(const Shape& shape, const Shape& out) {
  std::vector<int64_t> st(out.size(), 0);
  auto own = strides_of(shape);
  size_t off = out.size() - shape.size();
  for (size_t d = 0; d < shape.size(); ++d) {
    if (shape[d] != 1) st[off + d] = own[d];
  }
  return st;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  size_t nd = std::max(a.size(), b.size());
  Shape out(nd);
  for (size_t i = 0; i < nd; ++i) {
    int ea = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    int eb = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      std::ostringstream os;
      os << op << ": shapes " << shape_str(a) << " and " << shape_str(b)
         << " are not broadcast-compatible";
      throw std::invalid_argument(os.str());
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

// Calls f(flat_out, flat_a, flat_b) for every position of `out`.
template <class F>
void for_each_pair(const Shape& out, const std::vector<int64_t>& sa,
                   const std::vector<int64_t>& sb, F&& f) {
  int64_t total = numel_of(out);
  if (total == 0) return;
  int nd = static_cast<int>(out.size());
  if (nd == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<int> idx(static_cast<size_t>(nd), 0);
  int64_t ia = 0, ib = 0;
  for (int64_t i = 0;; ++i) {
    f(i, ia, ib);
    int d = nd - 1;
    for (; d >= 0; --d) {
      idx[static_cast<size_t>(d)]++;
      ia += sa[static_cast<size_t>(d)];
      ib += sb[static_cast<size_t>(d)];
      if (idx[static_cast<size_t>(d)] < out[static_cast<size_t>(d)]) break;
      ia -= static_cast<int64_t>(idx[static_cast<size_t>(d)]) * sa[static_cast<size_t>(d)];
      ib -= static_cast<int64_t>(idx[static_cast<size_t>(d)]) * sb[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
    if (d < 0) break;
  }
}

// Single-input variant: f(flat_out, flat_in).
template <class F>
void for_each_mapped(const Shape& out, const std::vector<int64_t>& sin, F&& f) {
  for_each_pair(out, sin, std::vector<int64_t>(out.size(), 0),
                [&](int64_t i, int64_t ii, int64_t) { f(i, ii); });
}

std::shared_ptr<TensorNode> make_node(Shape shape) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values.assign(static_cast<size_t>(numel_of(n->shape)), 0.0);
  return n;
}

bool should_track(std::initializer_list<const Tensor*> parents) {
  if (!g_grad_enabled) return false;
  for (const Tensor* p : parents) {
    if (p->requires_grad()) return true;
  }
  return false;
}

void attach(const std::shared_ptr<TensorNode>& out,
            std::initializer_list<const Tensor*> parents,
            std::function<void(TensorNode&)> bw) {
  out->requires_grad = true;
  for (const Tensor* p : parents) out->parents.push_back(p->node());
  out->backward = std::move(bw);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    std::ostringstream os;
    os << op << ": shapes " << shape_str(a.shape()) << " and " << shape_str(b.shape())
       << " must match";
    throw std::invalid_argument(os.str());
  }
}

// Shared implementation for broadcasting binary elementwise ops.
// DfA/DfB map (a, b, out, gout) -> grad contribution.
template <class Fwd, class DfA, class DfB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DfA dfa, DfB dfb) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  auto out = make_node(out_shape);
  const auto& av = a.values();
  const auto& bv = b.values();

  bool same = a.shape() == b.shape();
  if (same) {
    for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = fwd(av[i], bv[i]);
  } else {
    auto sa = broadcast_strides(a.shape(), out_shape);
    auto sb = broadcast_strides(b.shape(), out_shape);
    for_each_pair(out_shape, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) {
      out->values[static_cast<size_t>(i)] =
          fwd(av[static_cast<size_t>(ia)], bv[static_cast<size_t>(ib)]);
    });
  }

  Tensor result(out);
  if (should_track({&a, &b})) {
    Shape ashape = a.shape(), bshape = b.shape();
    attach(out, {&a, &b}, [same, ashape, bshape, fwd, dfa, dfb](TensorNode& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) pa.ensure_grad();
      if (pb.requires_grad) pb.ensure_grad();
      if (same) {
        for (size_t i = 0; i < self.values.size(); ++i) {
          double g = self.grad[i];
          if (g == 0.0) continue;
          if (pa.requires_grad) pa.grad[i] += dfa(pa.values[i], pb.values[i], self.values[i], g);
          if (pb.requires_grad) pb.grad[i] += dfb(pa.values[i], pb.values[i], self.values[i], g);
        }
      } else {
        auto sa = broadcast_strides(ashape, self.shape);
        auto sb = broadcast_strides(bshape, self.shape);
        for_each_pair(self.shape, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) {
          double g = self.grad[static_cast<size_t>(i)];
          if (g == 0.0) return;
          double avv = pa.values[static_cast<size_t>(ia)];
          double bvv = pb.values[static_cast<size_t>(ib)];
          double ov = self.values[static_cast<size_t>(i)];
          if (pa.requires_grad) pa.grad[static_cast<size_t>(ia)] += dfa(avv, bvv, ov, g);
          if (pb.requires_grad) pb.grad[static_cast<size_t>(ib)] += dfb(avv, bvv, ov, g);
        });
      }
    });
  }
  return result;
}

template <class Fwd, class Df>
Tensor unary_op(const Tensor& a, Fwd fwd, Df df) {
  auto out = make_node(a.shape());
  const auto& av = a.values();
  for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = fwd(av[i]);
  Tensor result(out);
  if (should_track({&a})) {
    attach(out, {&a}, [fwd, df](TensorNode& self) {
      auto& p = *self.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      for (size_t i = 0; i < self.values.size(); ++i) {
        p.grad[i] += df(p.values[i], self.values[i], self.grad[i]);
      }
    });
  }
  return result;
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

static void check_shape_valid(const Shape& shape) {
  for (int e : shape) {
    if (e <= 0) {
      throw std::invalid_argument("tensor shape " + shape_str(shape) +
                                  " has a non-positive extent");
    }
  }
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  check_shape_valid(shape);
  auto n = make_node(shape);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  check_shape_valid(shape);
  auto n = make_node(shape);
  std::fill(n->values.begin(), n->values.end(), value);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

Tensor Tensor::from_values(const Shape& shape, std::vector<double> values, bool requires_grad) {
  check_shape_valid(shape);
  if (numel_of(shape) != static_cast<int64_t>(values.size())) {
    std::ostringstream os;
    os << "from_values: shape " << shape_str(shape) << " wants " << numel_of(shape)
       << " entries, got " << values.size();
    throw std::invalid_argument(os.str());
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("from_values: non-finite entry rejected");
  }
  auto n = std::make_shared<TensorNode>();
  n->shape = shape;
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

int Tensor::extent(int axis) const {
  return shape()[static_cast<size_t>(normalize_axis(axis, ndim(), "extent"))];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item: tensor " + shape_str(shape()) + " is not scalar");
  }
  return node_->values[0];
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<TensorNode>();
  n->shape = node_->shape;
  n->values = node_->values;
  n->requires_grad = false;
  return Tensor(n);
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  // Iterative post-order DFS for a reverse topological order.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.push_back({loss.node().get(), 0});
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward) {
      n->ensure_grad();
      n->backward(*n);
    }
  }
}

bool all_finite(const Tensor& t) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ----- elementwise -----

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double, double g) { return g; },
      [](double, double, double, double g) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double, double g) { return g; },
      [](double, double, double, double g) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double, double g) { return g * y; },
      [](double x, double, double, double g) { return g * x; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "divide", [](double x, double y) { return x / y; },
      [](double, double y, double, double g) { return g / y; },
      [](double x, double y, double, double g) { return -g * x / (y * y); });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "maximum", [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y, double, double g) { return x >= y ? g : 0.0; },
      [](double x, double y, double, double g) { return x >= y ? 0.0 : g; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "minimum", [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y, double, double g) { return x <= y ? g : 0.0; },
      [](double x, double y, double, double g) { return x <= y ? 0.0 : g; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_op(
      a, [c](double x) { return x + c; },
      [](double, double, double g) { return g; });
}

Tensor mul_scalar(const Tensor& a, double c) {
  return unary_op(
      a, [c](double x) { return x * c; },
      [c](double, double, double g) { return g * c; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); },
      [](double, double o, double g) { return g * o; });
}

Tensor log(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::log(x); },
      [](double x, double, double g) { return g / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::sqrt(x); },
      [](double, double o, double g) { return 0.5 * g / o; });
}

Tensor abs(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::fabs(x); },
      [](double x, double, double g) { return x > 0 ? g : (x < 0 ? -g : 0.0); });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a,
      [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double o, double g) { return g * o * (1.0 - o); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double, double g) { return x > 0 ? g : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); },
      [](double, double o, double g) { return g * (1.0 - o * o); });
}

// ----- structure -----

Tensor reshape(const Tensor& a, const Shape& shape) {
  check_shape_valid(shape);
  if (numel_of(shape) != a.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                shape_str(shape));
  }
  auto out = make_node(shape);
  out->values = a.values();
  Tensor result(out);
  if (should_track({&a})) {
    attach(out, {&a}, [](TensorNode& self) {
      auto& p = *self.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    });
  }
  return result;
}

Tensor transpose(const Tensor& a, int axis0, int axis1) {
  int nd = a.ndim();
  int a0 = normalize_axis(axis0, nd, "transpose");
  int a1 = normalize_axis(axis1, nd, "transpose");
  Shape out_shape = a.shape();
  std::swap(out_shape[static_cast<size_t>(a0)], out_shape[static_cast<size_t>(a1)]);
  auto in_strides = strides_of(a.shape());
  std::swap(in_strides[static_cast<size_t>(a0)], in_strides[static_cast<size_t>(a1)]);

  auto out = make_node(out_shape);
  const auto& av = a.values();
  for_each_mapped(out_shape, in_strides, [&](int64_t i, int64_t ii) {
    out->values[static_cast<size_t>(i)] = av[static_cast<size_t>(ii)];
  });
  Tensor result(out);
  if (should_track({&a})) {
    attach(out, {&a}, [in_strides](TensorNode& self) {
      auto& p = *self.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      for_each_mapped(self.shape, in_strides, [&](int64_t i, int64_t ii) {
        p.grad[static_cast<size_t>(ii)] += self.grad[static_cast<size_t>(i)];
      });
    });
  }
  return result;
}

Tensor slice(const Tensor& a, int axis, int start, int end) {
  int nd = a.ndim();
  int ax = normalize_axis(axis, nd, "slice");
  int extent = a.shape()[static_cast<size_t>(ax)];
  if (start < 0 || end > extent || start >= end) {
    std::ostringstream os;
    os << "slice: range [" << start << "," << end << ") invalid for axis " << axis << " of "
       << shape_str(a.shape());
    throw std::invalid_argument(os.str());
  }
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(ax)] = end - start;
  auto in_strides = strides_of(a.shape());
  int64_t offset = start * in_strides[static_cast<size_t>(ax)];

  auto out = make_node(out_shape);
  const auto& av = a.values();
  for_each_mapped(out_shape, in_strides, [&](int64_t i, int64_t ii) {
    out->values[static_cast<size_t>(i)] = av[static_cast<size_t>(ii + offset)];
  });
  Tensor result(out);
  if (should_track({&a})) {
    attach(out, {&a}, [in_strides, offset](TensorNode& self) {
      auto& p = *self.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      for_each_mapped(self.shape, in_strides, [&](int64_t i, int64_t ii) {
        p.grad[static_cast<size_t>(ii + offset)] += self.grad[static_cast<size_t>(i)];
      });
    });
  }
  return result;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  int nd = parts[0].ndim();
  int ax = normalize_axis(axis, nd, "concat");
  Shape out_shape = parts[0].shape();
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != nd) throw std::invalid_argument("concat: rank mismatch");
    for (int d = 0; d < nd; ++d) {
      if (d != ax && p.shape()[static_cast<size_t>(d)] != out_shape[static_cast<size_t>(d)]) {
        throw std::invalid_argument("concat: shapes " + shape_str(out_shape) + " and " +
                                    shape_str(p.shape()) + " differ off-axis");
      }
    }
    total += p.shape()[static_cast<size_t>(ax)];
  }
  out_shape[static_cast<size_t>(ax)] = total;

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < ax; ++d) outer *= out_shape[static_cast<size_t>(d)];
  for (int d = ax + 1; d < nd; ++d) inner *= out_shape[static_cast<size_t>(d)];

  auto out = make_node(out_shape);
  std::vector<int> extents;
  extents.reserve(parts.size());
  {
    int64_t pos = 0;
    for (const Tensor& p : parts) {
      int e = p.shape()[static_cast<size_t>(ax)];
      extents.push_back(e);
      const auto& pv = p.values();
      for (int64_t o = 0; o < outer; ++o) {
        std::copy(pv.begin() + o * e * inner, pv.begin() + (o + 1) * e * inner,
                  out->values.begin() + (o * total + pos) * inner);
      }
      pos += e;
    }
  }

  Tensor result(out);
  bool track = false;
  if (g_grad_enabled) {
    for (const Tensor& p : parts) track = track || p.requires_grad();
  }
  if (track) {
    out->requires_grad = true;
    for (const Tensor& p : parts) out->parents.push_back(p.node());
    out->backward = [outer, inner, total, extents](TensorNode& self) {
      int64_t pos = 0;
      for (size_t k = 0; k < self.parents.size(); ++k) {
        auto& p = *self.parents[k];
        int e = extents[k];
        if (p.requires_grad) {
          p.ensure_grad();
          for (int64_t o = 0; o < outer; ++o) {
            const double* src = self.grad.data() + (o * total + pos) * inner;
            double* dst = p.grad.data() + o * e * inner;
            for (int64_t i = 0; i < e * inner; ++i) dst[i] += src[i];
          }
        }
        pos += e;
      }
    };
  }
  return result;
}

Tensor take_rows(const Tensor& a, const std::vector<int>& indices) {
  if (a.ndim() < 1) throw std::invalid_argument("take_rows: rank-0 input");
  int n0 = a.shape()[0];
  if (indices.empty()) throw std::invalid_argument("take_rows: empty index list");
  for (int ix : indices) {
    if (ix < 0 || ix >= n0) {
      throw std::invalid_argument("take_rows: index " + std::to_string(ix) +
                                  " out of range for " + shape_str(a.shape()));
    }
  }
  Shape out_shape = a.shape();
  out_shape[0] = static_cast<int>(indices.size());
  int64_t row = a.numel() / n0;
  auto out = make_node(out_shape);
  const auto& av = a.values();
  for (size_t r = 0; r < indices.size(); ++r) {
    std::copy(av.begin() + indices[r] * row, av.begin() + (indices[r] + 1) * row,
              out->values.begin() + static_cast<int64_t>(r) * row);
  }
  Tensor result(out);
  if (should_track({&a})) {
    attach(out, {&a}, [indices, row](TensorNode& self) {
      auto& p = *self.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      for (size_t r = 0; r < indices.size(); ++r) {
        const double* src = self.grad.data() + static_cast<int64_t>(r) * row;
        double* dst = p.grad.data() + indices[r] * row;
        for (int64_t i = 0; i < row; ++i) dst[i] += src[i];
      }
    });
  }
  return result;
}

Tensor pick(const Tensor& a, const std::vector<int>& indices) {
  if (a.ndim() != 2) throw std::invalid_argument("pick: expects (n,V), got " + shape_str(a.shape()));
  int n = a.shape()[0], v = a.shape()[1];
  if (static_cast<int>(indices.size()) != n) {
    throw std::invalid_argument("pick: index count " + std::to_string(indices.size()) +
                                " != rows " + std::to_string(n));
  }
  for (int ix : indices) {
    if (ix < 0 || ix >= v) throw std::invalid_argument("pick: column index out of range");
  }
  auto out = make_node({n});
  const auto& av = a.values();
  for (int i = 0; i < n; ++i) {
    out->values[static_cast<size_t>(i)] =
        av[static_cast<size_t>(i) * static_cast<size_t>(v) + static_cast<size_t>(indices[static_cast<size_t>(i)])];
  }
  Tensor result(out);
  if (should_track({&a})) {
    attach(out, {&a}, [indices, v](TensorNode& self) {
      auto& p = *self.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      for (size_t i = 0; i < indices.size(); ++i) {
        p.grad[i * static_cast<size_t>(v) + static_cast<size_t>(indices[i])] += self.grad[i];
      }
    });
  }
  return result;
}

// ----- reductions -----

Tensor sum(const Tensor& a) {
  auto out = make_node({1});
  MapConstArr av(a.values().data(), static_cast<Eigen::Index>(a.numel()));
  out->values[0] = av.sum();
  Tensor result(out);
  if (should_track({&a})) {
    attach(out, {&a}, [](TensorNode& self) {
      auto& p = *self.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      double g = self.grad[0];
      for (auto& pg : p.grad) pg += g;
    });
  }
  return result;
}

Tensor mean(const Tensor& a) { return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum_axis(const Tensor& a, int axis) {
  int nd = a.ndim();
  int ax = normalize_axis(axis, nd, "sum_axis");
  Shape out_shape = a.shape();
  int n = out_shape[static_cast<size_t>(ax)];
  out_shape[static_cast<size_t>(ax)] = 1;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < ax; ++d) outer *= a.shape()[static_cast<size_t>(d)];
  for (int d = ax + 1; d < nd; ++d) inner *= a.shape()[static_cast<size_t>(d)];

  auto out = make_node(out_shape);
  const auto& av = a.values();
  for (int64_t o = 0; o < outer; ++o) {
    for (int j = 0; j < n; ++j) {
      const double* src = av.data() + (o * n + j) * inner;
      double* dst = out->values.data() + o * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  Tensor result(out);
  if (should_track({&a})) {
    attach(out, {&a}, [outer, inner, n](TensorNode& self) {
      auto& p = *self.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        const double* g = self.grad.data() + o * inner;
        for (int j = 0; j < n; ++j) {
          double* dst = p.grad.data() + (o * n + j) * inner;
          for (int64_t i = 0; i < inner; ++i) dst[i] += g[i];
        }
      }
    });
  }
  return result;
}

Tensor mean_axis(const Tensor& a, int axis) {
  int ax = normalize_axis(axis, a.ndim(), "mean_axis");
  double n = a.shape()[static_cast<size_t>(ax)];
  return mul_scalar(sum_axis(a, ax), 1.0 / n);
}

// ----- matmul -----

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() < 2) {
    throw std::invalid_argument("matmul: both inputs need rank >= 2, got " +
                                shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  int n = a.shape()[static_cast<size_t>(a.ndim() - 2)];
  int k = a.shape()[static_cast<size_t>(a.ndim() - 1)];
  int k2 = b.shape()[static_cast<size_t>(b.ndim() - 2)];
  int m = b.shape()[static_cast<size_t>(b.ndim() - 1)];
  if (k != k2) {
    throw std::invalid_argument("matmul: inner extents disagree for shapes " +
                                shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Shape lead_a(a.shape().begin(), a.shape().end() - 2);
  Shape lead_b(b.shape().begin(), b.shape().end() - 2);
  Shape lead = broadcast_shape(lead_a, lead_b, "matmul");
  Shape out_shape = lead;
  out_shape.push_back(n);
  out_shape.push_back(m);

  // Per-batch flat offsets in units of one matrix block.
  int64_t batches = numel_of(lead);
  auto sa = broadcast_strides(lead_a, lead);
  auto sb = broadcast_strides(lead_b, lead);

  std::vector<int64_t> off_a(static_cast<size_t>(batches)), off_b(static_cast<size_t>(batches));
  for_each_pair(lead, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) {
    off_a[static_cast<size_t>(i)] = ia;
    off_b[static_cast<size_t>(i)] = ib;
  });

  auto out = make_node(out_shape);
  const int64_t blk_a = static_cast<int64_t>(n) * k;
  const int64_t blk_b = static_cast<int64_t>(k) * m;
  const int64_t blk_o = static_cast<int64_t>(n) * m;
  for (int64_t t = 0; t < batches; ++t) {
    MapConstMat A(a.values().data() + off_a[static_cast<size_t>(t)] * blk_a, n, k);
    MapConstMat B(b.values().data() + off_b[static_cast<size_t>(t)] * blk_b, k, m);
    MapMat C(out->values.data() + t * blk_o, n, m);
    C.noalias() = A * B;
  }

  Tensor result(out);
  if (should_track({&a, &b})) {
    attach(out, {&a, &b}, [n, k, m, batches, off_a, off_b, blk_a, blk_b, blk_o](TensorNode& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) pa.ensure_grad();
      if (pb.requires_grad) pb.ensure_grad();
      for (int64_t t = 0; t < batches; ++t) {
        MapConstMat G(self.grad.data() + t * blk_o, n, m);
        if (pa.requires_grad) {
          MapConstMat B(pb.values.data() + off_b[static_cast<size_t>(t)] * blk_b, k, m);
          MapMat dA(pa.grad.data() + off_a[static_cast<size_t>(t)] * blk_a, n, k);
          dA.noalias() += G * B.transpose();
        }
        if (pb.requires_grad) {
          MapConstMat A(pa.values.data() + off_a[static_cast<size_t>(t)] * blk_a, n, k);
          MapMat dB(pb.grad.data() + off_b[static_cast<size_t>(t)] * blk_b, k, m);
          dB.noalias() += A.transpose() * G;
        }
      }
    });
  }
  return result;
}

// ----- probability -----

namespace {

// Applies f(offset, stride, n) to every fiber along `axis`.
template <class F>
void for_each_fiber(const Shape& shape, int axis, F&& f) {
  int nd = static_cast<int>(shape.size());
  int n = shape[static_cast<size_t>(axis)];
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= shape[static_cast<size_t>(d)];
  for (int d = axis + 1; d < nd; ++d) inner *= shape[static_cast<size_t>(d)];
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) f(o * n * inner + i, inner, n);
  }
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
  int ax = normalize_axis(axis, a.ndim(), "softmax");
  auto out = make_node(a.shape());
  const auto& av = a.values();
  for_each_fiber(a.shape(), ax, [&](int64_t base, int64_t stride, int n) {
    double mx = av[static_cast<size_t>(base)];
    for (int j = 1; j < n; ++j) mx = std::max(mx, av[static_cast<size_t>(base + j * stride)]);
    double total = 0.0;
    for (int j = 0; j < n; ++j) {
      double e = std::exp(av[static_cast<size_t>(base + j * stride)] - mx);
      out->values[static_cast<size_t>(base + j * stride)] = e;
      total += e;
    }
    for (int j = 0; j < n; ++j) out->values[static_cast<size_t>(base + j * stride)] /= total;
  });
  Tensor result(out);
  if (should_track({&a})) {
    attach(out, {&a}, [ax](TensorNode& self) {
      auto& p = *self.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      for_each_fiber(self.shape, ax, [&](int64_t base, int64_t stride, int n) {
        double dot = 0.0;
        for (int j = 0; j < n; ++j) {
          size_t ix = static_cast<size_t>(base + j * stride);
          dot += self.grad[ix] * self.values[ix];
        }
        for (int j = 0; j < n; ++j) {
          size_t ix = static_cast<size_t>(base + j * stride);
          p.grad[ix] += self.values[ix] * (self.grad[ix] - dot);
        }
      });
    });
  }
  return result;
}

Tensor log_softmax(const Tensor& a, int axis) {
  int ax = normalize_axis(axis, a.ndim(), "log_softmax");
  auto out = make_node(a.shape());
  const auto& av = a.values();
  for_each_fiber(a.shape(), ax, [&](int64_t base, int64_t stride, int n) {
    double mx = av[static_cast<size_t>(base)];
    for (int j = 1; j < n; ++j) mx = std::max(mx, av[static_cast<size_t>(base + j * stride)]);
    double total = 0.0;
    for (int j = 0; j < n; ++j) total += std::exp(av[static_cast<size_t>(base + j * stride)] - mx);
    double lse = mx + std::log(total);
    for (int j = 0; j < n; ++j) {
      size_t ix = static_cast<size_t>(base + j * stride);
      out->values[ix] = av[ix] - lse;
    }
  });
  Tensor result(out);
  if (should_track({&a})) {
    attach(out, {&a}, [ax](TensorNode& self) {
      auto& p = *self.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      for_each_fiber(self.shape, ax, [&](int64_t base, int64_t stride, int n) {
        double gsum = 0.0;
        for (int j = 0; j < n; ++j) gsum += self.grad[static_cast<size_t>(base + j * stride)];
        for (int j = 0; j < n; ++j) {
          size_t ix = static_cast<size_t>(base + j * stride);
          p.grad[ix] += self.grad[ix] - std::exp(self.values[ix]) * gsum;
        }
      });
    });
  }
  return result;
}

static void check_attention_shapes(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.ndim() < 2 || k.ndim() < 2 || v.ndim() < 2) {
    throw std::invalid_argument("attention: inputs need rank >= 2");
  }
  int dq = q.shape().back();
  int dk = k.shape().back();
  if (dq != dk) {
    throw std::invalid_argument("attention: query/key feature extents disagree: " +
                                shape_str(q.shape()) + " vs " + shape_str(k.shape()));
  }
  int mk = k.shape()[static_cast<size_t>(k.ndim() - 2)];
  int mv = v.shape()[static_cast<size_t>(v.ndim() - 2)];
  if (mk != mv) {
    throw std::invalid_argument("attention: key/value sequence extents disagree: " +
                                shape_str(k.shape()) + " vs " + shape_str(v.shape()));
  }
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  check_attention_shapes(q, k, v);
  double scale = 1.0 / std::sqrt(static_cast<double>(q.shape().back()));
  Tensor scores = mul_scalar(matmul(q, transpose(k, -2, -1)), scale);
  return matmul(softmax(scores, -1), v);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask) {
  check_attention_shapes(q, k, v);
  double scale = 1.0 / std::sqrt(static_cast<double>(q.shape().back()));
  Tensor scores = add(mul_scalar(matmul(q, transpose(k, -2, -1)), scale), mask);
  return matmul(softmax(scores, -1), v);
}

// ----- losses -----

static Tensor bce_impl(const Tensor& logits, const Tensor& targets, const Tensor* weights) {
  check_same_shape(logits, targets, "bce_with_logits");
  if (weights) check_same_shape(logits, *weights, "bce_with_logits");
  const auto& x = logits.values();
  const auto& t = targets.values();
  double wsum = 0.0;
  double loss = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    double w = weights ? weights->values()[i] : 1.0;
    wsum += w;
    double term = std::max(x[i], 0.0) - x[i] * t[i] + std::log1p(std::exp(-std::fabs(x[i])));
    loss += w * term;
  }
  if (wsum <= 0.0) throw std::invalid_argument("bce_with_logits: weights sum to zero");
  auto out = make_node({1});
  out->values[0] = loss / wsum;
  Tensor result(out);
  std::vector<double> w_copy;
  if (weights) w_copy = weights->values();
  if (should_track({&logits})) {
    attach(out, {&logits, &targets}, [w_copy, wsum](TensorNode& self) {
      auto& p = *self.parents[0];
      auto& tt = *self.parents[1];
      if (!p.requires_grad) return;
      p.ensure_grad();
      double g = self.grad[0];
      for (size_t i = 0; i < p.values.size(); ++i) {
        double xv = p.values[i];
        double s = xv >= 0 ? 1.0 / (1.0 + std::exp(-xv)) : std::exp(xv) / (1.0 + std::exp(xv));
        double w = w_copy.empty() ? 1.0 : w_copy[i];
        p.grad[i] += g * w * (s - tt.values[i]) / wsum;
      }
    });
  }
  return result;
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  return bce_impl(logits, targets, nullptr);
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets, const Tensor& weights) {
  return bce_impl(logits, targets, &weights);
}

}  // namespace cdet
