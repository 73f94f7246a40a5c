// Dense double-precision tensors with reverse-mode autodiff.
//
// Tensors are handles onto shared nodes. Ops are free functions that record
// backward closures when gradient mode is on and any input requires grad.
// Values are row-major; shapes use positive extents only.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace cdet {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int64_t numel_of(const Shape& s);

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until backward touches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  int64_t numel() const { return static_cast<int64_t>(values.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
  }
};

// Thread-local switch; inference paths disable graph recording with it.
bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // Validates that every entry is finite; inputs never enter the graph NaN.
  static Tensor from_values(const Shape& shape, std::vector<double> values,
                            bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int extent(int axis) const;
  int64_t numel() const { return node_->numel(); }

  const std::vector<double>& values() const { return node_->values; }
  std::vector<double>& values_mut() { return node_->values; }
  double at(int64_t flat) const { return node_->values[static_cast<size_t>(flat)]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  const std::vector<double>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

  // Same values, no graph history.
  Tensor detach() const;

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// ----- graph -----

// Populates gradients of everything reachable from `loss` (scalar).
void backward(const Tensor& loss);

bool all_finite(const Tensor& t);

// ----- elementwise (numpy-style broadcasting) -----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);  // ties route grad to a
Tensor minimum(const Tensor& a, const Tensor& b);  // ties route grad to a

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor abs(const Tensor& a);  // subgradient 0 at 0
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return divide(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ----- structure -----

Tensor reshape(const Tensor& a, const Shape& shape);
Tensor transpose(const Tensor& a, int axis0, int axis1);  // negative axes allowed
Tensor slice(const Tensor& a, int axis, int start, int end);
Tensor concat(const std::vector<Tensor>& parts, int axis);
// Gathers rows along axis 0; backward scatter-adds.
Tensor take_rows(const Tensor& a, const std::vector<int>& indices);
// x: (n, V), indices: n entries -> (n,) with x[i, indices[i]].
Tensor pick(const Tensor& a, const std::vector<int>& indices);

// ----- reductions -----

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, int axis);   // keeps the axis with extent 1
Tensor mean_axis(const Tensor& a, int axis);  // keeps the axis with extent 1

// ----- linear algebra -----

// (..., n, k) x (..., k, m) -> (..., n, m); leading extents broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

// ----- probability -----

// Max-stabilized; each slice along `axis` sums to 1.
Tensor softmax(const Tensor& a, int axis);
Tensor log_softmax(const Tensor& a, int axis);

// Scaled dot-product: softmax(Q K^T / sqrt(d) + mask) V.
// Q: (..., n, d), K: (..., m, d), V: (..., m, dv); mask broadcast onto scores.
Tensor attention(const Tensor& queries, const Tensor& keys, const Tensor& values);
Tensor attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                 const Tensor& additive_mask);

// Mean of per-element binary cross entropy on logits; weights optional
// (same shape as logits, normalized by their sum). Fused for stability.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets, const Tensor& weights);

}  // namespace cdet
