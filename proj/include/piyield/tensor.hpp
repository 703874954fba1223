#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace piyield {

namespace detail {
struct TensorData {
  std::vector<std::size_t> shape;
  std::vector<double> values;  // row-major
  std::vector<double> grad;    // empty until first accumulation
  bool requires_grad = false;

  std::size_t size() const { return values.size(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};
}  // namespace detail

// Dense 64-bit float array with shared storage. Gradients accumulate
// additively on the underlying storage, so every Tensor handle to the same
// data sees the same grad.
class Tensor {
 public:
  Tensor() : data_(std::make_shared<detail::TensorData>()) {}
  Tensor(std::vector<std::size_t> shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // 1-D tensor from values.
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  const std::vector<std::size_t>& shape() const { return data_->shape; }
  std::size_t size() const { return data_->size(); }
  std::size_t rows() const { return data_->shape.at(0); }
  std::size_t cols() const { return data_->shape.at(1); }

  std::span<const double> values() const { return data_->values; }
  std::span<double> mutable_values() { return data_->values; }
  double value() const;  // scalar access, throws if size != 1
  double at(std::size_t i) const { return data_->values.at(i); }

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool rg) { data_->requires_grad = rg; }

  // Zero-filled until backward() has touched this tensor.
  std::span<const double> grad() const;
  void zero_grad();

  bool same_storage(const Tensor& other) const { return data_ == other.data_; }

  std::shared_ptr<detail::TensorData> data() const { return data_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorData> d) : data_(std::move(d)) {}
  std::shared_ptr<detail::TensorData> data_;
  friend class Tape;
};

// Eager define-by-run tape. Constructing a Tape makes it the active recorder
// for the current thread; destruction restores the previous one. One tape per
// training step; backward() consumes the recorded nodes.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  // Propagates d(loss)/d(x) into every recorded tensor with requires_grad.
  // loss must be scalar. The tape is cleared afterwards.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

 private:
  std::vector<std::function<void()>> nodes_;
  Tape* prev_;
};

std::string shape_str(const std::vector<std::size_t>& shape);

// ---- primitives ----------------------------------------------------------
// Elementwise binary ops accept equal shapes, or one operand whose shape
// equals the other's with the leading (batch) extent dropped; the smaller
// operand is broadcast across that extent. Anything richer is rejected.

Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);  // (m,k)x(k,n) -> (m,n)

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);

Tensor sum(const Tensor& x);   // -> scalar
Tensor mean(const Tensor& x);  // -> scalar

Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);
Tensor concat_cols(const std::vector<Tensor>& parts);            // 2-D, equal rows
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len);

// Constant copy; gradients do not flow past it.
Tensor detach(const Tensor& x);

// Indicator masks: constant 0/1 tensors evaluated on current values. They are
// never recorded, so they act as gradient-blocking constants.
Tensor mask_lt(const Tensor& x, double c);
Tensor mask_gt(const Tensor& x, const Tensor& bound);
Tensor mask_between(const Tensor& x, double lo, const Tensor& hi);
Tensor mask_between(const Tensor& x, double lo, double hi);

// clamp(x, lo, hi) with indicator-mask semantics: identity gradient inside
// the range, zero outside (masks are constants during backward).
Tensor clip_mask(const Tensor& x, double lo, const Tensor& hi);
Tensor clip_mask(const Tensor& x, double lo, double hi);

// ---- generic dispatch ----------------------------------------------------

enum class OpKind {
  Add,
  Subtract,
  Multiply,
  Divide,
  MatMul,
  Sigmoid,
  Tanh,
  Softplus,
  Relu,
  Sqrt,
  Square,
  Sum,
  Mean,
  Concat,
};

const char* op_name(OpKind kind);
Tensor primitive_forward(OpKind kind, const std::vector<Tensor>& inputs);

}  // namespace piyield
