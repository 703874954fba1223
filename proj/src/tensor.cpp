#include "piyield/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace piyield {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

[[noreturn]] void shape_error(const char* op, const std::vector<std::size_t>& a,
                              const std::vector<std::size_t>& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) +
                              " and " + shape_str(b));
}

bool record_needed(bool any_requires_grad) {
  return any_requires_grad && g_active_tape != nullptr;
}

using DataPtr = std::shared_ptr<detail::TensorData>;

// Broadcast pattern for elementwise binary ops: same shapes, or the smaller
// operand's shape equals the larger one minus its leading extent.
enum class Bcast { None, AOverB, BOverA };

Bcast resolve_broadcast(const char* op, const std::vector<std::size_t>& a,
                        const std::vector<std::size_t>& b) {
  if (a == b) return Bcast::None;
  if (a.size() == b.size() + 1 && std::equal(a.begin() + 1, a.end(), b.begin()))
    return Bcast::BOverA;
  if (b.size() == a.size() + 1 && std::equal(b.begin() + 1, b.end(), a.begin()))
    return Bcast::AOverB;
  shape_error(op, a, b);
}

template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_elementwise(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, BwdA dfda,
                          BwdB dfdb) {
  const Bcast bc = resolve_broadcast(op, a.shape(), b.shape());
  const std::size_t n = std::max(a.size(), b.size());
  const std::size_t na = a.size(), nb = b.size();
  std::vector<double> out(n);
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i % na], bv[i % nb]);

  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor result(bc == Bcast::AOverB ? b.shape() : a.shape(), std::move(out), record_needed(rg));
  if (result.requires_grad()) {
    DataPtr ad = a.data(), bd = b.data(), od = result.data();
    g_active_tape->record([ad, bd, od, dfda, dfdb, n, na, nb]() {
      od->ensure_grad();
      const auto& g = od->grad;
      if (ad->requires_grad) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          ad->grad[i % na] += g[i] * dfda(ad->values[i % na], bd->values[i % nb]);
      }
      if (bd->requires_grad) {
        bd->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          bd->grad[i % nb] += g[i] * dfdb(ad->values[i % na], bd->values[i % nb]);
      }
    });
  }
  return result;
}

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const Tensor& x, Fwd fwd, Bwd dydx_from_xy) {
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);

  Tensor result(x.shape(), std::move(out), record_needed(x.requires_grad()));
  if (result.requires_grad()) {
    DataPtr xd = x.data(), od = result.data();
    g_active_tape->record([xd, od, dydx_from_xy]() {
      if (!xd->requires_grad) return;
      od->ensure_grad();
      xd->ensure_grad();
      const auto& g = od->grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        xd->grad[i] += g[i] * dydx_from_xy(xd->values[i], od->values[i]);
    });
  }
  return result;
}

// C += or = A(m,k) * B(k,n); plain ikj loops keep the inner stride unit.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A(m,k) * B(n,k)^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C += A(k,m)^T * B(k,n)
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values, bool requires_grad)
    : data_(std::make_shared<detail::TensorData>()) {
  if (shape_product(shape) != values.size())
    throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  data_->shape = std::move(shape);
  data_->values = std::move(values);
  data_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  std::vector<double> v(shape_product(shape), 0.0);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
  std::vector<double> v(shape_product(shape), value);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  std::vector<std::size_t> shape{values.size()};
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

double Tensor::value() const {
  if (size() != 1)
    throw std::invalid_argument("Tensor::value: tensor of shape " + shape_str(shape()) +
                                " is not scalar");
  return data_->values[0];
}

std::span<const double> Tensor::grad() const {
  const_cast<detail::TensorData*>(data_.get())->ensure_grad();
  return data_->grad;
}

void Tensor::zero_grad() { data_->grad.assign(data_->values.size(), 0.0); }

// ---- Tape ------------------------------------------------------------------

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  if (nodes_.empty()) throw std::logic_error("backward: tape is empty");
  loss.data()->ensure_grad();
  loss.data()->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  nodes_.clear();
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << '}';
  return os.str();
}

// ---- elementwise binaries --------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor subtract(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "subtract", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor multiply(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "multiply", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "divide", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

// ---- matmul -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2) shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) shape_error("matmul", a.shape(), b.shape());

  std::vector<double> out(m * n);
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n, false);

  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor result({m, n}, std::move(out), record_needed(rg));
  if (result.requires_grad()) {
    DataPtr ad = a.data(), bd = b.data(), od = result.data();
    g_active_tape->record([ad, bd, od, m, k, n]() {
      od->ensure_grad();
      const double* g = od->grad.data();
      if (ad->requires_grad) {
        ad->ensure_grad();
        gemm_nt(g, bd->values.data(), ad->grad.data(), m, n, k);  // dA += G * B^T
      }
      if (bd->requires_grad) {
        bd->ensure_grad();
        gemm_tn(ad->values.data(), g, bd->grad.data(), k, m, n);  // dB += A^T * G
      }
    });
  }
  return result;
}

// ---- elementwise unaries -----------------------------------------------------

Tensor sigmoid(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return stable_sigmoid(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor softplus(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return stable_softplus(v); },
      [](double v, double) { return stable_sigmoid(v); });
}

Tensor relu(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sqrt(const Tensor& x) {
  for (double v : x.values())
    if (v < 0.0) throw std::invalid_argument("sqrt: negative input " + std::to_string(v));
  return unary_elementwise(
      x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor square(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// ---- reductions --------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor result({1}, {acc}, record_needed(x.requires_grad()));
  if (result.requires_grad()) {
    DataPtr xd = x.data(), od = result.data();
    g_active_tape->record([xd, od]() {
      if (!xd->requires_grad) return;
      od->ensure_grad();
      xd->ensure_grad();
      const double g = od->grad[0];
      for (double& gi : xd->grad) gi += g;
    });
  }
  return result;
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw std::invalid_argument("mean: empty tensor");
  const double inv_n = 1.0 / static_cast<double>(x.size());
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor result({1}, {acc * inv_n}, record_needed(x.requires_grad()));
  if (result.requires_grad()) {
    DataPtr xd = x.data(), od = result.data();
    g_active_tape->record([xd, od, inv_n]() {
      if (!xd->requires_grad) return;
      od->ensure_grad();
      xd->ensure_grad();
      const double g = od->grad[0] * inv_n;
      for (double& gi : xd->grad) gi += g;
    });
  }
  return result;
}

Tensor scale(const Tensor& x, double c) {
  return unary_elementwise(
      x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary_elementwise(
      x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

// ---- shape ops -----------------------------------------------------------------

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape) {
  if (shape_product(shape) != x.size())
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                shape_str(shape));
  std::vector<double> v(x.values().begin(), x.values().end());
  Tensor result(std::move(shape), std::move(v), record_needed(x.requires_grad()));
  if (result.requires_grad()) {
    DataPtr xd = x.data(), od = result.data();
    g_active_tape->record([xd, od]() {
      if (!xd->requires_grad) return;
      od->ensure_grad();
      xd->ensure_grad();
      for (std::size_t i = 0; i < od->grad.size(); ++i) xd->grad[i] += od->grad[i];
    });
  }
  return result;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t rows = parts[0].shape().size() == 2 ? parts[0].rows() : 0;
  std::size_t total_cols = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.rows() != rows)
      shape_error("concat_cols", parts[0].shape(), p.shape());
    total_cols += p.cols();
    rg = rg || p.requires_grad();
  }
  std::vector<double> out(rows * total_cols);
  std::size_t col0 = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    const auto pv = p.values();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * total_cols + col0 + j] = pv[i * c + j];
    col0 += c;
  }
  Tensor result({rows, total_cols}, std::move(out), record_needed(rg));
  if (result.requires_grad()) {
    std::vector<DataPtr> ins;
    ins.reserve(parts.size());
    for (const auto& p : parts) ins.push_back(p.data());
    DataPtr od = result.data();
    g_active_tape->record([ins, od, rows, total_cols]() {
      od->ensure_grad();
      std::size_t col0 = 0;
      for (const auto& in : ins) {
        const std::size_t c = in->shape[1];
        if (in->requires_grad) {
          in->ensure_grad();
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < c; ++j)
              in->grad[i * c + j] += od->grad[i * total_cols + col0 + j];
        }
        col0 += c;
      }
    });
  }
  return result;
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
  if (x.shape().size() != 2)
    throw std::invalid_argument("slice_cols: need 2-D tensor, got " + shape_str(x.shape()));
  const std::size_t rows = x.rows(), cols = x.cols();
  if (start + len > cols)
    throw std::invalid_argument("slice_cols: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") exceeds " + shape_str(x.shape()));
  std::vector<double> out(rows * len);
  const auto xv = x.values();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < len; ++j) out[i * len + j] = xv[i * cols + start + j];
  Tensor result({rows, len}, std::move(out), record_needed(x.requires_grad()));
  if (result.requires_grad()) {
    DataPtr xd = x.data(), od = result.data();
    g_active_tape->record([xd, od, rows, cols, start, len]() {
      if (!xd->requires_grad) return;
      od->ensure_grad();
      xd->ensure_grad();
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < len; ++j)
          xd->grad[i * cols + start + j] += od->grad[i * len + j];
    });
  }
  return result;
}

// ---- constants / masks -----------------------------------------------------------

Tensor detach(const Tensor& x) {
  std::vector<double> v(x.values().begin(), x.values().end());
  return Tensor(x.shape(), std::move(v), false);
}

Tensor mask_lt(const Tensor& x, double c) {
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.values()[i] < c ? 1.0 : 0.0;
  return Tensor(x.shape(), std::move(v), false);
}

Tensor mask_gt(const Tensor& x, const Tensor& bound) {
  if (x.shape() != bound.shape()) shape_error("mask_gt", x.shape(), bound.shape());
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = x.values()[i] > bound.values()[i] ? 1.0 : 0.0;
  return Tensor(x.shape(), std::move(v), false);
}

Tensor mask_between(const Tensor& x, double lo, const Tensor& hi) {
  if (x.shape() != hi.shape()) shape_error("mask_between", x.shape(), hi.shape());
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double xi = x.values()[i];
    v[i] = (xi >= lo && xi <= hi.values()[i]) ? 1.0 : 0.0;
  }
  return Tensor(x.shape(), std::move(v), false);
}

Tensor mask_between(const Tensor& x, double lo, double hi) {
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double xi = x.values()[i];
    v[i] = (xi >= lo && xi <= hi) ? 1.0 : 0.0;
  }
  return Tensor(x.shape(), std::move(v), false);
}

Tensor clip_mask(const Tensor& x, double lo, const Tensor& hi) {
  // x*1{lo<=x<=hi} + hi*1{x>hi} + lo*1{x<lo}
  Tensor inside = mask_between(x, lo, hi);
  Tensor above = mask_gt(x, hi);
  Tensor clipped = add(multiply(x, inside), multiply(detach(hi), above));
  if (lo != 0.0) {
    Tensor below = mask_lt(x, lo);
    clipped = add(clipped, scale(below, lo));
  }
  return clipped;
}

Tensor clip_mask(const Tensor& x, double lo, double hi) {
  Tensor inside = mask_between(x, lo, hi);
  std::vector<double> above(x.size());
  for (std::size_t i = 0; i < above.size(); ++i) above[i] = x.values()[i] > hi ? hi : 0.0;
  Tensor clipped = add(multiply(x, inside), Tensor(x.shape(), std::move(above), false));
  if (lo != 0.0) {
    Tensor below = mask_lt(x, lo);
    clipped = add(clipped, scale(below, lo));
  }
  return clipped;
}

// ---- dispatch ---------------------------------------------------------------------

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Add: return "add";
    case OpKind::Subtract: return "subtract";
    case OpKind::Multiply: return "multiply";
    case OpKind::Divide: return "divide";
    case OpKind::MatMul: return "matmul";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Softplus: return "softplus";
    case OpKind::Relu: return "relu";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Square: return "square";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Concat: return "concat";
  }
  return "?";
}

Tensor primitive_forward(OpKind kind, const std::vector<Tensor>& inputs) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n)
      throw std::invalid_argument(std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                                  " inputs, got " + std::to_string(inputs.size()));
  };
  switch (kind) {
    case OpKind::Add: need(2); return add(inputs[0], inputs[1]);
    case OpKind::Subtract: need(2); return subtract(inputs[0], inputs[1]);
    case OpKind::Multiply: need(2); return multiply(inputs[0], inputs[1]);
    case OpKind::Divide: need(2); return divide(inputs[0], inputs[1]);
    case OpKind::MatMul: need(2); return matmul(inputs[0], inputs[1]);
    case OpKind::Sigmoid: need(1); return sigmoid(inputs[0]);
    case OpKind::Tanh: need(1); return tanh(inputs[0]);
    case OpKind::Softplus: need(1); return softplus(inputs[0]);
    case OpKind::Relu: need(1); return relu(inputs[0]);
    case OpKind::Sqrt: need(1); return sqrt(inputs[0]);
    case OpKind::Square: need(1); return square(inputs[0]);
    case OpKind::Sum: need(1); return sum(inputs[0]);
    case OpKind::Mean: need(1); return mean(inputs[0]);
    case OpKind::Concat: return concat_cols(inputs);
  }
  throw std::invalid_argument("primitive_forward: unknown op kind");
}

}  // namespace piyield
