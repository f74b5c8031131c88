#include "eclip/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "eclip/error.hpp"

namespace eclip {

std::string shape_string(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  os << ']';
  return os.str();
}

namespace {

std::size_t product(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::span<double> grad_of(const Tensor& t) {
  auto* s = t.storage();
  if (s->grad.empty()) s->grad.assign(s->value.size(), 0.0);
  return s->grad;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

Tensor make_output(Shape dims, std::vector<double> data, bool requires_grad) {
  return Tensor(std::move(dims), std::move(data), requires_grad);
}

}  // namespace

// ---- Tensor --------------------------------------------------------------

Tensor::Tensor(Shape dims, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<detail::Storage>()) {
  for (auto d : dims) {
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_string(dims));
  }
  if (product(dims) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match dims " +
                     shape_string(dims));
  }
  impl_->dims = std::move(dims);
  impl_->value = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape dims, bool requires_grad) { return filled(std::move(dims), 0.0, requires_grad); }

Tensor Tensor::filled(Shape dims, double value, bool requires_grad) {
  const auto n = product(dims);
  return Tensor(std::move(dims), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows, bool requires_grad) {
  if (rows.empty()) throw ShapeError("matrix literal needs at least one row");
  std::vector<double> data;
  for (const auto& r : rows) {
    if (r.size() != rows.front().size()) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), rows.front().size()}, std::move(data), requires_grad);
}

std::size_t Tensor::rows() const { return impl_->dims.empty() ? 1 : impl_->dims.front(); }

std::size_t Tensor::cols() const {
  if (impl_->dims.size() <= 1) return impl_->dims.empty() ? 1 : 1;
  return product(Shape(impl_->dims.begin() + 1, impl_->dims.end()));
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(dims()));
  return impl_->value[0];
}

std::span<double> Tensor::mutable_grad() { return grad_of(*this); }

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const { return Tensor(impl_->dims, impl_->value, impl_->requires_grad); }

Tensor Tensor::reshaped(Shape dims) const { return Tensor(std::move(dims), impl_->value, false); }

// ---- Graph ---------------------------------------------------------------

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kAddRow: return "add_row";
    case OpKind::kMulTiled: return "mul_tiled";
    case OpKind::kScale: return "scale";
    case OpKind::kScaleBy: return "scale_by";
    case OpKind::kExp: return "exp";
    case OpKind::kClampMax: return "clamp_max";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kOneMinus: return "one_minus";
    case OpKind::kGelu: return "gelu";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kSoftmax: return "masked_softmax";
    case OpKind::kLogSumExp: return "logsumexp_rows";
    case OpKind::kDiagonal: return "diagonal";
    case OpKind::kSum: return "sum";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kSegmentSum: return "segment_sum_rows";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kL2Normalize: return "l2_normalize_rows";
    case OpKind::kAttnScores: return "attn_scores";
    case OpKind::kAttnApply: return "attn_apply";
  }
  return "?";
}

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

Tensor Graph::record(OpKind op, std::vector<Tensor> inputs, Tensor output, BackwardFn backward) {
  output.storage()->produced = true;
  nodes_.push_back(Node{op, std::move(inputs), output, std::move(backward)});
  return output;
}

void Graph::backward(const Tensor& seed) {
  if (seed.numel() != 1) {
    throw ShapeError("backward seed must be scalar, got " + shape_string(seed.dims()));
  }
  if (!seed.requires_grad()) return;

  std::size_t end = nodes_.size();
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].output.same(seed)) end = i + 1;
  }
  if (!seed.storage()->produced) {
    grad_of(seed)[0] += 1.0;
    return;
  }
  for (std::size_t i = 0; i < end; ++i) {
    auto* s = nodes_[i].output.storage();
    s->grad.assign(s->value.size(), 0.0);
  }
  grad_of(seed)[0] = 1.0;
  for (std::size_t i = end; i-- > 0;) nodes_[i].backward();
}

// ---- ops -----------------------------------------------------------------

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), p = b.cols();
  require(b.rows() == k, "matmul: inner dims differ, " + shape_string(a.dims()) + " x " +
                             shape_string(b.dims()));
  std::vector<double> out(n * p, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.data() + i * p;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = A[i * k + t];
      const double* brow = B + t * p;
      for (std::size_t j = 0; j < p; ++j) row[j] += av * brow[j];
    }
  }
  const bool rg = any_requires_grad({&a, &b});
  Tensor y = make_output({n, p}, std::move(out), rg);
  if (!rg) return y;
  return g.record(OpKind::kMatMul, {a, b}, y, [a, b, y, n, k, p]() {
    const double* dY = y.grad().data();
    if (a.requires_grad()) {
      double* dA = grad_of(a).data();
      const double* B = b.data().data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < k; ++t) {
          double s = 0.0;
          const double* brow = B + t * p;
          const double* dyrow = dY + i * p;
          for (std::size_t j = 0; j < p; ++j) s += dyrow[j] * brow[j];
          dA[i * k + t] += s;
        }
    }
    if (b.requires_grad()) {
      double* dB = grad_of(b).data();
      const double* A = a.data().data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < k; ++t) {
          const double av = A[i * k + t];
          double* dbrow = dB + t * p;
          const double* dyrow = dY + i * p;
          for (std::size_t j = 0; j < p; ++j) dbrow[j] += av * dyrow[j];
        }
    }
  });
}

Tensor transpose(Graph& g, const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.data()[i * c + j];
  Tensor y = make_output({c, r}, std::move(out), a.requires_grad());
  if (!a.requires_grad()) return y;
  return g.record(OpKind::kTranspose, {a}, y, [a, y, r, c]() {
    auto dA = grad_of(a);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dA[i * c + j] += y.grad()[j * r + i];
  });
}

namespace {

template <typename Fwd, typename Back>
Tensor binary_same_shape(Graph& g, OpKind op, const Tensor& a, const Tensor& b, Fwd fwd, Back back) {
  require(a.dims() == b.dims(), std::string(op_name(op)) + ": shape mismatch " +
                                    shape_string(a.dims()) + " vs " + shape_string(b.dims()));
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a[i], b[i]);
  const bool rg = any_requires_grad({&a, &b});
  Tensor y = make_output(a.dims(), std::move(out), rg);
  if (!rg) return y;
  return g.record(op, {a, b}, y, [a, b, y, back]() {
    const auto dy = y.grad();
    if (a.requires_grad()) {
      auto da = grad_of(a);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += back(dy[i], a[i], b[i], true);
    }
    if (b.requires_grad()) {
      auto db = grad_of(b);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += back(dy[i], a[i], b[i], false);
    }
  });
}

template <typename Fwd, typename Back>
Tensor unary(Graph& g, OpKind op, const Tensor& x, Fwd fwd, Back back) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  Tensor y = make_output(x.dims(), std::move(out), x.requires_grad());
  if (!x.requires_grad()) return y;
  return g.record(op, {x}, y, [x, y, back]() {
    auto dx = grad_of(x);
    const auto dy = y.grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * back(x[i], y[i]);
  });
}

}  // namespace

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      g, OpKind::kAdd, a, b, [](double x, double y) { return x + y; },
      [](double dy, double, double, bool) { return dy; });
}

Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      g, OpKind::kSub, a, b, [](double x, double y) { return x - y; },
      [](double dy, double, double, bool first) { return first ? dy : -dy; });
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      g, OpKind::kMul, a, b, [](double x, double y) { return x * y; },
      [](double dy, double x, double y, bool first) { return first ? dy * y : dy * x; });
}

Tensor add_row(Graph& g, const Tensor& x, const Tensor& bias) {
  const std::size_t r = x.rows(), c = x.cols();
  require(bias.numel() == c, "add_row: bias length " + std::to_string(bias.numel()) +
                                 " != cols " + std::to_string(c));
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bias[j];
  const bool rg = any_requires_grad({&x, &bias});
  Tensor y = make_output(x.dims(), std::move(out), rg);
  if (!rg) return y;
  return g.record(OpKind::kAddRow, {x, bias}, y, [x, bias, y, r, c]() {
    const auto dy = y.grad();
    if (x.requires_grad()) {
      auto dx = grad_of(x);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    }
    if (bias.requires_grad()) {
      auto db = grad_of(bias);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) db[j] += dy[i * c + j];
    }
  });
}

Tensor mul_tiled(Graph& g, const Tensor& x, const Tensor& w) {
  const std::size_t n = w.rows();
  require(w.cols() == n && x.cols() == n && x.rows() % n == 0,
          "mul_tiled: " + shape_string(x.dims()) + " is not a stack of " + shape_string(w.dims()));
  const std::size_t r = x.rows();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] * w[(i % n) * n + j];
  const bool rg = any_requires_grad({&x, &w});
  Tensor y = make_output(x.dims(), std::move(out), rg);
  if (!rg) return y;
  return g.record(OpKind::kMulTiled, {x, w}, y, [x, w, y, r, n]() {
    const auto dy = y.grad();
    if (x.requires_grad()) {
      auto dx = grad_of(x);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += dy[i * n + j] * w[(i % n) * n + j];
    }
    if (w.requires_grad()) {
      auto dw = grad_of(w);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < n; ++j) dw[(i % n) * n + j] += dy[i * n + j] * x[i * n + j];
    }
  });
}

Tensor scale(Graph& g, const Tensor& x, double factor) {
  return unary(
      g, OpKind::kScale, x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor scale_by(Graph& g, const Tensor& x, const Tensor& s) {
  require(s.numel() == 1, "scale_by: factor must have one element, got " + shape_string(s.dims()));
  const double f = s[0];
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * f;
  const bool rg = any_requires_grad({&x, &s});
  Tensor y = make_output(x.dims(), std::move(out), rg);
  if (!rg) return y;
  return g.record(OpKind::kScaleBy, {x, s}, y, [x, s, y]() {
    const auto dy = y.grad();
    if (x.requires_grad()) {
      auto dx = grad_of(x);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * s[0];
    }
    if (s.requires_grad()) {
      double acc = 0.0;
      for (std::size_t i = 0; i < dy.size(); ++i) acc += dy[i] * x[i];
      grad_of(s)[0] += acc;
    }
  });
}

Tensor exp(Graph& g, const Tensor& x) {
  return unary(
      g, OpKind::kExp, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor clamp_max(Graph& g, const Tensor& x, double hi) {
  return unary(
      g, OpKind::kClampMax, x, [hi](double v) { return std::min(v, hi); },
      [hi](double v, double) { return v > hi ? 0.0 : 1.0; });
}

Tensor sigmoid(Graph& g, const Tensor& x) {
  return unary(
      g, OpKind::kSigmoid, x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor one_minus(Graph& g, const Tensor& x) {
  return unary(
      g, OpKind::kOneMinus, x, [](double v) { return 1.0 - v; }, [](double, double) { return -1.0; });
}

Tensor gelu(Graph& g, const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      g, OpKind::kGelu, x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t r = x.rows(), c = x.cols();
  require(gain.numel() == c && bias.numel() == c,
          "layer_norm: gain/bias length must equal cols " + std::to_string(c));
  std::vector<double> out(x.numel()), xhat(x.numel()), inv(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data().data() + i * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(c);
    inv[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mean) * inv[i];
      out[i * c + j] = xhat[i * c + j] * gain[j] + bias[j];
    }
  }
  const bool rg = any_requires_grad({&x, &gain, &bias});
  Tensor y = make_output(x.dims(), std::move(out), rg);
  if (!rg) return y;
  return g.record(OpKind::kLayerNorm, {x, gain, bias}, y,
                  [x, gain, bias, y, xhat = std::move(xhat), inv = std::move(inv), r, c]() {
                    const auto dy = y.grad();
                    if (gain.requires_grad()) {
                      auto dg = grad_of(gain);
                      for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < c; ++j) dg[j] += dy[i * c + j] * xhat[i * c + j];
                    }
                    if (bias.requires_grad()) {
                      auto db = grad_of(bias);
                      for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < c; ++j) db[j] += dy[i * c + j];
                    }
                    if (x.requires_grad()) {
                      auto dx = grad_of(x);
                      const double cn = static_cast<double>(c);
                      for (std::size_t i = 0; i < r; ++i) {
                        double m1 = 0.0, m2 = 0.0;
                        for (std::size_t j = 0; j < c; ++j) {
                          const double dxh = dy[i * c + j] * gain[j];
                          m1 += dxh;
                          m2 += dxh * xhat[i * c + j];
                        }
                        m1 /= cn;
                        m2 /= cn;
                        for (std::size_t j = 0; j < c; ++j) {
                          const double dxh = dy[i * c + j] * gain[j];
                          dx[i * c + j] += inv[i] * (dxh - m1 - xhat[i * c + j] * m2);
                        }
                      }
                    }
                  });
}

namespace {

void check_mask(const Tensor& x, const std::optional<Tensor>& mask, const char* op) {
  if (!mask) return;
  require(mask->dims() == x.dims(), std::string(op) + ": mask shape " +
                                        shape_string(mask->dims()) + " != " +
                                        shape_string(x.dims()));
}

// Softmax of one row of (x + mask); returns false if every entry is masked.
bool softmax_row(const double* x, const double* mask, std::size_t c, double* out, double* lse) {
  double mx = kNegInf;
  for (std::size_t j = 0; j < c; ++j) {
    const double v = mask ? x[j] + mask[j] : x[j];
    if (v > mx) mx = v;
  }
  if (mx == kNegInf) {
    std::fill(out, out + c, 0.0);
    if (lse) *lse = kNegInf;
    return false;
  }
  double z = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    const double v = mask ? x[j] + mask[j] : x[j];
    out[j] = v == kNegInf ? 0.0 : std::exp(v - mx);
    z += out[j];
  }
  for (std::size_t j = 0; j < c; ++j) out[j] /= z;
  if (lse) *lse = mx + std::log(z);
  return true;
}

}  // namespace

Tensor masked_softmax(Graph& g, const Tensor& x, const std::optional<Tensor>& mask) {
  check_mask(x, mask, "masked_softmax");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < r; ++i) {
    softmax_row(x.data().data() + i * c, mask ? mask->data().data() + i * c : nullptr, c,
                out.data() + i * c, nullptr);
  }
  Tensor y = make_output(x.dims(), std::move(out), x.requires_grad());
  if (!x.requires_grad()) return y;
  return g.record(OpKind::kSoftmax, {x}, y, [x, y, r, c]() {
    auto dx = grad_of(x);
    const auto dy = y.grad();
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += y[i * c + j] * dy[i * c + j];
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += y[i * c + j] * (dy[i * c + j] - dot);
    }
  });
}

Tensor logsumexp_rows(Graph& g, const Tensor& x, const std::optional<Tensor>& mask) {
  check_mask(x, mask, "logsumexp_rows");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r), probs(x.numel());
  for (std::size_t i = 0; i < r; ++i) {
    softmax_row(x.data().data() + i * c, mask ? mask->data().data() + i * c : nullptr, c,
                probs.data() + i * c, &out[i]);
  }
  Tensor y = make_output({r, 1}, std::move(out), x.requires_grad());
  if (!x.requires_grad()) return y;
  return g.record(OpKind::kLogSumExp, {x}, y, [x, y, probs = std::move(probs), r, c]() {
    auto dx = grad_of(x);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += y.grad()[i] * probs[i * c + j];
  });
}

Tensor diagonal(Graph& g, const Tensor& x) {
  const std::size_t n = x.rows();
  require(x.cols() == n, "diagonal: not square " + shape_string(x.dims()));
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i * n + i];
  Tensor y = make_output({n, 1}, std::move(out), x.requires_grad());
  if (!x.requires_grad()) return y;
  return g.record(OpKind::kDiagonal, {x}, y, [x, y, n]() {
    auto dx = grad_of(x);
    for (std::size_t i = 0; i < n; ++i) dx[i * n + i] += y.grad()[i];
  });
}

Tensor sum(Graph& g, const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor y = make_output({1}, {s}, x.requires_grad());
  if (!x.requires_grad()) return y;
  return g.record(OpKind::kSum, {x}, y, [x, y]() {
    auto dx = grad_of(x);
    for (auto& v : dx) v += y.grad()[0];
  });
}

Tensor gather_rows(Graph& g, const Tensor& x, std::vector<std::size_t> indices) {
  const std::size_t r = x.rows(), c = x.cols();
  require(!indices.empty(), "gather_rows: empty index list");
  std::vector<double> out(indices.size() * c);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < r, "gather_rows: index " + std::to_string(indices[i]) + " >= rows " +
                                std::to_string(r));
    std::copy_n(x.data().data() + indices[i] * c, c, out.data() + i * c);
  }
  Tensor y = make_output({indices.size(), c}, std::move(out), x.requires_grad());
  if (!x.requires_grad()) return y;
  return g.record(OpKind::kGatherRows, {x}, y, [x, y, indices = std::move(indices), c]() {
    auto dx = grad_of(x);
    const auto dy = y.grad();
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) dx[indices[i] * c + j] += dy[i * c + j];
  });
}

Tensor segment_sum_rows(Graph& g, const Tensor& x, std::vector<std::vector<std::size_t>> segments) {
  const std::size_t r = x.rows(), c = x.cols();
  require(!segments.empty(), "segment_sum_rows: no segments");
  std::vector<double> out(segments.size() * c, 0.0);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    for (auto idx : segments[s]) {
      require(idx < r, "segment_sum_rows: index " + std::to_string(idx) + " >= rows " +
                           std::to_string(r));
      for (std::size_t j = 0; j < c; ++j) out[s * c + j] += x[idx * c + j];
    }
  }
  Tensor y = make_output({segments.size(), c}, std::move(out), x.requires_grad());
  if (!x.requires_grad()) return y;
  return g.record(OpKind::kSegmentSum, {x}, y, [x, y, segments = std::move(segments), c]() {
    auto dx = grad_of(x);
    for (std::size_t s = 0; s < segments.size(); ++s)
      for (auto idx : segments[s])
        for (std::size_t j = 0; j < c; ++j) dx[idx * c + j] += y.grad()[s * c + j];
  });
}

Tensor slice_cols(Graph& g, const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t r = x.rows(), c = x.cols();
  require(count > 0 && begin + count <= c, "slice_cols: [" + std::to_string(begin) + ", " +
                                               std::to_string(begin + count) + ") outside " +
                                               std::to_string(c) + " cols");
  std::vector<double> out(r * count);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(x.data().data() + i * c + begin, count, out.data() + i * count);
  Tensor y = make_output({r, count}, std::move(out), x.requires_grad());
  if (!x.requires_grad()) return y;
  return g.record(OpKind::kSliceCols, {x}, y, [x, y, r, c, begin, count]() {
    auto dx = grad_of(x);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) dx[i * c + begin + j] += y.grad()[i * count + j];
  });
}

Tensor concat_rows(Graph& g, const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows: nothing to concatenate");
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  bool rg = false;
  for (const auto& p : parts) {
    require(p.cols() == c, "concat_rows: column mismatch");
    r += p.rows();
    rg = rg || p.requires_grad();
  }
  std::vector<double> out;
  out.reserve(r * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor y = make_output({r, c}, std::move(out), rg);
  if (!rg) return y;
  return g.record(OpKind::kConcatRows, parts, y, [parts, y]() {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) {
        auto dp = grad_of(p);
        for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += y.grad()[offset + i];
      }
      offset += p.numel();
    }
  });
}

Tensor l2_normalize_rows(Graph& g, const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(x.numel()), norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += x[i * c + j] * x[i * c + j];
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0) throw ValidationError("l2_normalize_rows: zero-norm row " + std::to_string(i));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] / norms[i];
  }
  Tensor y = make_output(x.dims(), std::move(out), x.requires_grad());
  if (!x.requires_grad()) return y;
  return g.record(OpKind::kL2Normalize, {x}, y, [x, y, norms = std::move(norms), r, c]() {
    auto dx = grad_of(x);
    const auto dy = y.grad();
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += y[i * c + j] * dy[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        dx[i * c + j] += (dy[i * c + j] - y[i * c + j] * dot) / norms[i];
    }
  });
}

Tensor attn_scores(Graph& g, const Tensor& q, const Tensor& k, std::size_t groups,
                   std::size_t heads, double factor) {
  require(q.dims() == k.dims(), "attn_scores: q/k shape mismatch " + shape_string(q.dims()) +
                                    " vs " + shape_string(k.dims()));
  const std::size_t d = q.cols();
  require(groups > 0 && q.rows() % groups == 0, "attn_scores: rows not divisible by groups");
  require(heads > 0 && d % heads == 0, "attn_scores: width not divisible by heads");
  const std::size_t n = q.rows() / groups, dh = d / heads;
  std::vector<double> out(groups * heads * n * n);
  const double* Q = q.data().data();
  const double* K = k.data().data();
  for (std::size_t gi = 0; gi < groups; ++gi)
    for (std::size_t h = 0; h < heads; ++h) {
      double* block = out.data() + (gi * heads + h) * n * n;
      for (std::size_t i = 0; i < n; ++i) {
        const double* qi = Q + (gi * n + i) * d + h * dh;
        for (std::size_t j = 0; j < n; ++j) {
          const double* kj = K + (gi * n + j) * d + h * dh;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          block[i * n + j] = factor * s;
        }
      }
    }
  const bool rg = any_requires_grad({&q, &k});
  Tensor y = make_output({groups * heads * n, n}, std::move(out), rg);
  if (!rg) return y;
  return g.record(OpKind::kAttnScores, {q, k}, y, [q, k, y, groups, heads, n, d, dh, factor]() {
    const double* dY = y.grad().data();
    double* dQ = q.requires_grad() ? grad_of(q).data() : nullptr;
    double* dK = k.requires_grad() ? grad_of(k).data() : nullptr;
    const double* Q = q.data().data();
    const double* K = k.data().data();
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (std::size_t h = 0; h < heads; ++h) {
        const double* block = dY + (gi * heads + h) * n * n;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double s = factor * block[i * n + j];
            if (s == 0.0) continue;
            const std::size_t qi = (gi * n + i) * d + h * dh;
            const std::size_t kj = (gi * n + j) * d + h * dh;
            if (dQ)
              for (std::size_t c = 0; c < dh; ++c) dQ[qi + c] += s * K[kj + c];
            if (dK)
              for (std::size_t c = 0; c < dh; ++c) dK[kj + c] += s * Q[qi + c];
          }
      }
  });
}

Tensor attn_apply(Graph& g, const Tensor& probs, const Tensor& v, std::size_t groups,
                  std::size_t heads) {
  const std::size_t d = v.cols();
  require(groups > 0 && v.rows() % groups == 0, "attn_apply: rows not divisible by groups");
  require(heads > 0 && d % heads == 0, "attn_apply: width not divisible by heads");
  const std::size_t n = v.rows() / groups, dh = d / heads;
  require(probs.cols() == n && probs.rows() == groups * heads * n,
          "attn_apply: probs " + shape_string(probs.dims()) + " do not match values " +
              shape_string(v.dims()));
  std::vector<double> out(v.numel(), 0.0);
  const double* P = probs.data().data();
  const double* V = v.data().data();
  for (std::size_t gi = 0; gi < groups; ++gi)
    for (std::size_t h = 0; h < heads; ++h) {
      const double* block = P + (gi * heads + h) * n * n;
      for (std::size_t i = 0; i < n; ++i) {
        double* oi = out.data() + (gi * n + i) * d + h * dh;
        for (std::size_t j = 0; j < n; ++j) {
          const double p = block[i * n + j];
          if (p == 0.0) continue;
          const double* vj = V + (gi * n + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
  const bool rg = any_requires_grad({&probs, &v});
  Tensor y = make_output(v.dims(), std::move(out), rg);
  if (!rg) return y;
  return g.record(OpKind::kAttnApply, {probs, v}, y, [probs, v, y, groups, heads, n, d, dh]() {
    const double* dY = y.grad().data();
    double* dP = probs.requires_grad() ? grad_of(probs).data() : nullptr;
    double* dV = v.requires_grad() ? grad_of(v).data() : nullptr;
    const double* P = probs.data().data();
    const double* V = v.data().data();
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t base = (gi * heads + h) * n * n;
        for (std::size_t i = 0; i < n; ++i) {
          const double* dyi = dY + (gi * n + i) * d + h * dh;
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t vj = (gi * n + j) * d + h * dh;
            if (dP) {
              double s = 0.0;
              for (std::size_t c = 0; c < dh; ++c) s += dyi[c] * V[vj + c];
              dP[base + i * n + j] += s;
            }
            if (dV) {
              const double p = P[base + i * n + j];
              if (p != 0.0)
                for (std::size_t c = 0; c < dh; ++c) dV[vj + c] += p * dyi[c];
            }
          }
        }
      }
  });
}

// ---- utilities -----------------------------------------------------------

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) {
    throw ValidationError("kl_divergence: distributions differ in length");
  }
  constexpr double kFloor = 1e-12;
  auto check = [](std::span<const double> d, const char* which) {
    double s = 0.0;
    for (double v : d) {
      if (!(v >= 0.0)) throw ValidationError(std::string("kl_divergence: negative entry in ") + which);
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) {
      throw ValidationError(std::string("kl_divergence: ") + which + " sums to " + std::to_string(s));
    }
  };
  check(p, "p");
  check(q, "q");
  double kl = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double pk = std::max(p[k], kFloor), qk = std::max(q[k], kFloor);
    kl += pk * std::log(pk / qk);
  }
  return kl;
}

double finite_diff_check(const std::function<Tensor(Graph&)>& f, std::vector<Tensor> params,
                         double eps) {
  for (auto& p : params) p.zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    Tensor out = f(g);
    g.backward(out);
    for (auto& p : params) {
      if (p.has_grad()) {
        analytic.emplace_back(p.grad().begin(), p.grad().end());
      } else {
        analytic.emplace_back(p.numel(), 0.0);
      }
    }
  }
  auto eval = [&]() {
    Graph g;
    return f(g).item();
  };
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + eps;
      const double fp = eval();
      values[i] = orig - eps;
      const double fm = eval();
      values[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[pi][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

}  // namespace eclip
