#pragma once

// Dense float64 tensors with a tape-based reverse-mode autodiff.
//
// Every op takes the Graph it records onto. An op whose inputs all have
// requires_grad == false records nothing, so inference paths pay no tape cost.
// Most ops are two-dimensional: a tensor of rank r is viewed as
// rows = dims[0], cols = product(dims[1..]).

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace eclip {

using Shape = std::vector<std::size_t>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::string shape_string(const Shape& dims);

namespace detail {
struct Storage {
  Shape dims;
  std::vector<double> value;
  std::vector<double> grad;  // empty == absent
  bool requires_grad = false;
  bool produced = false;     // output of some recorded op
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape dims, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape dims, bool requires_grad = false);
  static Tensor filled(Shape dims, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // Row-major literal, e.g. matrix({{1,2},{3,4}}).
  static Tensor matrix(const std::vector<std::vector<double>>& rows, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& dims() const { return impl_->dims; }
  std::size_t rank() const { return impl_->dims.size(); }
  std::size_t numel() const { return impl_->value.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return impl_->value; }
  // Parameters are mutated in place by optimizers and finite-difference probes.
  std::span<double> mutable_data() { return impl_->value; }
  double operator[](std::size_t i) const { return impl_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return impl_->value[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad() { impl_->grad.clear(); }

  // New tensor sharing nothing with this one.
  Tensor clone() const;
  // Same data, new dims (product must match).
  Tensor reshaped(Shape dims) const;

  bool same(const Tensor& other) const { return impl_ == other.impl_; }
  detail::Storage* storage() const { return impl_.get(); }

 private:
  std::shared_ptr<detail::Storage> impl_;
};

enum class OpKind {
  kMatMul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kAddRow,
  kMulTiled,
  kScale,
  kScaleBy,
  kExp,
  kClampMax,
  kSigmoid,
  kOneMinus,
  kGelu,
  kLayerNorm,
  kSoftmax,
  kLogSumExp,
  kDiagonal,
  kSum,
  kGatherRows,
  kSegmentSum,
  kSliceCols,
  kConcatRows,
  kL2Normalize,
  kAttnScores,
  kAttnApply,
};

const char* op_name(OpKind op);

// Append-only tape. Nodes are stored in creation order, which is a
// topological order of the (acyclic) computation.
class Graph {
 public:
  using BackwardFn = std::function<void()>;

  struct Node {
    OpKind op;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  // Registers `output` as produced by `op`. Returns output for chaining.
  Tensor record(OpKind op, std::vector<Tensor> inputs, Tensor output, BackwardFn backward);

  // Populates grads with d(seed)/d(tensor) for every requires_grad tensor
  // reachable from seed. Leaf grads accumulate across calls; intermediate
  // grads are recomputed from scratch each call.
  void backward(const Tensor& seed);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  std::vector<Node> nodes_;
};

// Any input that needs a gradient?
bool any_requires_grad(std::initializer_list<const Tensor*> inputs);

// ---- ops ----------------------------------------------------------------

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);
Tensor transpose(Graph& g, const Tensor& a);
Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
// x[r, c] + bias[c]
Tensor add_row(Graph& g, const Tensor& x, const Tensor& bias);
// x is a vertical stack of n×n blocks; each block is multiplied elementwise by y (n×n).
Tensor mul_tiled(Graph& g, const Tensor& x, const Tensor& y);
Tensor scale(Graph& g, const Tensor& x, double factor);
// x * s for a one-element tensor s.
Tensor scale_by(Graph& g, const Tensor& x, const Tensor& s);
Tensor exp(Graph& g, const Tensor& x);
// min(x, hi); gradient is zero where clamped.
Tensor clamp_max(Graph& g, const Tensor& x, double hi);
Tensor sigmoid(Graph& g, const Tensor& x);
Tensor one_minus(Graph& g, const Tensor& x);
// Exact (erf) GELU.
Tensor gelu(Graph& g, const Tensor& x);
Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// Row-wise softmax of x + mask. Mask entries must be finite or -inf; a row
// with every entry masked yields the zero row.
Tensor masked_softmax(Graph& g, const Tensor& x, const std::optional<Tensor>& mask = std::nullopt);
// Row-wise log(sum(exp(x + mask))) as a rows×1 column. Masked (-inf) entries
// are excluded from the sum and receive exactly zero gradient.
Tensor logsumexp_rows(Graph& g, const Tensor& x, const std::optional<Tensor>& mask = std::nullopt);

Tensor diagonal(Graph& g, const Tensor& x);
Tensor sum(Graph& g, const Tensor& x);
Tensor gather_rows(Graph& g, const Tensor& x, std::vector<std::size_t> indices);
// Row s of the result is the sum of x's rows listed in segments[s] (zero when empty).
Tensor segment_sum_rows(Graph& g, const Tensor& x, std::vector<std::vector<std::size_t>> segments);
Tensor slice_cols(Graph& g, const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_rows(Graph& g, const std::vector<Tensor>& parts);
Tensor l2_normalize_rows(Graph& g, const Tensor& x);

// Batched multi-head attention primitives. q, k, v are stacks of `groups`
// sequences of n rows each; head h uses columns [h*dh, (h+1)*dh).
// attn_scores returns (groups*heads*n)×n with block (group, head) at
// row offset (group*heads + head)*n, holding factor * Q_h K_hᵀ.
Tensor attn_scores(Graph& g, const Tensor& q, const Tensor& k, std::size_t groups,
                   std::size_t heads, double factor);
// Inverse layout of attn_scores: per (group, head), probs(n×n) · V_h(n×dh).
Tensor attn_apply(Graph& g, const Tensor& probs, const Tensor& v, std::size_t groups,
                  std::size_t heads);

// ---- non-graph utilities ------------------------------------------------

// Σ p_k ln(p_k / q_k), both clamped to ≥ 1e-12. Throws ValidationError if
// either input is off the simplex by more than 1e-6.
double kl_divergence(std::span<const double> p, std::span<const double> q);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// `f` must build a scalar on the given graph from the given params.
double finite_diff_check(const std::function<Tensor(Graph&)>& f, std::vector<Tensor> params,
                         double eps = 1e-5);

}  // namespace eclip
