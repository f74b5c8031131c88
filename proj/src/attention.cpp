#include "eclip/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "eclip/error.hpp"

namespace eclip {

SubjectIndexSet::SubjectIndexSet(std::vector<std::size_t> indices) : indices_(std::move(indices)) {
  std::sort(indices_.begin(), indices_.end());
  indices_.erase(std::unique(indices_.begin(), indices_.end()), indices_.end());
}

SubjectIndexSet SubjectIndexSet::all(std::size_t m) {
  std::vector<std::size_t> idx(m);
  for (std::size_t i = 0; i < m; ++i) idx[i] = i;
  return SubjectIndexSet(std::move(idx));
}

bool SubjectIndexSet::contains(std::size_t i) const {
  return std::binary_search(indices_.begin(), indices_.end(), i);
}

void SubjectIndexSet::validate(std::size_t m) const {
  if (!indices_.empty() && indices_.back() >= m) {
    throw ValidationError("subject index " + std::to_string(indices_.back()) +
                          " out of range for " + std::to_string(m) + " patches");
  }
}

MaskMatrix build_mask_matrix(std::size_t m, const SubjectIndexSet& subject) {
  if (m == 0) throw ValidationError("build_mask_matrix: need at least one patch");
  subject.validate(m);
  const std::size_t n = m + 2, cls = m, hmn = m + 1;
  std::vector<double> e(n * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (!subject.contains(i)) {
      e[i * n + hmn] = kNegInf;
      e[hmn * n + i] = kNegInf;
    }
  }
  e[hmn * n + cls] = kNegInf;
  return MaskMatrix{m, Tensor({n, n}, std::move(e))};
}

Tensor tile_masks(const std::vector<MaskMatrix>& masks, std::size_t heads) {
  if (masks.empty() || heads == 0) throw ValidationError("tile_masks: nothing to tile");
  const std::size_t n = masks.front().size();
  std::vector<double> out;
  out.reserve(masks.size() * heads * n * n);
  for (const auto& mk : masks) {
    if (mk.size() != n) throw ShapeError("tile_masks: masks of different sizes");
    for (std::size_t h = 0; h < heads; ++h)
      out.insert(out.end(), mk.entries.data().begin(), mk.entries.data().end());
  }
  return Tensor({masks.size() * heads * n, n}, std::move(out));
}

namespace {

double inv_sqrt_head_dim(const Tensor& q, std::size_t heads) {
  if (heads == 0 || q.cols() % heads != 0) {
    throw ShapeError("attention width " + std::to_string(q.cols()) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  return 1.0 / std::sqrt(static_cast<double>(q.cols() / heads));
}

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.dims() != k.dims() || q.dims() != v.dims()) {
    throw ShapeError("attention: Q " + shape_string(q.dims()) + ", K " + shape_string(k.dims()) +
                     ", V " + shape_string(v.dims()) + " must share a shape");
  }
}

}  // namespace

Tensor canonical_attention(Graph& g, const Tensor& q, const Tensor& k, const Tensor& v,
                           std::size_t groups, std::size_t heads,
                           const std::optional<Tensor>& key_mask, AttentionTrace* trace) {
  check_qkv(q, k, v);
  const Tensor scores = attn_scores(g, q, k, groups, heads, inv_sqrt_head_dim(q, heads));
  Tensor s = masked_softmax(g, scores, key_mask);
  if (trace) trace->context = s;
  return attn_apply(g, s, v, groups, heads);
}

Tensor subject_weight_matrix(Graph& g, const Tensor& q, const Tensor& k, const Tensor& masks,
                             std::size_t groups, std::size_t heads) {
  if (q.dims() != k.dims()) throw ShapeError("subject_weight_matrix: Q/K shape mismatch");
  const Tensor raw = attn_scores(g, q, k, groups, heads, 1.0);
  if (masks.dims() != raw.dims()) {
    throw ShapeError("subject_weight_matrix: mask " + shape_string(masks.dims()) +
                     " does not match scores " + shape_string(raw.dims()));
  }
  return masked_softmax(g, scale(g, add(g, raw, masks), inv_sqrt_head_dim(q, heads)));
}

Tensor subject_weight_matrix(Graph& g, const Tensor& q, const Tensor& k, const MaskMatrix& mask) {
  if (q.rows() != mask.size()) {
    throw ShapeError("subject_weight_matrix: " + std::to_string(q.rows()) + " tokens vs mask of " +
                     std::to_string(mask.size()));
  }
  return subject_weight_matrix(g, q, k, mask.entries, 1, 1);
}

Tensor saam_mix(Graph& g, const Tensor& s, const Tensor& u, const Tensor& a, const Tensor& v,
                std::size_t groups, std::size_t heads) {
  if (s.dims() != u.dims()) throw ShapeError("saam: S and U shapes differ");
  const Tensor context = attn_apply(g, mul_tiled(g, s, one_minus(g, a)), v, groups, heads);
  const Tensor routed = attn_apply(g, u, v, groups, heads);
  const Tensor subject = attn_apply(g, mul_tiled(g, s, a), routed, groups, heads);
  return add(g, context, subject);
}

Tensor saam_attention(Graph& g, const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& u,
                      const Tensor& a, std::size_t groups, std::size_t heads, AttentionTrace* trace) {
  check_qkv(q, k, v);
  const Tensor scores = attn_scores(g, q, k, groups, heads, inv_sqrt_head_dim(q, heads));
  Tensor s = masked_softmax(g, scores);
  if (trace) {
    trace->context = s;
    trace->subject = u;
    trace->gate = a;
  }
  return saam_mix(g, s, u, a, v, groups, heads);
}

Tensor sap_token(Graph& g, const Tensor& positional, const SubjectIndexSet& subject) {
  subject.validate(positional.rows());
  return segment_sum_rows(g, positional, {subject.indices()});
}

}  // namespace eclip
