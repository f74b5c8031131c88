#pragma once

// Canonical attention, subject-aware attention masking (SAAM) and the
// subject-aware prompting (SAP) token.
//
// Frame token layout is fixed: patches 0..m-1, then z_cls at m, then z_hmn at m+1.

#include <cstddef>
#include <optional>
#include <vector>

#include "eclip/tensor.hpp"

namespace eclip {

// Sorted, duplicate-free patch indices that contain the subject.
class SubjectIndexSet {
 public:
  SubjectIndexSet() = default;
  // Sorts and deduplicates.
  explicit SubjectIndexSet(std::vector<std::size_t> indices);

  static SubjectIndexSet all(std::size_t m);

  const std::vector<std::size_t>& indices() const { return indices_; }
  bool empty() const { return indices_.empty(); }
  std::size_t size() const { return indices_.size(); }
  bool contains(std::size_t i) const;
  // Throws ValidationError if any index is >= m.
  void validate(std::size_t m) const;

  bool operator==(const SubjectIndexSet&) const = default;

 private:
  std::vector<std::size_t> indices_;
};

// (m+2)×(m+2) additive mask with entries in {0, -inf}.
struct MaskMatrix {
  std::size_t m = 0;
  Tensor entries;

  std::size_t size() const { return m + 2; }
  std::size_t cls_index() const { return m; }
  std::size_t hmn_index() const { return m + 1; }
  double at(std::size_t row, std::size_t col) const { return entries.at(row, col); }
};

// Block mask over [patches | cls | hmn]:
//   patch/cls rows x patch/cls cols : 0
//   patch row i, hmn col            : -inf iff i ∉ P (cls row stays 0)
//   hmn row, patch col i            : -inf iff i ∉ P
//   hmn row, cls col                : -inf
//   hmn row, hmn col                : 0
MaskMatrix build_mask_matrix(std::size_t m, const SubjectIndexSet& subject);

// Stacks one mask per group, each repeated `heads` times, matching the
// attn_scores block layout.
Tensor tile_masks(const std::vector<MaskMatrix>& masks, std::size_t heads);

// Optional capture of intermediate attention maps for diagnostics.
struct AttentionTrace {
  Tensor context;  // S: softmax(QKᵀ/√d), blocks of n×n
  Tensor subject;  // U (SAAM only)
  Tensor gate;     // A (SAAM only), n×n
};

// softmax(QKᵀ/√d_head)·V, per group and head. key_mask, when given, is an
// additive mask in attn_scores layout.
Tensor canonical_attention(Graph& g, const Tensor& q, const Tensor& k, const Tensor& v,
                           std::size_t groups = 1, std::size_t heads = 1,
                           const std::optional<Tensor>& key_mask = std::nullopt,
                           AttentionTrace* trace = nullptr);

// U = softmax((QKᵀ + M)/√d_head). `masks` is in attn_scores layout.
Tensor subject_weight_matrix(Graph& g, const Tensor& q, const Tensor& k, const Tensor& masks,
                             std::size_t groups = 1, std::size_t heads = 1);
Tensor subject_weight_matrix(Graph& g, const Tensor& q, const Tensor& k, const MaskMatrix& mask);

// Mixes context attention S with the subject stream:
//   (S ⊙ (J - A))·V + (S ⊙ A)·(U·V)
// where ⊙ is elementwise and A (n×n) is shared by every group and head.
Tensor saam_mix(Graph& g, const Tensor& s, const Tensor& u, const Tensor& a, const Tensor& v,
                std::size_t groups, std::size_t heads);

// saam_mix with S = softmax(QKᵀ/√d_head).
Tensor saam_attention(Graph& g, const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& u,
                      const Tensor& a, std::size_t groups = 1, std::size_t heads = 1,
                      AttentionTrace* trace = nullptr);

// z_hmn = Σ_{i∈P} e_i as a 1×d row; the zero row when P is empty.
Tensor sap_token(Graph& g, const Tensor& positional, const SubjectIndexSet& subject);

}  // namespace eclip
