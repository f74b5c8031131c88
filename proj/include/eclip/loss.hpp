#pragma once

// Sentiment-guided contrastive objective.
//
// Logit (i, j) of the video→text direction is v_i·t_j/τ. Pair (i, j), i≠j,
// is pushed down by w_ij = β / KL(s_i‖s_j); when the KL is below
// kl_epsilon the pair is removed from the denominator altogether.

#include <cstddef>
#include <span>
#include <vector>

#include "eclip/sentiment.hpp"
#include "eclip/tensor.hpp"

namespace eclip {

inline constexpr double kDefaultKlEpsilon = 1e-8;

struct ReweightMatrix {
  std::size_t batch = 0;
  std::vector<double> w;              // batch×batch, row-major
  std::vector<std::uint8_t> removed;  // 1 where w is infinite

  double at(std::size_t i, std::size_t j) const { return w[i * batch + j]; }
  bool is_removed(std::size_t i, std::size_t j) const { return removed[i * batch + j] != 0; }
  std::size_t removed_count() const;
  // Additive logit offsets: -w, or -inf for removed pairs.
  Tensor offsets() const;
};

// w_ii = 0. β = 0 yields the all-zero matrix with no removals.
ReweightMatrix reweight_matrix(std::span<const SentimentDistribution> s, double beta,
                               double kl_epsilon = kDefaultKlEpsilon);

// (v tᵀ) * inverse_tau, B×B.
Tensor similarity_logits(Graph& g, const Tensor& v, const Tensor& t, const Tensor& inverse_tau);

// Σ_i [ logsumexp_j(logits_ij - w_ij) - logits_ii ], removed pairs excluded.
Tensor snce(Graph& g, const Tensor& logits, const ReweightMatrix& w);
// (SNCE(v, t, s) + SNCE(t, v, s)) / 2B; the text→video direction is the
// transposed logits with the same reweighting matrix.
Tensor total_loss(Graph& g, const Tensor& logits, const ReweightMatrix& w);

// Embedding-level forms. v and t are B×d with nonzero rows; τ > 0.
Tensor snce(Graph& g, const Tensor& v, const Tensor& t, std::span<const SentimentDistribution> s,
            double tau, double beta);
Tensor total_loss(Graph& g, const Tensor& v, const Tensor& t, std::span<const SentimentDistribution> s,
                  double tau, double beta);

}  // namespace eclip
