#include "eclip/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "eclip/error.hpp"

namespace eclip {

std::size_t ReweightMatrix::removed_count() const {
  return static_cast<std::size_t>(std::count(removed.begin(), removed.end(), std::uint8_t{1}));
}

Tensor ReweightMatrix::offsets() const {
  std::vector<double> out(batch * batch);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = removed[i] ? kNegInf : -w[i];
  return Tensor({batch, batch}, std::move(out));
}

ReweightMatrix reweight_matrix(std::span<const SentimentDistribution> s, double beta, double kl_epsilon) {
  if (!(beta >= 0.0)) throw ValidationError("reweight_matrix: beta must be >= 0");
  const std::size_t B = s.size();
  ReweightMatrix r{B, std::vector<double>(B * B, 0.0), std::vector<std::uint8_t>(B * B, 0)};
  for (const auto& d : s) d.validate();
  if (beta == 0.0) return r;
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < B; ++j) {
      if (i == j) continue;
      const double kl = kl_divergence(s[i].span(), s[j].span());
      if (kl < kl_epsilon) {
        r.removed[i * B + j] = 1;
      } else {
        r.w[i * B + j] = beta / kl;
      }
    }
  return r;
}

namespace {

void check_embeddings(const Tensor& v, const Tensor& t) {
  if (v.dims() != t.dims() || v.rank() != 2) {
    throw ShapeError("contrastive loss: v " + shape_string(v.dims()) + " and t " + shape_string(t.dims()) +
                     " must both be B×d");
  }
  for (const Tensor* x : {&v, &t}) {
    for (std::size_t i = 0; i < x->rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < x->cols(); ++j) s += x->at(i, j) * x->at(i, j);
      if (s == 0.0) throw ValidationError("contrastive loss: zero-norm embedding at row " + std::to_string(i));
    }
  }
}

ReweightMatrix checked_weights(std::span<const SentimentDistribution> s, std::size_t batch, double tau,
                               double beta) {
  if (!(tau > 0.0)) throw ValidationError("contrastive loss: tau must be > 0");
  if (s.size() != batch) throw ShapeError("contrastive loss: need one sentiment per sample");
  return reweight_matrix(s, beta);
}

}  // namespace

Tensor similarity_logits(Graph& g, const Tensor& v, const Tensor& t, const Tensor& inverse_tau) {
  check_embeddings(v, t);
  return scale_by(g, matmul(g, v, transpose(g, t)), inverse_tau);
}

Tensor snce(Graph& g, const Tensor& logits, const ReweightMatrix& w) {
  const std::size_t B = logits.rows();
  if (logits.cols() != B || w.batch != B) {
    throw ShapeError("snce: logits " + shape_string(logits.dims()) + " vs reweight batch " +
                     std::to_string(w.batch));
  }
  const Tensor lse = logsumexp_rows(g, logits, w.offsets());
  return sub(g, sum(g, lse), sum(g, diagonal(g, logits)));
}

Tensor total_loss(Graph& g, const Tensor& logits, const ReweightMatrix& w) {
  const Tensor both = add(g, snce(g, logits, w), snce(g, transpose(g, logits), w));
  return scale(g, both, 1.0 / (2.0 * static_cast<double>(logits.rows())));
}

Tensor snce(Graph& g, const Tensor& v, const Tensor& t, std::span<const SentimentDistribution> s,
            double tau, double beta) {
  const auto w = checked_weights(s, v.rows(), tau, beta);
  return snce(g, similarity_logits(g, v, t, Tensor::scalar(1.0 / tau)), w);
}

Tensor total_loss(Graph& g, const Tensor& v, const Tensor& t, std::span<const SentimentDistribution> s,
                  double tau, double beta) {
  const auto w = checked_weights(s, v.rows(), tau, beta);
  return total_loss(g, similarity_logits(g, v, t, Tensor::scalar(1.0 / tau)), w);
}

}  // namespace eclip
