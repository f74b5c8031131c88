#pragma once

// Model inspection: subject-token attention profile and gradient checking.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "eclip/data.hpp"
#include "eclip/model.hpp"

namespace eclip {

// Per frame-encoder layer, the attention mass the z_hmn query row puts on
// the subject patches P, averaged over heads and frames. In SAAM layers the
// row is the effective attention S⊙(J−A) + (S⊙A)U. Throws ValidationError
// for vanilla attention.
std::vector<double> hmn_attention_profile(const EmotionClipModel& model, const FrameInput& clip,
                                          double mask_threshold = 0.0);

// Effective per-query attention of one SAAM layer, same layout as S.
Tensor effective_saam_attention(const AttentionTrace& trace, std::size_t groups, std::size_t heads);

struct GradcheckReport {
  std::map<std::string, double> errors;  // max relative error per parameter
  double max_error = 0.0;
  std::size_t elements = 0;
};

// Finite-difference check of total_loss over every trainable parameter of
// a model built from `config`, on a synthetic batch of `batch` clips.
GradcheckReport model_gradcheck(const ModelConfig& config, std::uint64_t seed, std::size_t batch = 2,
                                double beta = 1.0, double eps = 1e-5);

}  // namespace eclip
