#pragma once

// Dual encoder: subject-aware frame encoder, temporal encoder and text
// encoder, plus the learnable temperature.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "eclip/attention.hpp"
#include "eclip/checkpoint.hpp"
#include "eclip/config.hpp"
#include "eclip/tensor.hpp"
#include "eclip/tokenizer.hpp"

namespace eclip {

// T frames of H×W RGB pixels plus one binary subject mask per frame, stored
// as bytes. Pixel values map to [0,1] by /255.
struct FrameInput {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // T*H*W*3, row-major, channel last
  std::vector<std::uint8_t> masks;   // T*H*W, each 0 or 1

  double pixel(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[((t * height + y) * width + x) * 3 + c] / 255.0;
  }
  std::span<const std::uint8_t> mask(std::size_t t) const {
    return std::span<const std::uint8_t>(masks).subspan(t * height * width, height * width);
  }
  // Throws ValidationError on inconsistent sizes or non-binary masks.
  void validate() const;
  bool operator==(const FrameInput&) const = default;
};

// Frame `t` cut into non-overlapping patch×patch tiles in row-major tile
// order (top-left first); each row holds one tile flattened as (y, x, c).
Tensor patchify(const FrameInput& clip, std::size_t t, std::size_t patch_size);

// One clip as the video encoder sees it.
struct VideoInput {
  const FrameInput* frames = nullptr;
  std::vector<SubjectIndexSet> subjects;  // one per frame
};

// Per-layer attention maps of the frame encoder.
struct FrameTrace {
  std::vector<AttentionTrace> layers;
  std::vector<bool> saam;  // whether layer l ran SAAM
};

class EmotionClipModel {
 public:
  // Random init seeded per tensor by (seed, name): normal weight matrices
  // with σ = 1/√fan_in, normal embeddings and tokens with σ = 1/√d, zero
  // biases, unit gains, SAAM gate logits at -4. With init_mode=checkpoint, tensors present in
  // the init checkpoint overwrite the random values.
  EmotionClipModel(ModelConfig config, std::uint64_t seed);

  // Model saved by save(): checkpoint plus "<path>.json" sidecar with config and vocabulary.
  static EmotionClipModel load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const ModelConfig& config() const { return config_; }
  const TensorMap& parameters() const { return params_; }
  TensorMap& parameters() { return params_; }
  const Tensor& param(const std::string& name) const;
  // Parameters that receive gradients (frozen encoders excluded).
  std::vector<std::pair<std::string, Tensor>> trainable() const;

  const Vocabulary& vocabulary() const { return vocab_; }
  void set_vocabulary(Vocabulary vocab);
  std::vector<std::size_t> tokenize(std::string_view text) const;

  // Frame representations for every frame of every clip: (B*T)×d, clip-major.
  Tensor encode_frames(Graph& g, std::span<const VideoInput> clips, FrameTrace* trace = nullptr) const;
  // Temporal encoder over (B*T)×d frame representations; returns B×d, unit rows.
  Tensor temporal_pool(Graph& g, const Tensor& frame_reps, std::size_t batch) const;
  // f_v = f_p ∘ f_i; B×d unit rows.
  Tensor encode_video(Graph& g, std::span<const VideoInput> clips, FrameTrace* trace = nullptr) const;
  // B×d unit rows; ids must be < vocab_size and at most max_text_len long.
  Tensor encode_text(Graph& g, const std::vector<std::vector<std::size_t>>& token_ids) const;
  // 1/τ = exp(min(logit_scale, ln 100)).
  Tensor inverse_temperature(Graph& g) const;

  // Single-frame convenience: the frame representation (1×d).
  Tensor encode_frame(Graph& g, const FrameInput& clip, std::size_t t, const SubjectIndexSet& subject) const;

 private:
  void init_parameters(std::uint64_t seed);
  void add_block_params(const std::string& prefix, std::size_t tokens, bool saam);
  Tensor block(Graph& g, const std::string& prefix, const Tensor& x, std::size_t groups,
               const std::optional<Tensor>& key_mask, const Tensor* subject_masks,
               AttentionTrace* trace) const;
  void apply_freeze();

  ModelConfig config_;
  TensorMap params_;
  Vocabulary vocab_;
};

}  // namespace eclip
