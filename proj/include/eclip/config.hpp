#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

namespace eclip {

enum class AttentionMode { kVanilla, kSaam, kSap };
enum class TemporalMode { kTransformer, kMeanPool };
enum class InitMode { kRandom, kCheckpoint };

const char* to_string(AttentionMode mode);
const char* to_string(TemporalMode mode);
const char* to_string(InitMode mode);
AttentionMode parse_attention_mode(const std::string& s);
TemporalMode parse_temporal_mode(const std::string& s);
InitMode parse_init_mode(const std::string& s);

struct ModelConfig {
  std::size_t d = 32;
  std::size_t patch_size = 8;
  std::size_t image_size = 32;
  std::size_t frames = 8;          // T
  std::size_t n_layers = 3;        // frame encoder depth
  std::size_t n_heads = 1;
  std::size_t temporal_layers = 1;
  std::size_t text_layers = 1;
  std::size_t mlp_ratio = 4;
  AttentionMode attention_mode = AttentionMode::kSap;
  TemporalMode temporal_mode = TemporalMode::kTransformer;
  // SAAM runs in frame layers [0, saam_layers); 0 means every layer.
  std::size_t saam_layers = 0;
  std::size_t vocab_size = 128;
  std::size_t max_text_len = 16;
  bool freeze_text = false;
  bool freeze_frame = false;
  InitMode init_mode = InitMode::kRandom;
  std::string init_checkpoint;  // used when init_mode == kCheckpoint

  std::size_t patches_per_side() const { return image_size / patch_size; }
  std::size_t patches() const { return patches_per_side() * patches_per_side(); }  // m
  std::size_t tokens() const { return patches() + 2; }                           // m + 2
  std::size_t patch_dim() const { return patch_size * patch_size * 3; }
  bool saam_in_layer(std::size_t layer) const {
    return attention_mode == AttentionMode::kSaam && (saam_layers == 0 || layer < saam_layers);
  }

  // Throws ValidationError on non-positive sizes or incompatible dims.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace eclip
