#include "eclip/config.hpp"

#include <set>

#include "eclip/error.hpp"

namespace eclip {

const char* to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::kVanilla: return "vanilla";
    case AttentionMode::kSaam: return "saam";
    case AttentionMode::kSap: return "sap";
  }
  return "?";
}

const char* to_string(TemporalMode mode) {
  return mode == TemporalMode::kTransformer ? "transformer" : "meanpool";
}

const char* to_string(InitMode mode) { return mode == InitMode::kRandom ? "random" : "checkpoint"; }

AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "vanilla") return AttentionMode::kVanilla;
  if (s == "saam") return AttentionMode::kSaam;
  if (s == "sap") return AttentionMode::kSap;
  throw ValidationError("unknown attention_mode '" + s + "' (vanilla|saam|sap)");
}

TemporalMode parse_temporal_mode(const std::string& s) {
  if (s == "transformer") return TemporalMode::kTransformer;
  if (s == "meanpool") return TemporalMode::kMeanPool;
  throw ValidationError("unknown temporal_mode '" + s + "' (transformer|meanpool)");
}

InitMode parse_init_mode(const std::string& s) {
  if (s == "random") return InitMode::kRandom;
  if (s == "checkpoint") return InitMode::kCheckpoint;
  throw ValidationError("unknown init_mode '" + s + "' (random|checkpoint)");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ValidationError(std::string("model config: ") + name + " must be positive");
  };
  positive(d, "d");
  positive(patch_size, "patch_size");
  positive(image_size, "image_size");
  positive(frames, "frames");
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(temporal_layers, "temporal_layers");
  positive(text_layers, "text_layers");
  positive(mlp_ratio, "mlp_ratio");
  positive(vocab_size, "vocab_size");
  positive(max_text_len, "max_text_len");
  if (image_size % patch_size != 0) {
    throw ValidationError("model config: image_size " + std::to_string(image_size) +
                          " not divisible by patch_size " + std::to_string(patch_size));
  }
  if (d % n_heads != 0) throw ValidationError("model config: d not divisible by n_heads");
  if (init_mode == InitMode::kCheckpoint && init_checkpoint.empty()) {
    throw ValidationError("model config: init_mode=checkpoint needs init_checkpoint");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d", c.d},
                     {"patch_size", c.patch_size},
                     {"image_size", c.image_size},
                     {"frames", c.frames},
                     {"n_layers", c.n_layers},
                     {"n_heads", c.n_heads},
                     {"temporal_layers", c.temporal_layers},
                     {"text_layers", c.text_layers},
                     {"mlp_ratio", c.mlp_ratio},
                     {"attention_mode", to_string(c.attention_mode)},
                     {"temporal_mode", to_string(c.temporal_mode)},
                     {"saam_layers", c.saam_layers},
                     {"vocab_size", c.vocab_size},
                     {"max_text_len", c.max_text_len},
                     {"freeze_text", c.freeze_text},
                     {"freeze_frame", c.freeze_frame},
                     {"init_mode", to_string(c.init_mode)},
                     {"init_checkpoint", c.init_checkpoint}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const std::set<std::string> kKeys = {
      "d",           "patch_size",     "image_size",  "frames",       "n_layers",
      "n_heads",     "temporal_layers", "text_layers", "mlp_ratio",    "attention_mode",
      "temporal_mode", "saam_layers",  "vocab_size",  "max_text_len", "freeze_text",
      "freeze_frame", "init_mode",     "init_checkpoint"};
  if (!j.is_object()) throw ValidationError("model config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!kKeys.count(key)) throw ValidationError("model config: unknown key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("d", c.d);
    get("patch_size", c.patch_size);
    get("image_size", c.image_size);
    get("frames", c.frames);
    get("n_layers", c.n_layers);
    get("n_heads", c.n_heads);
    get("temporal_layers", c.temporal_layers);
    get("text_layers", c.text_layers);
    get("mlp_ratio", c.mlp_ratio);
    get("saam_layers", c.saam_layers);
    get("vocab_size", c.vocab_size);
    get("max_text_len", c.max_text_len);
    get("freeze_text", c.freeze_text);
    get("freeze_frame", c.freeze_frame);
    get("init_checkpoint", c.init_checkpoint);
    if (j.contains("attention_mode")) c.attention_mode = parse_attention_mode(j.at("attention_mode"));
    if (j.contains("temporal_mode")) c.temporal_mode = parse_temporal_mode(j.at("temporal_mode"));
    if (j.contains("init_mode")) c.init_mode = parse_init_mode(j.at("init_mode"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
}

}  // namespace eclip
