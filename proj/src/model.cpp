#include "eclip/model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "eclip/error.hpp"

namespace eclip {

namespace {

constexpr double kGateInit = -4.0;

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool starts_with(const std::string& s, std::string_view prefix) { return s.rfind(prefix, 0) == 0; }

std::uint64_t name_seed(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 1469598103934665603ull ^ seed;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<std::size_t> iota(std::size_t n, std::size_t start = 0) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = start + i;
  return v;
}

std::vector<std::size_t> tiled(std::size_t period, std::size_t repeats) {
  std::vector<std::size_t> v;
  v.reserve(period * repeats);
  for (std::size_t r = 0; r < repeats; ++r)
    for (std::size_t i = 0; i < period; ++i) v.push_back(i);
  return v;
}

}  // namespace

void FrameInput::validate() const {
  if (frames == 0 || height == 0 || width == 0) throw ValidationError("clip has an empty dimension");
  if (pixels.size() != frames * height * width * 3) throw ValidationError("clip pixel count mismatch");
  if (masks.size() != frames * height * width) throw ValidationError("clip mask count mismatch");
  for (auto v : masks) {
    if (v > 1) throw ValidationError("clip mask is not binary");
  }
}

Tensor patchify(const FrameInput& clip, std::size_t t, std::size_t patch_size) {
  if (patch_size == 0 || clip.height % patch_size != 0 || clip.width % patch_size != 0) {
    throw ValidationError("patchify: " + std::to_string(clip.height) + "x" + std::to_string(clip.width) +
                          " frame not divisible by patch " + std::to_string(patch_size));
  }
  if (t >= clip.frames) throw ValidationError("patchify: frame index out of range");
  const std::size_t ph = clip.height / patch_size, pw = clip.width / patch_size;
  const std::size_t dim = patch_size * patch_size * 3;
  std::vector<double> out(ph * pw * dim);
  for (std::size_t py = 0; py < ph; ++py)
    for (std::size_t px = 0; px < pw; ++px) {
      double* row = out.data() + (py * pw + px) * dim;
      for (std::size_t y = 0; y < patch_size; ++y)
        for (std::size_t x = 0; x < patch_size; ++x)
          for (std::size_t c = 0; c < 3; ++c)
            *row++ = clip.pixel(t, py * patch_size + y, px * patch_size + x, c);
    }
  return Tensor({ph * pw, dim}, std::move(out));
}

// ---- construction --------------------------------------------------------

EmotionClipModel::EmotionClipModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  init_parameters(seed);
  if (config_.init_mode == InitMode::kCheckpoint) {
    const TensorMap loaded = load_checkpoint(config_.init_checkpoint);
    std::size_t matched = 0;
    for (auto& [name, t] : params_) {
      auto it = loaded.find(name);
      if (it == loaded.end()) continue;
      if (it->second.dims() != t.dims()) {
        throw FormatError("init checkpoint tensor '" + name + "' has shape " +
                          shape_string(it->second.dims()) + ", model expects " + shape_string(t.dims()));
      }
      std::copy(it->second.data().begin(), it->second.data().end(), t.mutable_data().begin());
      ++matched;
    }
    if (matched == 0) throw FormatError("init checkpoint shares no tensors with the model");
  }
  apply_freeze();
}

void EmotionClipModel::add_block_params(const std::string& prefix, std::size_t tokens, bool saam) {
  const std::size_t d = config_.d, hidden = config_.d * config_.mlp_ratio;
  auto add = [&](const std::string& name, Shape dims) { params_.emplace(prefix + name, Tensor::zeros(dims, true)); };
  add(".ln1.gain", {d});
  add(".ln1.bias", {d});
  add(".attn.qkv.weight", {d, 3 * d});
  add(".attn.qkv.bias", {3 * d});
  add(".attn.out.weight", {d, d});
  add(".attn.out.bias", {d});
  add(".ln2.gain", {d});
  add(".ln2.bias", {d});
  add(".mlp.fc1.weight", {d, hidden});
  add(".mlp.fc1.bias", {hidden});
  add(".mlp.fc2.weight", {hidden, d});
  add(".mlp.fc2.bias", {d});
  if (saam) add(".saam.a_raw", {tokens, tokens});
}

void EmotionClipModel::init_parameters(std::uint64_t seed) {
  const auto& c = config_;
  const std::size_t d = c.d;
  auto add = [&](const std::string& name, Shape dims) { params_.emplace(name, Tensor::zeros(dims, true)); };

  add("frame.patch_proj.weight", {c.patch_dim(), d});
  add("frame.pos_embed", {c.patches(), d});
  add("frame.cls_token", {1, d});
  if (c.attention_mode != AttentionMode::kSap) add("frame.hmn_token", {1, d});
  add("frame.ln_pre.gain", {d});
  add("frame.ln_pre.bias", {d});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    add_block_params("frame.blocks." + std::to_string(l), c.tokens(), c.saam_in_layer(l));
  }
  add("frame.ln_post.gain", {d});
  add("frame.ln_post.bias", {d});
  add("frame.proj.weight", {d, d});

  if (c.temporal_mode == TemporalMode::kTransformer) {
    add("temporal.cls_token", {1, d});
    add("temporal.pos_embed", {c.frames + 1, d});
    for (std::size_t l = 0; l < c.temporal_layers; ++l) {
      add_block_params("temporal.blocks." + std::to_string(l), c.frames + 1, false);
    }
    add("temporal.ln_post.gain", {d});
    add("temporal.ln_post.bias", {d});
    add("temporal.proj.weight", {d, d});
  }

  add("text.token_embed", {c.vocab_size, d});
  add("text.pos_embed", {c.max_text_len + 1, d});
  add("text.cls_token", {1, d});
  for (std::size_t l = 0; l < c.text_layers; ++l) {
    add_block_params("text.blocks." + std::to_string(l), c.max_text_len + 1, false);
  }
  add("text.ln_post.gain", {d});
  add("text.ln_post.bias", {d});
  add("text.proj.weight", {d, d});

  add("logit_scale", {1});

  for (auto& [name, t] : params_) {
    auto v = t.mutable_data();
    if (name == "logit_scale") {
      v[0] = std::log(1.0 / 0.07);
    } else if (ends_with(name, ".gain")) {
      std::fill(v.begin(), v.end(), 1.0);
    } else if (ends_with(name, ".bias")) {
      std::fill(v.begin(), v.end(), 0.0);
    } else if (ends_with(name, ".a_raw")) {
      std::fill(v.begin(), v.end(), kGateInit);
    } else {
      std::mt19937_64 rng(name_seed(seed, name));
      // Projection matrices scale by fan-in, embeddings and tokens by width.
      const double fan_in = ends_with(name, ".weight") ? static_cast<double>(t.dims()[0]) : static_cast<double>(d);
      std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(fan_in));
      for (auto& x : v) x = normal(rng);
    }
  }
}

void EmotionClipModel::apply_freeze() {
  for (auto& [name, t] : params_) {
    const bool frozen = (config_.freeze_frame && starts_with(name, "frame.")) ||
                        (config_.freeze_text && starts_with(name, "text."));
    t.set_requires_grad(!frozen);
  }
}

const Tensor& EmotionClipModel::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ValidationError("model has no parameter '" + name + "'");
  return it->second;
}

std::vector<std::pair<std::string, Tensor>> EmotionClipModel::trainable() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [name, t] : params_)
    if (t.requires_grad()) out.emplace_back(name, t);
  return out;
}

void EmotionClipModel::set_vocabulary(Vocabulary vocab) {
  if (vocab.size() > config_.vocab_size) {
    throw ValidationError("vocabulary of " + std::to_string(vocab.size()) + " words exceeds vocab_size " +
                          std::to_string(config_.vocab_size));
  }
  vocab_ = std::move(vocab);
}

std::vector<std::size_t> EmotionClipModel::tokenize(std::string_view text) const {
  return vocab_.encode(text, config_.max_text_len);
}

// ---- persistence ---------------------------------------------------------

void EmotionClipModel::save(const std::filesystem::path& path) const {
  save_checkpoint(path, params_);
  nlohmann::json side{{"model", config_}, {"vocab", vocab_.words()}};
  std::ofstream out(path.string() + ".json");
  if (!out) throw std::runtime_error("cannot write " + path.string() + ".json");
  out << side.dump(2) << '\n';
}

EmotionClipModel EmotionClipModel::load(const std::filesystem::path& path) {
  const std::string side_path = path.string() + ".json";
  std::ifstream in(side_path);
  if (!in) throw FormatError("missing model sidecar " + side_path);
  nlohmann::json side;
  try {
    in >> side;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side_path + ": " + e.what());
  }
  ModelConfig cfg;
  std::vector<std::string> words;
  try {
    cfg = side.at("model").get<ModelConfig>();
    words = side.at("vocab").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side_path + ": " + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(side_path + ": " + e.what());
  }
  cfg.init_mode = InitMode::kRandom;
  cfg.init_checkpoint.clear();
  EmotionClipModel model(cfg, 0);
  const TensorMap loaded = load_checkpoint(path);
  if (loaded.size() != model.params_.size()) {
    throw FormatError(path.string() + ": holds " + std::to_string(loaded.size()) + " tensors, model has " +
                      std::to_string(model.params_.size()));
  }
  for (auto& [name, t] : model.params_) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw FormatError(path.string() + ": missing tensor '" + name + "'");
    if (it->second.dims() != t.dims()) throw FormatError(path.string() + ": shape mismatch for '" + name + "'");
    std::copy(it->second.data().begin(), it->second.data().end(), t.mutable_data().begin());
  }
  model.set_vocabulary(Vocabulary(std::move(words)));
  return model;
}

// ---- forward -------------------------------------------------------------

Tensor EmotionClipModel::block(Graph& g, const std::string& prefix, const Tensor& x, std::size_t groups,
                               const std::optional<Tensor>& key_mask, const Tensor* subject_masks,
                               AttentionTrace* trace) const {
  const std::size_t d = config_.d, heads = config_.n_heads;
  auto p = [&](const char* name) -> const Tensor& { return param(prefix + name); };

  const Tensor h = layer_norm(g, x, p(".ln1.gain"), p(".ln1.bias"));
  const Tensor qkv = add_row(g, matmul(g, h, p(".attn.qkv.weight")), p(".attn.qkv.bias"));
  const Tensor q = slice_cols(g, qkv, 0, d);
  const Tensor k = slice_cols(g, qkv, d, d);
  const Tensor v = slice_cols(g, qkv, 2 * d, d);

  Tensor attended;
  if (subject_masks) {
    const double factor = 1.0 / std::sqrt(static_cast<double>(d / heads));
    const Tensor raw = attn_scores(g, q, k, groups, heads, 1.0);
    const Tensor s = masked_softmax(g, scale(g, raw, factor));
    const Tensor u = masked_softmax(g, scale(g, add(g, raw, *subject_masks), factor));
    const Tensor a = sigmoid(g, p(".saam.a_raw"));
    if (trace) *trace = AttentionTrace{s, u, a};
    attended = saam_mix(g, s, u, a, v, groups, heads);
  } else {
    attended = canonical_attention(g, q, k, v, groups, heads, key_mask, trace);
  }
  Tensor out = add(g, x, add_row(g, matmul(g, attended, p(".attn.out.weight")), p(".attn.out.bias")));
  const Tensor h2 = layer_norm(g, out, p(".ln2.gain"), p(".ln2.bias"));
  const Tensor hidden = gelu(g, add_row(g, matmul(g, h2, p(".mlp.fc1.weight")), p(".mlp.fc1.bias")));
  return add(g, out, add_row(g, matmul(g, hidden, p(".mlp.fc2.weight")), p(".mlp.fc2.bias")));
}

Tensor EmotionClipModel::encode_frames(Graph& g, std::span<const VideoInput> clips, FrameTrace* trace) const {
  const auto& c = config_;
  if (clips.empty()) throw ValidationError("encode_frames: no clips");
  const std::size_t m = c.patches(), n = c.tokens(), pd = c.patch_dim();

  std::size_t frames_total = 0;
  for (const auto& clip : clips) {
    if (!clip.frames) throw ValidationError("encode_frames: clip without frames");
    if (clip.frames->frames == 0) throw ValidationError("encode_frames: clip has T=0");
    if (clip.frames->height != c.image_size || clip.frames->width != c.image_size) {
      throw ValidationError("encode_frames: frame size " + std::to_string(clip.frames->height) + "x" +
                            std::to_string(clip.frames->width) + " != image_size " +
                            std::to_string(c.image_size));
    }
    if (clip.subjects.size() != clip.frames->frames) {
      throw ValidationError("encode_frames: need one subject set per frame");
    }
    for (const auto& s : clip.subjects) s.validate(m);
    frames_total += clip.frames->frames;
  }

  std::vector<double> patch_rows;
  patch_rows.reserve(frames_total * m * pd);
  std::vector<SubjectIndexSet> subjects;
  subjects.reserve(frames_total);
  for (const auto& clip : clips) {
    for (std::size_t t = 0; t < clip.frames->frames; ++t) {
      const Tensor p = patchify(*clip.frames, t, c.patch_size);
      patch_rows.insert(patch_rows.end(), p.data().begin(), p.data().end());
      subjects.push_back(clip.subjects[t]);
    }
  }
  const std::size_t G = frames_total;
  const Tensor patches({G * m, pd}, std::move(patch_rows));

  const Tensor& pos = param("frame.pos_embed");
  const Tensor tokens = add(g, matmul(g, patches, param("frame.patch_proj.weight")), gather_rows(g, pos, tiled(m, G)));

  // Source rows: [G*m patch tokens | cls | hmn rows], then laid out per frame.
  Tensor hmn_rows;
  if (c.attention_mode == AttentionMode::kSap) {
    std::vector<std::vector<std::size_t>> segments;
    segments.reserve(G);
    for (const auto& s : subjects) segments.push_back(s.indices());
    hmn_rows = segment_sum_rows(g, pos, std::move(segments));
  } else {
    hmn_rows = param("frame.hmn_token");
  }
  const bool per_frame_hmn = c.attention_mode == AttentionMode::kSap;
  const Tensor source = concat_rows(g, {tokens, param("frame.cls_token"), hmn_rows});
  std::vector<std::size_t> layout;
  layout.reserve(G * n);
  for (std::size_t f = 0; f < G; ++f) {
    for (std::size_t i = 0; i < m; ++i) layout.push_back(f * m + i);
    layout.push_back(G * m);
    layout.push_back(G * m + 1 + (per_frame_hmn ? f : 0));
  }
  Tensor x = layer_norm(g, gather_rows(g, source, std::move(layout)), param("frame.ln_pre.gain"),
                        param("frame.ln_pre.bias"));

  std::optional<Tensor> masks;
  if (c.attention_mode == AttentionMode::kSaam) {
    std::vector<MaskMatrix> mm;
    mm.reserve(G);
    for (const auto& s : subjects) mm.push_back(build_mask_matrix(m, s));
    masks = tile_masks(mm, c.n_heads);
  }
  if (trace) {
    trace->layers.assign(c.n_layers, AttentionTrace{});
    trace->saam.assign(c.n_layers, false);
  }
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const bool saam = c.saam_in_layer(l);
    if (trace) trace->saam[l] = saam;
    x = block(g, "frame.blocks." + std::to_string(l), x, G, std::nullopt, saam ? &*masks : nullptr,
              trace ? &trace->layers[l] : nullptr);
  }
  std::vector<std::size_t> cls_rows(G);
  for (std::size_t f = 0; f < G; ++f) cls_rows[f] = f * n + m;
  const Tensor cls = layer_norm(g, gather_rows(g, x, std::move(cls_rows)), param("frame.ln_post.gain"),
                                param("frame.ln_post.bias"));
  return matmul(g, cls, param("frame.proj.weight"));
}

Tensor EmotionClipModel::encode_frame(Graph& g, const FrameInput& clip, std::size_t t,
                                      const SubjectIndexSet& subject) const {
  if (t >= clip.frames) throw ValidationError("encode_frame: frame index out of range");
  FrameInput single;
  single.frames = 1;
  single.height = clip.height;
  single.width = clip.width;
  const std::size_t px = clip.height * clip.width;
  single.pixels.assign(clip.pixels.begin() + static_cast<std::ptrdiff_t>(t * px * 3),
                       clip.pixels.begin() + static_cast<std::ptrdiff_t>((t + 1) * px * 3));
  single.masks.assign(clip.masks.begin() + static_cast<std::ptrdiff_t>(t * px),
                      clip.masks.begin() + static_cast<std::ptrdiff_t>((t + 1) * px));
  const VideoInput in{&single, {subject}};
  return encode_frames(g, std::span<const VideoInput>(&in, 1));
}

Tensor EmotionClipModel::temporal_pool(Graph& g, const Tensor& frame_reps, std::size_t batch) const {
  const auto& c = config_;
  if (batch == 0 || frame_reps.rows() % batch != 0) {
    throw ValidationError("temporal_pool: frame count not divisible by batch");
  }
  const std::size_t T = frame_reps.rows() / batch;
  if (T == 0) throw ValidationError("temporal_pool: T=0");
  if (c.temporal_mode == TemporalMode::kMeanPool) {
    std::vector<std::vector<std::size_t>> segments(batch);
    for (std::size_t b = 0; b < batch; ++b) segments[b] = iota(T, b * T);
    return l2_normalize_rows(g, scale(g, segment_sum_rows(g, frame_reps, std::move(segments)),
                                      1.0 / static_cast<double>(T)));
  }
  if (T > c.frames) {
    throw ValidationError("temporal_pool: " + std::to_string(T) + " frames exceed configured " +
                          std::to_string(c.frames));
  }
  const std::size_t n = T + 1;
  const std::size_t rows = batch * T;
  std::vector<std::size_t> layout, pos_idx;
  for (std::size_t b = 0; b < batch; ++b) {
    layout.push_back(rows);
    for (std::size_t t = 0; t < T; ++t) layout.push_back(b * T + t);
    for (std::size_t i = 0; i < n; ++i) pos_idx.push_back(i);
  }
  const Tensor source = concat_rows(g, {frame_reps, param("temporal.cls_token")});
  Tensor x = add(g, gather_rows(g, source, std::move(layout)),
                 gather_rows(g, param("temporal.pos_embed"), std::move(pos_idx)));
  for (std::size_t l = 0; l < c.temporal_layers; ++l) {
    x = block(g, "temporal.blocks." + std::to_string(l), x, batch, std::nullopt, nullptr, nullptr);
  }
  std::vector<std::size_t> cls_rows(batch);
  for (std::size_t b = 0; b < batch; ++b) cls_rows[b] = b * n;
  const Tensor cls = layer_norm(g, gather_rows(g, x, std::move(cls_rows)), param("temporal.ln_post.gain"),
                                param("temporal.ln_post.bias"));
  return l2_normalize_rows(g, matmul(g, cls, param("temporal.proj.weight")));
}

Tensor EmotionClipModel::encode_video(Graph& g, std::span<const VideoInput> clips, FrameTrace* trace) const {
  if (clips.empty()) throw ValidationError("encode_video: no clips");
  const std::size_t T = clips.front().frames ? clips.front().frames->frames : 0;
  if (T == 0) throw ValidationError("encode_video: T=0");
  for (const auto& clip : clips) {
    if (!clip.frames || clip.frames->frames != T) throw ValidationError("encode_video: clips differ in T");
  }
  return temporal_pool(g, encode_frames(g, clips, trace), clips.size());
}

Tensor EmotionClipModel::encode_text(Graph& g, const std::vector<std::vector<std::size_t>>& token_ids) const {
  const auto& c = config_;
  if (token_ids.empty()) throw ValidationError("encode_text: no texts");
  std::size_t longest = 0;
  for (const auto& ids : token_ids) {
    if (ids.size() > c.max_text_len) {
      throw ValidationError("encode_text: " + std::to_string(ids.size()) + " tokens exceed max_text_len " +
                            std::to_string(c.max_text_len));
    }
    for (auto id : ids) {
      if (id >= c.vocab_size) {
        throw ValidationError("encode_text: token id " + std::to_string(id) + " out of vocabulary (" +
                              std::to_string(c.vocab_size) + ")");
      }
    }
    longest = std::max(longest, ids.size());
  }
  const std::size_t B = token_ids.size(), n = longest + 1, V = c.vocab_size;
  std::vector<std::size_t> rows, pos_idx;
  std::vector<double> key_mask;
  key_mask.reserve(B * c.n_heads * n * n);
  for (const auto& ids : token_ids) {
    rows.push_back(V);  // cls
    for (std::size_t i = 0; i < longest; ++i) rows.push_back(i < ids.size() ? ids[i] : Vocabulary::kUnknown);
    for (std::size_t i = 0; i < n; ++i) pos_idx.push_back(i);
    for (std::size_t h = 0; h < c.n_heads; ++h)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) key_mask.push_back(j == 0 || j <= ids.size() ? 0.0 : kNegInf);
  }
  const Tensor source = concat_rows(g, {param("text.token_embed"), param("text.cls_token")});
  Tensor x = add(g, gather_rows(g, source, std::move(rows)), gather_rows(g, param("text.pos_embed"), std::move(pos_idx)));
  const Tensor mask({B * c.n_heads * n, n}, std::move(key_mask));
  for (std::size_t l = 0; l < c.text_layers; ++l) {
    x = block(g, "text.blocks." + std::to_string(l), x, B, mask, nullptr, nullptr);
  }
  std::vector<std::size_t> cls_rows(B);
  for (std::size_t b = 0; b < B; ++b) cls_rows[b] = b * n;
  const Tensor cls = layer_norm(g, gather_rows(g, x, std::move(cls_rows)), param("text.ln_post.gain"),
                                param("text.ln_post.bias"));
  return l2_normalize_rows(g, matmul(g, cls, param("text.proj.weight")));
}

Tensor EmotionClipModel::inverse_temperature(Graph& g) const {
  return exp(g, clamp_max(g, param("logit_scale"), std::log(100.0)));
}

}  // namespace eclip
