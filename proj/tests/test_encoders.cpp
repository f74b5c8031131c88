#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "eclip/checkpoint.hpp"
#include "eclip/diagnostics.hpp"
#include "eclip/error.hpp"
#include "eclip/model.hpp"
#include "eclip/sentiment.hpp"

using namespace eclip;
namespace fs = std::filesystem;

namespace {

FrameInput random_clip(std::size_t frames, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FrameInput clip;
  clip.frames = frames;
  clip.height = clip.width = size;
  clip.pixels.resize(frames * size * size * 3);
  for (auto& p : clip.pixels) p = static_cast<std::uint8_t>(rng() % 256);
  clip.masks.assign(frames * size * size, 0);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t y = 0; y < size / 2; ++y)
      for (std::size_t x = 0; x < size / 2; ++x) clip.masks[(t * size + y) * size + x] = 1;
  return clip;
}

ModelConfig small_config(AttentionMode mode) {
  ModelConfig c;
  c.d = 8;
  c.patch_size = 4;
  c.image_size = 8;
  c.frames = 3;
  c.n_layers = 2;
  c.n_heads = 2;
  c.vocab_size = 16;
  c.max_text_len = 6;
  c.attention_mode = mode;
  return c;
}

double norm(const Tensor& t, std::size_t row) {
  double s = 0.0;
  for (std::size_t c = 0; c < t.cols(); ++c) s += t.at(row, c) * t.at(row, c);
  return std::sqrt(s);
}

void require_same(const Tensor& a, const Tensor& b) {
  REQUIRE(a.dims() == b.dims());
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("eclip_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("patch counts") {
  ModelConfig c;
  c.image_size = 32;
  c.patch_size = 16;
  CHECK(c.patches() == 4);
  c.image_size = 224;
  CHECK(c.patches() == 196);
  CHECK(c.tokens() == 198);
}

TEST_CASE("patchify order and layout") {
  const FrameInput clip = random_clip(2, 8, 1);
  const Tensor p = patchify(clip, 1, 4);
  REQUIRE(p.dims() == Shape{4, 48});
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t row = (y / 4) * 2 + x / 4, col = ((y % 4) * 4 + x % 4) * 3 + c;
        CHECK(p.at(row, col) == clip.pixel(1, y, x, c));
      }
  CHECK_THROWS_AS(patchify(clip, 0, 3), ValidationError);
}

TEST_CASE("constant image gives identical patch rows") {
  FrameInput clip = random_clip(1, 8, 2);
  std::fill(clip.pixels.begin(), clip.pixels.end(), 77);
  const Tensor p = patchify(clip, 0, 4);
  for (std::size_t r = 1; r < p.rows(); ++r)
    for (std::size_t c = 0; c < p.cols(); ++c) CHECK(p.at(r, c) == p.at(0, c));
}

TEST_CASE("model config validation and JSON") {
  ModelConfig c;
  c.image_size = 30;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ModelConfig{};
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ValidationError);

  ModelConfig d = small_config(AttentionMode::kSaam);
  d.temporal_mode = TemporalMode::kMeanPool;
  d.saam_layers = 1;
  const nlohmann::json j = d;
  const ModelConfig back = j.get<ModelConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK_THROWS_AS(nlohmann::json({{"depth", 3}}).get<ModelConfig>(), ValidationError);
  CHECK_THROWS_AS(nlohmann::json({{"attention_mode", "fancy"}}).get<ModelConfig>(), ValidationError);
}

TEST_CASE("vanilla frame encoding ignores the subject set") {
  const EmotionClipModel model(small_config(AttentionMode::kVanilla), 3);
  const FrameInput clip = random_clip(1, 8, 4);
  Graph g;
  const Tensor a = model.encode_frame(g, clip, 0, SubjectIndexSet({0}));
  const Tensor b = model.encode_frame(g, clip, 0, SubjectIndexSet({1, 2, 3}));
  require_same(a, b);
}

TEST_CASE("SAP with an empty subject equals a zero subject token") {
  const EmotionClipModel sap(small_config(AttentionMode::kSap), 5);
  EmotionClipModel vanilla(small_config(AttentionMode::kVanilla), 5);
  auto hmn = vanilla.parameters().at("frame.hmn_token");
  std::fill(hmn.mutable_data().begin(), hmn.mutable_data().end(), 0.0);
  const FrameInput clip = random_clip(1, 8, 6);
  Graph g;
  require_same(sap.encode_frame(g, clip, 0, SubjectIndexSet()), vanilla.encode_frame(g, clip, 0, SubjectIndexSet()));
}

TEST_CASE("SAP depends on the subject only through the positional sum") {
  EmotionClipModel model(small_config(AttentionMode::kSap), 7);
  auto pos = model.parameters().at("frame.pos_embed");
  auto e = pos.mutable_data();
  const std::size_t d = 8;
  // Dyadic values keep every sum exact, so e0 + e3 == e1 + e2 bit for bit.
  for (std::size_t c = 0; c < d; ++c) {
    e[0 * d + c] = 0.125 * static_cast<double>(c % 3);
    e[1 * d + c] = -0.25 * static_cast<double>(c % 2);
    e[2 * d + c] = 0.5 - 0.125 * static_cast<double>(c);
    e[3 * d + c] = e[1 * d + c] + e[2 * d + c] - e[0 * d + c];
  }
  const FrameInput clip = random_clip(1, 8, 8);
  Graph g;
  require_same(model.encode_frame(g, clip, 0, SubjectIndexSet({0, 3})),
               model.encode_frame(g, clip, 0, SubjectIndexSet({1, 2})));
}

TEST_CASE("SAAM with a zero gate equals vanilla with the same weights") {
  EmotionClipModel saam(small_config(AttentionMode::kSaam), 9);
  const EmotionClipModel vanilla(small_config(AttentionMode::kVanilla), 9);
  for (auto& [name, t] : saam.parameters()) {
    if (name.ends_with(".saam.a_raw")) {
      auto v = Tensor(t).mutable_data();
      std::fill(v.begin(), v.end(), -INFINITY);
    } else {
      REQUIRE(vanilla.parameters().count(name));
    }
  }
  const FrameInput clip = random_clip(1, 8, 10);
  Graph g;
  require_same(saam.encode_frame(g, clip, 0, SubjectIndexSet({1, 3})),
               vanilla.encode_frame(g, clip, 0, SubjectIndexSet({1, 3})));
}

TEST_CASE("SAAM gate starts near zero") {
  const EmotionClipModel saam(small_config(AttentionMode::kSaam), 9);
  const Tensor& a = saam.param("frame.blocks.0.saam.a_raw");
  CHECK(a.dims() == Shape{6, 6});
  CHECK(1.0 / (1.0 + std::exp(-a[0])) == doctest::Approx(0.018).epsilon(0.01));
}

TEST_CASE("video embeddings are unit norm and respect the temporal mode") {
  for (auto temporal : {TemporalMode::kTransformer, TemporalMode::kMeanPool}) {
    ModelConfig cfg = small_config(AttentionMode::kSap);
    cfg.temporal_mode = temporal;
    const EmotionClipModel model(cfg, 11);
    const FrameInput clip = random_clip(3, 8, 12);
    FrameInput reversed = clip;
    const std::size_t px = 8 * 8;
    for (std::size_t t = 0; t < 3; ++t) {
      std::copy_n(clip.pixels.begin() + static_cast<std::ptrdiff_t>((2 - t) * px * 3), px * 3,
                  reversed.pixels.begin() + static_cast<std::ptrdiff_t>(t * px * 3));
    }
    const std::vector<SubjectIndexSet> subjects(3, SubjectIndexSet({0}));
    const VideoInput in[] = {{&clip, subjects}, {&reversed, subjects}};
    Graph g;
    const Tensor v = model.encode_video(g, in);
    CHECK(std::abs(norm(v, 0) - 1.0) < 1e-12);
    CHECK(std::abs(norm(v, 1) - 1.0) < 1e-12);
    double diff = 0.0;
    for (std::size_t c = 0; c < 8; ++c) diff = std::max(diff, std::abs(v.at(0, c) - v.at(1, c)));
    if (temporal == TemporalMode::kMeanPool) {
      CHECK(diff < 1e-12);
    } else {
      CHECK(diff > 1e-6);
    }
  }
}

TEST_CASE("single-frame meanpool is the normalized frame representation") {
  ModelConfig cfg = small_config(AttentionMode::kSaam);
  cfg.temporal_mode = TemporalMode::kMeanPool;
  cfg.frames = 1;
  const EmotionClipModel model(cfg, 13);
  const FrameInput clip = random_clip(1, 8, 14);
  const VideoInput in{&clip, {SubjectIndexSet({2})}};
  Graph g;
  const Tensor v = model.encode_video(g, std::span<const VideoInput>(&in, 1));
  const Tensor f = model.encode_frame(g, clip, 0, SubjectIndexSet({2}));
  const double n = norm(f, 0);
  for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(v[c] - f[c] / n) < 1e-12);
}

TEST_CASE("encoder input validation") {
  const EmotionClipModel model(small_config(AttentionMode::kSap), 15);
  Graph g;
  FrameInput empty;
  empty.height = empty.width = 8;
  const VideoInput none{&empty, {}};
  CHECK_THROWS_AS(model.encode_video(g, std::span<const VideoInput>(&none, 1)), ValidationError);
  const FrameInput wrong = random_clip(1, 16, 1);
  const VideoInput big{&wrong, {SubjectIndexSet()}};
  CHECK_THROWS_AS(model.encode_video(g, std::span<const VideoInput>(&big, 1)), ValidationError);
  const FrameInput ok = random_clip(1, 8, 1);
  const VideoInput bad_subject{&ok, {SubjectIndexSet({4})}};
  CHECK_THROWS_AS(model.encode_video(g, std::span<const VideoInput>(&bad_subject, 1)), ValidationError);
  CHECK_THROWS_AS(model.encode_text(g, {{16}}), ValidationError);
  CHECK_THROWS_AS(model.encode_text(g, {{1, 1, 1, 1, 1, 1, 1}}), ValidationError);
}

TEST_CASE("text embeddings") {
  const EmotionClipModel model(small_config(AttentionMode::kSap), 17);
  Graph g;
  const Tensor t = model.encode_text(g, {{}, {3, 4, 5}, {3, 4, 5}, {7}});
  for (std::size_t r = 0; r < 4; ++r) CHECK(std::abs(norm(t, r) - 1.0) < 1e-12);
  for (std::size_t c = 0; c < 8; ++c) CHECK(t.at(1, c) == t.at(2, c));

  // Padding inside a batch does not change a short text's embedding.
  const Tensor alone = model.encode_text(g, {{7}});
  for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(alone[c] - t.at(3, c)) < 1e-12);
}

TEST_CASE("inverse temperature starts at 1/0.07 and is capped at 100") {
  EmotionClipModel model(small_config(AttentionMode::kSap), 18);
  Graph g;
  CHECK(model.inverse_temperature(g).item() == doctest::Approx(1.0 / 0.07).epsilon(1e-12));
  Tensor(model.param("logit_scale")).mutable_data()[0] = 10.0;
  CHECK(model.inverse_temperature(g).item() == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("initialization is deterministic per seed and freezing removes parameters") {
  ModelConfig cfg = small_config(AttentionMode::kSaam);
  const EmotionClipModel a(cfg, 19), b(cfg, 19), c(cfg, 20);
  CHECK(encode_checkpoint(a.parameters()) == encode_checkpoint(b.parameters()));
  CHECK(encode_checkpoint(a.parameters()) != encode_checkpoint(c.parameters()));

  cfg.freeze_frame = true;
  const EmotionClipModel frozen(cfg, 19);
  for (const auto& [name, t] : frozen.trainable()) CHECK_FALSE(name.starts_with("frame."));
  CHECK_FALSE(frozen.param("frame.proj.weight").requires_grad());
  CHECK(frozen.param("text.proj.weight").requires_grad());
}

TEST_CASE("checkpoint round trip and layout") {
  const EmotionClipModel model(small_config(AttentionMode::kSaam), 21);
  const auto bytes = encode_checkpoint(model.parameters());
  REQUIRE(bytes.size() > 12);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "ECLP");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  const TensorMap back = decode_checkpoint(bytes);
  REQUIRE(back.size() == model.parameters().size());
  for (const auto& [name, t] : model.parameters()) {
    REQUIRE(back.count(name));
    const Tensor& u = back.at(name);
    REQUIRE(u.dims() == t.dims());
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(std::memcmp(&u.data()[i], &t.data()[i], 8) == 0);
  }
  CHECK(encode_checkpoint(back) == bytes);
}

TEST_CASE("checkpoint byte format for a single tensor") {
  TensorMap one;
  one.emplace("w", Tensor::matrix({{1.0, -2.0}}));
  const auto bytes = encode_checkpoint(one);
  const std::vector<std::uint8_t> expect = {
      'E', 'C', 'L', 'P', 1, 0, 0, 0, 1, 0, 0, 0,  // magic, version, count
      1, 0, 'w', 2, 1, 0, 0, 0, 2, 0, 0, 0,        // name, rank, dims
      0, 0, 0, 0, 0, 0, 0xF0, 0x3F,                // 1.0
      0, 0, 0, 0, 0, 0, 0x00, 0xC0,                // -2.0
  };
  CHECK(bytes == expect);
}

TEST_CASE("corrupted checkpoints raise format errors") {
  const EmotionClipModel model(small_config(AttentionMode::kSap), 22);
  const auto bytes = encode_checkpoint(model.parameters());
  for (std::size_t cut = 0; cut < bytes.size(); cut += 7) {
    CHECK_THROWS_AS(decode_checkpoint(std::span<const std::uint8_t>(bytes.data(), cut)), FormatError);
  }
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad[4] = 9;
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  // Random byte flips never crash; they either decode or raise a format error.
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    auto flipped = bytes;
    flipped[rng() % flipped.size()] ^= static_cast<std::uint8_t>(1u << (rng() % 8));
    try {
      decode_checkpoint(flipped);
    } catch (const FormatError&) {
    }
  }
  try {
    decode_checkpoint(std::span<const std::uint8_t>(bytes.data(), 10));
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
}

TEST_CASE("model save and load reproduce embeddings") {
  const fs::path dir = temp_dir("model_io");
  EmotionClipModel model(small_config(AttentionMode::kSaam), 24);
  model.set_vocabulary(Vocabulary::build({"hello there angry friend"}, 16));
  model.save(dir / "m.ckpt");
  const EmotionClipModel back = EmotionClipModel::load(dir / "m.ckpt");
  CHECK(back.vocabulary().words() == model.vocabulary().words());
  CHECK(nlohmann::json(back.config()) == nlohmann::json(model.config()));
  const FrameInput clip = random_clip(3, 8, 25);
  const VideoInput in{&clip, std::vector<SubjectIndexSet>(3, SubjectIndexSet({1}))};
  Graph g;
  require_same(model.encode_video(g, std::span<const VideoInput>(&in, 1)),
               back.encode_video(g, std::span<const VideoInput>(&in, 1)));
  require_same(model.encode_text(g, {model.tokenize("angry friend")}),
               back.encode_text(g, {back.tokenize("angry friend")}));

  fs::remove(dir / "m.ckpt.json");
  CHECK_THROWS_AS(EmotionClipModel::load(dir / "m.ckpt"), FormatError);
}

TEST_CASE("checkpoint initialization overlays matching tensors") {
  const fs::path dir = temp_dir("init_ckpt");
  const EmotionClipModel source(small_config(AttentionMode::kSap), 26);
  TensorMap frame_only;
  for (const auto& [name, t] : source.parameters())
    if (name.starts_with("frame.")) frame_only.emplace(name, t);
  save_checkpoint(dir / "frame.ckpt", frame_only);

  ModelConfig cfg = small_config(AttentionMode::kSap);
  cfg.init_mode = InitMode::kCheckpoint;
  cfg.init_checkpoint = (dir / "frame.ckpt").string();
  const EmotionClipModel model(cfg, 27);
  const EmotionClipModel fresh(small_config(AttentionMode::kSap), 27);
  for (const auto& [name, t] : model.parameters()) {
    const Tensor& expect = name.starts_with("frame.") ? source.param(name) : fresh.param(name);
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(t[i] == expect[i]);
  }

  ModelConfig wide = cfg;
  wide.d = 16;
  CHECK_THROWS_AS(EmotionClipModel(wide, 1), FormatError);
}

TEST_CASE("lexicon sentiment scorer") {
  const SentimentDistribution none = score_sentiment("the weather report at noon");
  none.validate();
  CHECK(none.argmax() == static_cast<std::size_t>(Emotion::kNeutral));
  const double e = std::exp(1.0);
  CHECK(none.p[6] == doctest::Approx(e / (e + 6.0)).epsilon(1e-12));
  CHECK(none.p[0] == doctest::Approx(1.0 / (e + 6.0)).epsilon(1e-12));

  // Two anger hits: logits (2, 0, 0, 0, 0, 0, 1).
  const SentimentDistribution angry = score_sentiment("She is ANGRY, truly furious!");
  const double z = std::exp(2.0) + 5.0 + e;
  CHECK(angry.p[0] == doctest::Approx(std::exp(2.0) / z).epsilon(1e-12));
  CHECK(angry.p[6] == doctest::Approx(e / z).epsilon(1e-12));
  CHECK(angry.argmax() == 0);

  CHECK(score_sentiment("happy and joyful") == score_sentiment("happy and joyful"));
  for (const auto* text : {"", "sad", "afraid scared", "wow surprised happy"}) {
    const auto s = score_sentiment(text);
    double total = 0.0;
    for (double p : s.p) total += p;
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("full model gradients pass a finite-difference check") {
  ModelConfig cfg = small_config(AttentionMode::kSaam);
  cfg.frames = 2;
  cfg.n_layers = 1;
  cfg.vocab_size = 128;
  cfg.max_text_len = 16;
  const GradcheckReport report = model_gradcheck(cfg, 28, 2, 1.0);
  CHECK(report.max_error < 1e-4);
  CHECK(report.errors.count("frame.blocks.0.saam.a_raw") == 1);
}
