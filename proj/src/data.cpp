#include "eclip/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <random>
#include <set>

#include "eclip/checkpoint.hpp"
#include "eclip/error.hpp"

namespace eclip {

// ---- subject geometry ----------------------------------------------------

SubjectIndexSet mask_to_patch_indices(std::span<const std::uint8_t> mask, std::size_t height, std::size_t width,
                                      std::size_t patch_size, double threshold) {
  if (patch_size == 0 || height % patch_size != 0 || width % patch_size != 0) {
    throw ValidationError("mask_to_patch_indices: " + std::to_string(height) + "x" + std::to_string(width) +
                          " mask not divisible by patch " + std::to_string(patch_size));
  }
  if (mask.size() != height * width) throw ValidationError("mask_to_patch_indices: mask size mismatch");
  if (!(threshold >= 0.0 && threshold < 1.0)) {
    throw ValidationError("mask_to_patch_indices: threshold must lie in [0, 1)");
  }
  const std::size_t ph = height / patch_size, pw = width / patch_size;
  const double area = static_cast<double>(patch_size * patch_size);
  std::vector<std::size_t> hits;
  for (std::size_t py = 0; py < ph; ++py)
    for (std::size_t px = 0; px < pw; ++px) {
      std::size_t on = 0;
      for (std::size_t y = py * patch_size; y < (py + 1) * patch_size; ++y)
        for (std::size_t x = px * patch_size; x < (px + 1) * patch_size; ++x) {
          const auto v = mask[y * width + x];
          if (v > 1) throw ValidationError("mask_to_patch_indices: mask is not binary");
          on += v;
        }
      if (static_cast<double>(on) / area > threshold) hits.push_back(py * pw + px);
    }
  return SubjectIndexSet(std::move(hits));
}

std::vector<SubjectIndexSet> subjects_for(const FrameInput& clip, std::size_t patch_size, double threshold) {
  std::vector<SubjectIndexSet> out;
  out.reserve(clip.frames);
  for (std::size_t t = 0; t < clip.frames; ++t) {
    out.push_back(mask_to_patch_indices(clip.mask(t), clip.height, clip.width, patch_size, threshold));
  }
  return out;
}

// ---- synthetic spec ------------------------------------------------------

const char* to_string(Motif motif) {
  switch (motif) {
    case Motif::kTexture: return "texture";
    case Motif::kColor: return "color";
    case Motif::kOrder: return "order";
  }
  return "?";
}

Motif parse_motif(const std::string& s) {
  if (s == "texture") return Motif::kTexture;
  if (s == "color") return Motif::kColor;
  if (s == "order") return Motif::kOrder;
  throw ValidationError("unknown motif '" + s + "' (texture|color|order)");
}

void SyntheticSpec::validate() const {
  if (frames == 0 || height == 0 || width == 0) throw ValidationError("synthetic spec: empty clip dims");
  if (motif == Motif::kOrder && frames < kNumEmotions) {
    throw ValidationError("synthetic spec: order motif needs at least 7 frames");
  }
  if (subject_min == 0 || subject_min > subject_max || subject_max > std::min(height, width)) {
    throw ValidationError("synthetic spec: bad subject size range");
  }
  if (distractors > 0 && (distractor_size == 0 || distractor_size > std::min(height, width))) {
    throw ValidationError("synthetic spec: bad distractor size");
  }
  if (emotion_words_min == 0 || emotion_words_min > emotion_words_max) {
    throw ValidationError("synthetic spec: bad emotion word range");
  }
  if (!(noise >= 0.0 && noise <= 0.5)) throw ValidationError("synthetic spec: noise must lie in [0, 0.5]");
}

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = nlohmann::json{{"frames", s.frames},
                     {"height", s.height},
                     {"width", s.width},
                     {"motif", to_string(s.motif)},
                     {"subject_min", s.subject_min},
                     {"subject_max", s.subject_max},
                     {"distractors", s.distractors},
                     {"distractor_size", s.distractor_size},
                     {"noise", s.noise},
                     {"emotion_words_min", s.emotion_words_min},
                     {"emotion_words_max", s.emotion_words_max},
                     {"store_sentiment", s.store_sentiment}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  static const std::set<std::string> kKeys = {"frames",      "height",          "width",
                                              "motif",       "subject_min",     "subject_max",
                                              "distractors", "distractor_size", "noise",
                                              "emotion_words_min", "emotion_words_max", "store_sentiment"};
  if (!j.is_object()) throw ValidationError("synthetic spec must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!kKeys.count(key)) throw ValidationError("synthetic spec: unknown key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("frames", s.frames);
    get("height", s.height);
    get("width", s.width);
    get("subject_min", s.subject_min);
    get("subject_max", s.subject_max);
    get("distractors", s.distractors);
    get("distractor_size", s.distractor_size);
    get("noise", s.noise);
    get("emotion_words_min", s.emotion_words_min);
    get("emotion_words_max", s.emotion_words_max);
    get("store_sentiment", s.store_sentiment);
    if (j.contains("motif")) s.motif = parse_motif(j.at("motif"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("synthetic spec: ") + e.what());
  }
}

// ---- generator -----------------------------------------------------------

namespace {

using Rgb = std::array<double, 3>;

// Distinct hues, one per emotion class, for the colour motif.
constexpr std::array<Rgb, kNumEmotions> kPalette = {{
    {0.90, 0.10, 0.10},
    {0.10, 0.75, 0.10},
    {0.10, 0.20, 0.90},
    {0.95, 0.85, 0.10},
    {0.60, 0.10, 0.80},
    {0.10, 0.85, 0.85},
    {0.95, 0.55, 0.10},
}};

// Binary texture for each class; every pattern covers about half its box,
// so mean colour carries no class information.
bool texture_on(std::size_t cls, std::size_t y, std::size_t x, std::size_t phase) {
  switch (cls) {
    case 0: return ((y + phase) % 2) == 0;
    case 1: return ((x + phase) % 2) == 0;
    case 2: return ((x + y + phase) % 2) == 0;
    case 3: return (((y + phase) / 2) % 2) == 0;
    case 4: return (((x + phase) / 2) % 2) == 0;
    case 5: return (((x + y + phase) / 2) % 2) == 0;
    default: return (((x + 64 - y + phase) / 2) % 2) == 0;
  }
}

struct Canvas {
  std::size_t T, H, W;
  std::vector<double> px;  // T*H*W*3
  double& at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) {
    return px[((t * H + y) * W + x) * 3 + c];
  }
};

class Generator {
 public:
  Generator(const SyntheticSpec& spec, std::uint64_t seed) : spec_(spec), rng_(seed) {}

  ClipRecord make(std::size_t index) {
    ClipRecord r;
    char id[32];
    std::snprintf(id, sizeof(id), "clip%06zu", index);
    r.id = id;
    const auto label = static_cast<std::size_t>(uniform_int(0, kNumEmotions - 1));
    r.label = static_cast<int>(label);
    r.caption = caption(label);
    r.frames = frames(label);
    if (spec_.store_sentiment) r.sentiment = score_sentiment(r.caption);
    return r;
  }

 private:
  long uniform_int(long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(rng_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  Rgb random_color(double lo, double hi) { return {uniform(lo, hi), uniform(lo, hi), uniform(lo, hi)}; }

  std::string caption(std::size_t label) {
    static const std::array<const char*, 6> kOpen = {"the person seems", "someone looks", "a speaker is",
                                                     "she sounds",       "he appears",    "the guest feels"};
    static const std::array<const char*, 6> kClose = {"right now",       "while talking", "in the scene",
                                                      "about the news", "at home",       "on stage"};
    const auto& words = default_lexicon()[label];
    const auto count = static_cast<std::size_t>(
        uniform_int(static_cast<long>(spec_.emotion_words_min), static_cast<long>(spec_.emotion_words_max)));
    std::string text = kOpen[static_cast<std::size_t>(uniform_int(0, kOpen.size() - 1))];
    for (std::size_t i = 0; i < count; ++i) {
      text += i == 0 ? " " : " and ";
      text += words[static_cast<std::size_t>(uniform_int(0, static_cast<long>(words.size()) - 1))];
    }
    text += " ";
    text += kClose[static_cast<std::size_t>(uniform_int(0, kClose.size() - 1))];
    return text;
  }

  FrameInput frames(std::size_t label) {
    const std::size_t T = spec_.frames, H = spec_.height, W = spec_.width;
    Canvas cv{T, H, W, std::vector<double>(T * H * W * 3)};
    FrameInput clip;
    clip.frames = T;
    clip.height = H;
    clip.width = W;
    clip.masks.assign(T * H * W, 0);

    const Rgb background = random_color(0.1, 0.6);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
          for (std::size_t c = 0; c < 3; ++c) cv.at(t, y, x, c) = background[c];

    for (std::size_t k = 0; k < spec_.distractors; ++k) {
      const auto cls = static_cast<std::size_t>(uniform_int(0, kNumEmotions - 1));
      const std::size_t s = spec_.distractor_size;
      const auto y0 = static_cast<std::size_t>(uniform_int(0, static_cast<long>(H - s)));
      const auto x0 = static_cast<std::size_t>(uniform_int(0, static_cast<long>(W - s)));
      Look look = random_look();
      look.flash = static_cast<std::size_t>(uniform_int(0, static_cast<long>(T) - 1));
      for (std::size_t t = 0; t < T; ++t) paint_motif(cv, t, y0, x0, s, s, cls, look);
    }

    // Subject box moving on a straight line between two random placements.
    const auto sh = static_cast<std::size_t>(uniform_int(static_cast<long>(spec_.subject_min), static_cast<long>(spec_.subject_max)));
    const auto sw = static_cast<std::size_t>(uniform_int(static_cast<long>(spec_.subject_min), static_cast<long>(spec_.subject_max)));
    const double ys = uniform(0, static_cast<double>(H - sh)), ye = uniform(0, static_cast<double>(H - sh));
    const double xs = uniform(0, static_cast<double>(W - sw)), xe = uniform(0, static_cast<double>(W - sw));
    Look look = random_look();
    look.flash = label;
    for (std::size_t t = 0; t < T; ++t) {
      const double f = T > 1 ? static_cast<double>(t) / static_cast<double>(T - 1) : 0.0;
      const auto y0 = static_cast<std::size_t>(std::lround(ys + f * (ye - ys)));
      const auto x0 = static_cast<std::size_t>(std::lround(xs + f * (xe - xs)));
      paint_motif(cv, t, y0, x0, sh, sw, label, look);
      for (std::size_t y = y0; y < y0 + sh; ++y)
        for (std::size_t x = x0; x < x0 + sw; ++x) clip.masks[(t * H + y) * W + x] = 1;
    }

    clip.pixels.resize(cv.px.size());
    for (std::size_t i = 0; i < cv.px.size(); ++i) {
      const double v = std::clamp(cv.px[i] + uniform(-spec_.noise, spec_.noise), 0.0, 1.0);
      clip.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return clip;
  }

  void paint(Canvas& cv, std::size_t t, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w,
             std::size_t cls, const Rgb& on, const Rgb& off, std::size_t phase) {
    for (std::size_t y = 0; y < h && y0 + y < cv.H; ++y)
      for (std::size_t x = 0; x < w && x0 + x < cv.W; ++x) {
        const Rgb& c = texture_on(cls, y, x, phase) ? on : off;
        for (std::size_t k = 0; k < 3; ++k) cv.at(t, y0 + y, x0 + x, k) = c[k];
      }
  }

  // Per-box appearance that does not depend on the class.
  struct Look {
    Rgb a, b, plain;
    std::size_t phase = 0;
    std::size_t flash = 0;  // frame at which an order-motif box is brightest
  };

  Look random_look() {
    Look look;
    look.a = random_color(0.0, 1.0);
    look.b = random_color(0.0, 1.0);
    look.plain = random_color(0.1, 0.6);
    look.phase = static_cast<std::size_t>(uniform_int(0, 3));
    return look;
  }

  void paint_motif(Canvas& cv, std::size_t t, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w,
                   std::size_t cls, const Look& look) {
    switch (spec_.motif) {
      case Motif::kTexture:
        paint(cv, t, y0, x0, h, w, cls, look.a, look.b, look.phase);
        break;
      case Motif::kColor:
        paint(cv, t, y0, x0, h, w, cls, kPalette[cls], kPalette[cls], 0);
        break;
      case Motif::kOrder: {
        // Brightness climbs towards white and peaks at frame `flash`, then
        // restarts. Every class shows the same set of frames.
        const std::size_t T = cv.T;
        const double level =
            T > 1 ? static_cast<double>((t + T - look.flash - 1) % T) / static_cast<double>(T - 1) : 1.0;
        Rgb c;
        for (std::size_t k = 0; k < 3; ++k) c[k] = look.plain[k] + (1.0 - look.plain[k]) * level;
        paint(cv, t, y0, x0, h, w, 0, c, c, 0);
        break;
      }
    }
  }

  const SyntheticSpec& spec_;
  std::mt19937_64 rng_;
};

}  // namespace

std::vector<ClipRecord> synthesize_records(std::size_t n, const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Generator gen(spec, seed);
  std::vector<ClipRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(gen.make(i));
  return out;
}

void generate_synthetic_dataset(const std::filesystem::path& dir, std::size_t n, const SyntheticSpec& spec,
                                std::uint64_t seed) {
  const auto records = synthesize_records(n, spec, seed);
  write_dataset(dir, records);
}

// ---- file format ---------------------------------------------------------

namespace {

std::vector<std::uint8_t> encode_payload(const char* magic, const FrameInput& clip, std::uint32_t channels,
                                         std::span<const std::uint8_t> payload) {
  ByteWriter w;
  w.text(magic);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(clip.frames));
  w.u32(static_cast<std::uint32_t>(clip.height));
  w.u32(static_cast<std::uint32_t>(clip.width));
  w.u32(channels);
  w.raw(payload);
  return std::move(w.bytes());
}

struct PayloadHeader {
  std::size_t T, H, W, C;
};

std::span<const std::uint8_t> decode_payload(ByteReader& r, const char* magic, std::uint32_t channels,
                                             PayloadHeader& h) {
  auto m = r.raw(4);
  if (std::memcmp(m.data(), magic, 4) != 0) r.fail(std::string("bad magic, expected ") + magic);
  const auto version = r.u32();
  if (version != kDatasetVersion) r.fail("unsupported version " + std::to_string(version));
  h.T = r.u32();
  h.H = r.u32();
  h.W = r.u32();
  h.C = r.u32();
  if (h.T == 0 || h.H == 0 || h.W == 0) r.fail("zero dimension");
  if (h.C != channels) r.fail("expected " + std::to_string(channels) + " channels, got " + std::to_string(h.C));
  const std::size_t n = h.T * h.H * h.W * h.C;
  if (n / h.C / h.W / h.H != h.T) r.fail("dimensions overflow");
  auto payload = r.raw(n);
  if (r.remaining() != 0) r.fail("trailing bytes");
  return payload;
}

}  // namespace

std::vector<std::uint8_t> encode_frames_file(const FrameInput& clip) {
  return encode_payload("EVID", clip, 3, clip.pixels);
}

std::vector<std::uint8_t> encode_masks_file(const FrameInput& clip) {
  return encode_payload("EMSK", clip, 1, clip.masks);
}

void decode_frames_file(std::span<const std::uint8_t> bytes, FrameInput& clip, const std::string& context) {
  ByteReader r(bytes, context);
  PayloadHeader h{};
  auto payload = decode_payload(r, "EVID", 3, h);
  clip.frames = h.T;
  clip.height = h.H;
  clip.width = h.W;
  clip.pixels.assign(payload.begin(), payload.end());
}

void decode_masks_file(std::span<const std::uint8_t> bytes, FrameInput& clip, const std::string& context) {
  ByteReader r(bytes, context);
  PayloadHeader h{};
  const std::size_t header_end = 24;
  auto payload = decode_payload(r, "EMSK", 1, h);
  if (h.T != clip.frames || h.H != clip.height || h.W != clip.width) {
    throw FormatError(context + ": mask dims " + std::to_string(h.T) + "x" + std::to_string(h.H) + "x" +
                      std::to_string(h.W) + " disagree with frames at offset 8");
  }
  for (std::size_t i = 0; i < payload.size(); ++i) {
    if (payload[i] > 1) {
      throw FormatError(context + ": non-binary mask value at offset " + std::to_string(header_end + i));
    }
  }
  clip.masks.assign(payload.begin(), payload.end());
}

void write_dataset(const std::filesystem::path& dir, std::span<const ClipRecord> records) {
  std::filesystem::create_directories(dir / "clips");
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary | std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.jsonl").string());
  for (const auto& r : records) {
    const std::string frames_rel = "clips/" + r.id + ".evid";
    const std::string masks_rel = "clips/" + r.id + ".emsk";
    write_file(dir / frames_rel, encode_frames_file(r.frames));
    write_file(dir / masks_rel, encode_masks_file(r.frames));
    nlohmann::json j{{"id", r.id}, {"frames", frames_rel}, {"masks", masks_rel}, {"caption", r.caption}};
    if (r.sentiment) j["sentiment"] = r.sentiment->p;
    if (r.label) j["label"] = *r.label;
    manifest << j.dump() << '\n';
  }
  if (!manifest) throw std::runtime_error("short write to manifest");
}

DatasetReader::DatasetReader(std::filesystem::path dir) : dir_(std::move(dir)) {
  manifest_.open(dir_ / "manifest.jsonl", std::ios::binary);
  if (!manifest_) throw FormatError("cannot open " + (dir_ / "manifest.jsonl").string());
}

std::optional<ClipRecord> DatasetReader::next() {
  std::string line;
  while (std::getline(manifest_, line)) {
    ++line_;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "manifest line " + std::to_string(line_);
    ClipRecord r;
    std::string frames_rel, masks_rel;
    try {
      const auto j = nlohmann::json::parse(line);
      r.id = j.at("id").get<std::string>();
      frames_rel = j.at("frames").get<std::string>();
      masks_rel = j.at("masks").get<std::string>();
      r.caption = j.at("caption").get<std::string>();
      if (j.contains("sentiment")) {
        const auto v = j.at("sentiment").get<std::vector<double>>();
        if (v.size() != kNumEmotions) throw FormatError(where + ": sentiment needs 7 entries");
        SentimentDistribution s;
        std::copy(v.begin(), v.end(), s.p.begin());
        s.validate();
        r.sentiment = s;
      }
      if (j.contains("label")) {
        const int label = j.at("label").get<int>();
        if (label < 0 || label >= static_cast<int>(kNumEmotions)) throw FormatError(where + ": label out of range");
        r.label = label;
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    } catch (const ValidationError& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (r.caption.empty()) throw FormatError(where + ": empty caption for clip '" + r.id + "'");
    for (const auto& [rel, what] : {std::pair{frames_rel, "frames"}, std::pair{masks_rel, "masks"}}) {
      if (!std::filesystem::exists(dir_ / rel)) {
        throw FormatError("clip '" + r.id + "': missing " + what + " file " + (dir_ / rel).string());
      }
    }
    decode_frames_file(read_file(dir_ / frames_rel), r.frames, "clip '" + r.id + "' " + frames_rel);
    decode_masks_file(read_file(dir_ / masks_rel), r.frames, "clip '" + r.id + "' " + masks_rel);
    return r;
  }
  return std::nullopt;
}

std::vector<ClipRecord> load_dataset(const std::filesystem::path& dir) {
  DatasetReader reader(dir);
  std::vector<ClipRecord> out;
  while (auto r = reader.next()) out.push_back(std::move(*r));
  return out;
}

// ---- batching ------------------------------------------------------------

const char* to_string(BatchStrategy s) { return s == BatchStrategy::kShuffle ? "shuffle" : "class-collision"; }

BatchStrategy parse_batch_strategy(const std::string& s) {
  if (s == "shuffle") return BatchStrategy::kShuffle;
  if (s == "class-collision") return BatchStrategy::kClassCollision;
  throw ValidationError("unknown batch strategy '" + s + "' (shuffle|class-collision)");
}

SentimentDistribution record_sentiment(const ClipRecord& record, const SentimentScorer& scorer) {
  return record.sentiment ? *record.sentiment : scorer.score(record.caption);
}

std::vector<Batch> make_batches(std::span<const ClipRecord> records, std::size_t batch_size, std::uint64_t seed,
                                BatchStrategy strategy) {
  if (batch_size == 0) throw ValidationError("make_batches: batch size must be positive");
  if (batch_size > records.size()) {
    throw ValidationError("make_batches: batch size " + std::to_string(batch_size) + " exceeds dataset size " +
                          std::to_string(records.size()));
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Batch> batches;
  if (strategy == BatchStrategy::kShuffle) {
    for (std::size_t start = 0; start + batch_size <= order.size(); start += batch_size) {
      batches.push_back(Batch{std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                       order.begin() + static_cast<std::ptrdiff_t>(start + batch_size))});
    }
    return batches;
  }

  const LexiconScorer scorer;
  std::array<std::vector<std::size_t>, kNumEmotions> pools;
  for (auto idx : order) pools[record_sentiment(records[idx], scorer).argmax()].push_back(idx);
  std::size_t remaining = records.size();
  while (remaining >= batch_size) {
    Batch b;
    while (b.indices.size() < batch_size) {
      // Pick a group with probability proportional to what it has left.
      auto pick = std::uniform_int_distribution<std::size_t>(0, remaining - 1)(rng);
      std::size_t k = 0;
      while (pick >= pools[k].size()) pick -= pools[k++].size();
      const std::size_t take = std::min({std::size_t{2}, pools[k].size(), batch_size - b.indices.size()});
      for (std::size_t i = 0; i < take; ++i) {
        b.indices.push_back(pools[k].back());
        pools[k].pop_back();
      }
      remaining -= take;
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace eclip
