#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "eclip/checkpoint.hpp"
#include "eclip/data.hpp"
#include "eclip/error.hpp"
#include "eclip/model.hpp"

using namespace eclip;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("eclip_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::map<std::string, std::vector<std::uint8_t>> snapshot(const fs::path& dir) {
  std::map<std::string, std::vector<std::uint8_t>> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_file(e.path());
  return files;
}

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.frames = 2;
  s.height = s.width = 16;
  s.subject_min = 5;
  s.subject_max = 8;
  s.distractor_size = 4;
  return s;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("mask to patch indices: trivial cases") {
  std::vector<std::uint8_t> mask(32 * 32, 1);
  CHECK(mask_to_patch_indices(mask, 32, 32, 16) == SubjectIndexSet::all(4));
  std::fill(mask.begin(), mask.end(), 0);
  CHECK(mask_to_patch_indices(mask, 32, 32, 16).empty());
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) mask[y * 32 + x] = 1;
  CHECK(mask_to_patch_indices(mask, 32, 32, 16) == SubjectIndexSet({0}));
}

TEST_CASE("mask to patch indices: errors") {
  std::vector<std::uint8_t> mask(32 * 32, 0);
  CHECK_THROWS_AS(mask_to_patch_indices(mask, 32, 32, 12), ValidationError);
  CHECK_THROWS_AS(mask_to_patch_indices(mask, 32, 32, 16, 1.0), ValidationError);
  CHECK_THROWS_AS(mask_to_patch_indices(mask, 32, 32, 16, -0.1), ValidationError);
  CHECK_THROWS_AS(mask_to_patch_indices(std::span(mask).first(100), 32, 32, 16), ValidationError);
  mask[5] = 2;
  CHECK_THROWS_AS(mask_to_patch_indices(mask, 32, 32, 16), ValidationError);
}

TEST_CASE("painting one patch selects exactly that patch, consistent with patchify") {
  const std::size_t size = 32, patch = 8, side = size / patch;
  for (std::size_t i = 0; i < side * side; ++i) {
    FrameInput clip;
    clip.frames = 1;
    clip.height = clip.width = size;
    clip.pixels.assign(size * size * 3, 0);
    clip.masks.assign(size * size, 0);
    for (std::size_t y = (i / side) * patch; y < (i / side + 1) * patch; ++y)
      for (std::size_t x = (i % side) * patch; x < (i % side + 1) * patch; ++x) {
        clip.masks[y * size + x] = 1;
        clip.pixels[(y * size + x) * 3] = 255;
      }
    CHECK(mask_to_patch_indices(clip.mask(0), size, size, patch) == SubjectIndexSet({i}));
    const Tensor p = patchify(clip, 0, patch);
    for (std::size_t r = 0; r < p.rows(); ++r) CHECK((p.at(r, 0) == 1.0) == (r == i));
  }
}

TEST_CASE("patch sets shrink as the threshold grows") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::uint8_t> mask(32 * 32);
    const double density = std::uniform_real_distribution<double>()(rng);
    for (auto& v : mask) v = std::bernoulli_distribution(density)(rng) ? 1 : 0;
    SubjectIndexSet prev = mask_to_patch_indices(mask, 32, 32, 8, 0.0);
    for (double t : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      const SubjectIndexSet cur = mask_to_patch_indices(mask, 32, 32, 8, t);
      for (auto i : cur.indices()) CHECK(prev.contains(i));
      prev = cur;
    }
  }
}

TEST_CASE("synthetic spec validation and JSON") {
  SyntheticSpec s;
  CHECK(s.motif == Motif::kColor);
  s.subject_max = 40;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  const SyntheticSpec o = small_spec();
  const nlohmann::json j = o;
  CHECK(nlohmann::json(j.get<SyntheticSpec>()) == j);
  CHECK_THROWS_AS(nlohmann::json({{"colour", 1}}).get<SyntheticSpec>(), ValidationError);
  CHECK(parse_motif("order") == Motif::kOrder);
  CHECK_THROWS_AS(parse_motif("shape"), ValidationError);
}

TEST_CASE("synthetic records are well formed") {
  for (Motif motif : {Motif::kTexture, Motif::kColor, Motif::kOrder}) {
    SyntheticSpec spec = small_spec();
    spec.motif = motif;
    if (motif == Motif::kOrder) spec.frames = 7;
    const auto records = synthesize_records(30, spec, 5);
    REQUIRE(records.size() == 30);
    std::set<std::string> ids;
    for (const auto& r : records) {
      ids.insert(r.id);
      CHECK_NOTHROW(r.frames.validate());
      CHECK(r.frames.frames == spec.frames);
      CHECK(!r.caption.empty());
      REQUIRE(r.label.has_value());
      REQUIRE(r.sentiment.has_value());
      // Captions carry class words, so the scorer peaks on the label.
      CHECK(r.sentiment->argmax() == static_cast<std::size_t>(*r.label));
      CHECK(*r.sentiment == score_sentiment(r.caption));
      for (std::size_t t = 0; t < spec.frames; ++t) CHECK_FALSE(mask_to_patch_indices(r.frames.mask(t), 16, 16, 4).empty());
    }
    CHECK(ids.size() == 30);
  }
}

TEST_CASE("generation is deterministic and seed dependent") {
  const fs::path a = temp_dir("gen_a"), b = temp_dir("gen_b"), c = temp_dir("gen_c");
  generate_synthetic_dataset(a, 12, small_spec(), 7);
  generate_synthetic_dataset(b, 12, small_spec(), 7);
  generate_synthetic_dataset(c, 12, small_spec(), 8);
  CHECK(snapshot(a) == snapshot(b));
  CHECK(snapshot(a) != snapshot(c));
}

TEST_CASE("empty dataset") {
  const fs::path dir = temp_dir("gen_empty");
  generate_synthetic_dataset(dir, 0, small_spec(), 1);
  CHECK(fs::file_size(dir / "manifest.jsonl") == 0);
  CHECK(load_dataset(dir).empty());
}

TEST_CASE("class histogram is uniform") {
  SyntheticSpec spec = small_spec();
  spec.frames = 1;
  spec.height = spec.width = 8;
  spec.subject_min = 2;
  spec.subject_max = 4;
  spec.distractors = 0;
  const auto records = synthesize_records(7000, spec, 11);
  std::array<double, 7> counts{};
  for (const auto& r : records) counts[static_cast<std::size_t>(*r.label)] += 1;
  double chi2 = 0.0;
  for (double c : counts) {
    CHECK(std::abs(c - 1000.0) <= 50.0);
    chi2 += (c - 1000.0) * (c - 1000.0) / 1000.0;
  }
  // 99.9th percentile of chi-square with 6 degrees of freedom.
  CHECK(chi2 < 22.46);
}

TEST_CASE("dataset round trip is exact") {
  const fs::path dir = temp_dir("roundtrip");
  auto records = synthesize_records(9, small_spec(), 3);
  records[2].sentiment.reset();
  records[4].label.reset();
  records[5].caption = "a caption with \"quotes\" and unicode é";
  write_dataset(dir, records);
  CHECK(load_dataset(dir) == records);

  DatasetReader reader(dir);
  std::size_t n = 0;
  while (auto r = reader.next()) CHECK(*r == records[n++]);
  CHECK(n == records.size());
}

TEST_CASE("payload codecs") {
  const auto record = synthesize_records(1, small_spec(), 4).front();
  const auto frames = encode_frames_file(record.frames);
  REQUIRE(frames.size() == 24 + 2 * 16 * 16 * 3);
  CHECK(std::string(frames.begin(), frames.begin() + 4) == "EVID");
  CHECK(frames[4] == 1);
  CHECK(frames[8] == 2);
  CHECK(frames[12] == 16);
  CHECK(frames[16] == 16);
  CHECK(frames[20] == 3);
  const auto masks = encode_masks_file(record.frames);
  CHECK(std::string(masks.begin(), masks.begin() + 4) == "EMSK");
  CHECK(masks[20] == 1);

  FrameInput clip;
  decode_frames_file(frames, clip, "f");
  decode_masks_file(masks, clip, "m");
  CHECK(clip == record.frames);

  for (std::size_t cut = 0; cut < frames.size(); cut += 97) {
    FrameInput c2;
    CHECK_THROWS_AS(decode_frames_file(std::span(frames).first(cut), c2, "f"), FormatError);
  }
  auto bad = frames;
  bad[0] = 'X';
  CHECK(message_of([&] { FrameInput c2; decode_frames_file(bad, c2, "f"); }).find("offset") != std::string::npos);
  bad = frames;
  bad[20] = 1;
  CHECK_THROWS_AS([&] { FrameInput c2; decode_frames_file(bad, c2, "f"); }(), FormatError);
  bad = frames;
  bad.push_back(0);
  CHECK_THROWS_AS([&] { FrameInput c2; decode_frames_file(bad, c2, "f"); }(), FormatError);

  auto bad_mask = masks;
  bad_mask[30] = 7;
  CHECK(message_of([&] { FrameInput c2 = clip; decode_masks_file(bad_mask, c2, "m"); }).find("offset 30") !=
        std::string::npos);
  bad_mask = masks;
  bad_mask[8] = 3;
  CHECK_THROWS_AS([&] { FrameInput c2 = clip; decode_masks_file(bad_mask, c2, "m"); }(), FormatError);
}

TEST_CASE("corrupted datasets raise format errors") {
  const fs::path dir = temp_dir("corrupt");
  const auto records = synthesize_records(3, small_spec(), 6);
  write_dataset(dir, records);

  const fs::path payload = dir / "clips" / (records[1].id + ".evid");
  auto bytes = read_file(payload);
  bytes.resize(bytes.size() / 2);
  write_file(payload, bytes);
  CHECK(message_of([&] { load_dataset(dir); }).find(records[1].id) != std::string::npos);

  write_dataset(dir, records);
  fs::remove(dir / "clips" / (records[2].id + ".emsk"));
  CHECK(message_of([&] { load_dataset(dir); }).find(records[2].id) != std::string::npos);

  write_dataset(dir, records);
  {
    std::ofstream out(dir / "manifest.jsonl", std::ios::app);
    out << "{not json\n";
  }
  CHECK(message_of([&] { load_dataset(dir); }).find("line 4") != std::string::npos);

  CHECK_THROWS_AS(load_dataset(dir / "nowhere"), FormatError);
}

TEST_CASE("make_batches: shuffle") {
  const auto records = synthesize_records(20, small_spec(), 9);
  const auto all = make_batches(records, 20, 1, BatchStrategy::kShuffle);
  REQUIRE(all.size() == 1);
  CHECK(std::set<std::size_t>(all[0].indices.begin(), all[0].indices.end()).size() == 20);

  const auto a = make_batches(records, 6, 1, BatchStrategy::kShuffle);
  const auto b = make_batches(records, 6, 2, BatchStrategy::kShuffle);
  const auto a2 = make_batches(records, 6, 1, BatchStrategy::kShuffle);
  CHECK(a.size() == 3);
  CHECK(a[0].indices == a2[0].indices);
  CHECK(a[0].indices != b[0].indices);
  for (const auto& batch : a) CHECK(batch.indices.size() == 6);

  const auto full_a = make_batches(records, 4, 1, BatchStrategy::kShuffle);
  const auto full_b = make_batches(records, 4, 2, BatchStrategy::kShuffle);
  std::multiset<std::size_t> ma, mb;
  for (const auto& x : full_a) ma.insert(x.indices.begin(), x.indices.end());
  for (const auto& x : full_b) mb.insert(x.indices.begin(), x.indices.end());
  CHECK(ma == mb);
  CHECK(ma.size() == 20);

  CHECK_THROWS_AS(make_batches(records, 21, 1, BatchStrategy::kShuffle), ValidationError);
  CHECK_THROWS_AS(make_batches(records, 0, 1, BatchStrategy::kShuffle), ValidationError);
}

TEST_CASE("make_batches: class collision") {
  const auto records = synthesize_records(200, small_spec(), 10);
  const auto batches = make_batches(records, 8, 3, BatchStrategy::kClassCollision);
  CHECK(batches.size() == 25);
  CHECK(make_batches(records, 8, 3, BatchStrategy::kClassCollision)[4].indices == batches[4].indices);
  std::set<std::size_t> seen;
  std::size_t with_pair = 0;
  for (const auto& b : batches) {
    REQUIRE(b.indices.size() == 8);
    std::array<int, 7> per_class{};
    for (auto i : b.indices) {
      CHECK(seen.insert(i).second);
      ++per_class[static_cast<std::size_t>(*records[i].label)];
    }
    if (*std::max_element(per_class.begin(), per_class.end()) >= 2) ++with_pair;
  }
  // Pools only run dry near the end of the epoch.
  CHECK(with_pair >= batches.size() - 2);
  CHECK(parse_batch_strategy("class-collision") == BatchStrategy::kClassCollision);
  CHECK_THROWS_AS(parse_batch_strategy("random"), ValidationError);
}
