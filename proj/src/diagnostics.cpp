#include "eclip/diagnostics.hpp"

#include <algorithm>

#include "eclip/error.hpp"
#include "eclip/loss.hpp"

namespace eclip {

Tensor effective_saam_attention(const AttentionTrace& trace, std::size_t groups, std::size_t heads) {
  const Tensor& s = trace.context;
  const Tensor& u = trace.subject;
  const Tensor& a = trace.gate;
  if (!s.defined() || !u.defined() || !a.defined()) {
    throw ValidationError("effective_saam_attention: trace is not from a SAAM layer");
  }
  const std::size_t n = a.rows();
  if (s.dims() != u.dims() || s.rows() != groups * heads * n || s.cols() != n) {
    throw ShapeError("effective_saam_attention: inconsistent trace shapes");
  }
  std::vector<double> out(s.numel(), 0.0);
  for (std::size_t b = 0; b < groups * heads; ++b) {
    const std::size_t off = b * n;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k) {
        const double sik = s.at(off + i, k), aik = a.at(i, k);
        out[(off + i) * n + k] += sik * (1.0 - aik);
        const double routed = sik * aik;
        if (routed == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) out[(off + i) * n + j] += routed * u.at(off + k, j);
      }
  }
  return Tensor(s.dims(), std::move(out));
}

std::vector<double> hmn_attention_profile(const EmotionClipModel& model, const FrameInput& clip,
                                          double mask_threshold) {
  const auto& c = model.config();
  if (c.attention_mode == AttentionMode::kVanilla) {
    throw ValidationError("attention profile needs attention_mode sap or saam, not vanilla");
  }
  clip.validate();
  const VideoInput in{&clip, subjects_for(clip, c.patch_size, mask_threshold)};
  FrameTrace trace;
  Graph g;
  model.encode_frames(g, std::span<const VideoInput>(&in, 1), &trace);

  const std::size_t m = c.patches(), n = c.tokens(), heads = c.n_heads, G = clip.frames;
  const std::size_t hmn = m + 1;
  std::vector<double> profile(c.n_layers, 0.0);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const Tensor probs =
        trace.saam[l] ? effective_saam_attention(trace.layers[l], G, heads) : trace.layers[l].context;
    double total = 0.0;
    for (std::size_t f = 0; f < G; ++f)
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t row = (f * heads + h) * n + hmn;
        for (auto i : in.subjects[f].indices()) total += probs.at(row, i);
      }
    profile[l] = total / static_cast<double>(G * heads);
  }
  return profile;
}

GradcheckReport model_gradcheck(const ModelConfig& config, std::uint64_t seed, std::size_t batch, double beta,
                                double eps) {
  config.validate();
  if (batch == 0) throw ValidationError("gradcheck: batch must be positive");
  SyntheticSpec spec;
  spec.frames = config.frames;
  spec.height = spec.width = config.image_size;
  spec.subject_min = std::max<std::size_t>(1, config.image_size / 4);
  spec.subject_max = std::max(spec.subject_min, config.image_size / 2);
  spec.distractors = 0;
  spec.motif = Motif::kColor;
  const auto records = synthesize_records(batch, spec, seed);

  EmotionClipModel model(config, seed);
  std::vector<std::string> corpus;
  for (const auto& r : records) corpus.push_back(r.caption);
  model.set_vocabulary(Vocabulary::build(corpus, config.vocab_size));

  std::vector<VideoInput> videos;
  std::vector<std::vector<std::size_t>> tokens;
  std::vector<SentimentDistribution> sentiments;
  for (const auto& r : records) {
    videos.push_back(VideoInput{&r.frames, subjects_for(r.frames, config.patch_size)});
    tokens.push_back(model.tokenize(r.caption));
    sentiments.push_back(*r.sentiment);
  }
  const ReweightMatrix w = reweight_matrix(sentiments, beta);
  const auto f = [&](Graph& g) {
    const Tensor v = model.encode_video(g, videos);
    const Tensor t = model.encode_text(g, tokens);
    return total_loss(g, similarity_logits(g, v, t, model.inverse_temperature(g)), w);
  };

  GradcheckReport report;
  for (const auto& [name, p] : model.trainable()) {
    const double err = finite_diff_check(f, {p}, eps);
    report.errors[name] = err;
    report.max_error = std::max(report.max_error, err);
    report.elements += p.numel();
  }
  return report;
}

}  // namespace eclip
