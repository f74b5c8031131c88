// Command-line front end: data generation, training, probing and diagnostics.
//
// Exit codes: 0 success, 1 validation error (bad arguments, configs or
// inputs, failed gradient check), 2 format error (corrupt files), 3 any
// other failure (I/O, non-finite training loss).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "eclip/ablation.hpp"
#include "eclip/diagnostics.hpp"
#include "eclip/error.hpp"
#include "eclip/probe.hpp"
#include "eclip/train.hpp"

namespace fs = std::filesystem;
using namespace eclip;

namespace {

constexpr double kGradTolerance = 1e-4;

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

int gen_data(const fs::path& out, std::size_t n, std::uint64_t seed, const std::string& spec_path) {
  SyntheticSpec spec;
  if (!spec_path.empty()) spec = read_json(spec_path).get<SyntheticSpec>();
  generate_synthetic_dataset(out, n, spec, seed);
  std::cout << "wrote " << n << " clips to " << out.string() << '\n';
  return 0;
}

int train_cmd(const fs::path& config_path, const fs::path& data, const fs::path& out) {
  TrainConfig cfg = load_train_config(config_path);
  cfg.checkpoint_path = out.string();
  if (cfg.log_path.empty()) cfg.log_path = out.string() + ".log.jsonl";
  const auto records = load_dataset(data);
  const auto result = train(cfg, records, &std::cerr);
  const auto losses = result.epoch_losses();
  std::cout << "trained " << result.log.size() << " steps in " << result.seconds << " s; final epoch loss "
            << (losses.empty() ? 0.0 : losses.back()) << "\ncheckpoint " << out.string() << "\nlog "
            << cfg.log_path << '\n';
  return 0;
}

int probe_cmd(const fs::path& ckpt, const fs::path& data, const std::string& task, std::uint64_t seed) {
  const auto model = EmotionClipModel::load(ckpt);
  const auto records = load_dataset(data);
  ProbeOptions opt;
  opt.seed = seed;
  const auto result = linear_probe(model, records, parse_probe_task(task), opt);
  nlohmann::json j{{"task", task},
                   {"train_size", result.train_size},
                   {"test_size", result.test_size},
                   {"steps", result.steps},
                   {"metrics", result.report}};
  std::cout << j.dump(2) << '\n';
  return 0;
}

int gradcheck_cmd(const fs::path& config_path, std::size_t batch, std::uint64_t seed) {
  const TrainConfig cfg = load_train_config(config_path);
  const auto report = model_gradcheck(cfg.model, seed, batch, cfg.beta);
  for (const auto& [name, err] : report.errors) std::printf("%-48s %.3e\n", name.c_str(), err);
  std::printf("max relative error %.3e over %zu elements (tolerance %.0e): %s\n", report.max_error,
              report.elements, kGradTolerance, report.max_error < kGradTolerance ? "ok" : "FAILED");
  return report.max_error < kGradTolerance ? 0 : 1;
}

int attn_profile_cmd(const fs::path& ckpt, const fs::path& data, const std::string& clip_id) {
  const auto model = EmotionClipModel::load(ckpt);
  DatasetReader reader(data);
  while (auto r = reader.next()) {
    if (r->id != clip_id) continue;
    const auto profile = hmn_attention_profile(model, r->frames);
    for (std::size_t l = 0; l < profile.size(); ++l) std::printf("layer %zu %.6f\n", l, profile[l]);
    return 0;
  }
  throw ValidationError("no clip '" + clip_id + "' in " + data.string());
}

int ablate_cmd(const fs::path& grid_path, const fs::path& out) {
  const auto grid = load_grid(grid_path);
  const auto records = grid_records(grid);
  fs::create_directories(out);
  const auto rows = run_ablation(grid, records, &std::cerr, out);
  write_text(out / "results.json", ablation_json(rows).dump(2) + "\n");
  const std::string table = ablation_table(rows);
  write_text(out / "table.txt", table);
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Subject-aware, sentiment-guided video-text contrastive training"};
  app.require_subcommand(1);

  fs::path out, data, config, ckpt, grid;
  std::string spec_path, task = "multiclass", clip;
  std::size_t n = 0, batch = 2;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--n", n, "Number of clips")->required();
  gen->add_option("--seed", seed, "Generator seed");
  gen->add_option("--spec", spec_path, "Synthetic spec JSON");

  auto* tr = app.add_subcommand("train", "Train on a dataset");
  tr->add_option("--config", config, "Train config JSON")->required();
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--out", out, "Checkpoint path")->required();

  auto* pr = app.add_subcommand("probe", "Linear-probe a checkpoint");
  pr->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  pr->add_option("--data", data, "Labelled dataset directory")->required();
  pr->add_option("--task", task, "multilabel|multiclass|regression");
  pr->add_option("--seed", seed, "Split seed");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every parameter");
  gc->add_option("--config", config, "Train config JSON")->required();
  gc->add_option("--batch", batch, "Clips in the check batch");
  gc->add_option("--seed", seed, "Init and data seed");

  auto* ap = app.add_subcommand("attn-profile", "Subject-token attention mass per layer");
  ap->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  ap->add_option("--data", data, "Dataset directory")->required();
  ap->add_option("--clip", clip, "Clip id")->required();

  auto* ab = app.add_subcommand("ablate", "Run an ablation grid");
  ab->add_option("--grid", grid, "Grid JSON")->required();
  ab->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return gen_data(out, n, seed, spec_path);
    if (*tr) return train_cmd(config, data, out);
    if (*pr) return probe_cmd(ckpt, data, task, seed);
    if (*gc) return gradcheck_cmd(config, batch, seed);
    if (*ap) return attn_profile_cmd(ckpt, data, clip);
    if (*ab) return ablate_cmd(grid, out);
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
