#pragma once

// Grid runs over attention mode × β × temporal mode × seed: train, probe, tabulate.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eclip/probe.hpp"
#include "eclip/train.hpp"

namespace eclip {

// Grid file keys:
//   "base"           train config applied to every cell (see TrainConfig)
//   "attention_mode" list of modes (default: the base value)
//   "beta"           list of β values (default: the base value)
//   "temporal_mode"  list of modes (default: the base value)
//   "seeds"          list of training seeds (default: [base seed])
//   "task"           probe task, default "multiclass"
//   "probe_seed"     split seed, default 0
//   "data"           {"dir": DIR} or {"synthetic": SPEC, "n": N, "seed": S}
struct AblationGrid {
  TrainConfig base;
  std::vector<AttentionMode> attention_modes;
  std::vector<double> betas;
  std::vector<TemporalMode> temporal_modes;
  std::vector<std::uint64_t> seeds;
  ProbeTask task = ProbeTask::kMulticlass;
  ProbeOptions probe;
  std::string data_dir;
  std::optional<SyntheticSpec> synthetic;
  std::size_t synthetic_n = 0;
  std::uint64_t data_seed = 0;
};

AblationGrid parse_grid(const nlohmann::json& j);
AblationGrid load_grid(const std::filesystem::path& path);
// Records named by the grid's "data" entry.
std::vector<ClipRecord> grid_records(const AblationGrid& grid);

struct AblationRow {
  AttentionMode attention_mode = AttentionMode::kSap;
  double beta = 0.0;
  TemporalMode temporal_mode = TemporalMode::kTransformer;
  std::uint64_t seed = 0;
  MetricReport report;
  double final_loss = 0.0;  // mean loss of the last epoch
  double train_seconds = 0.0;
};

// Cells in grid order (attention mode, then β, then temporal mode, then seed).
// With log_dir set, each cell writes its step log there.
std::vector<AblationRow> run_ablation(const AblationGrid& grid, std::span<const ClipRecord> records,
                                      std::ostream* progress = nullptr,
                                      const std::optional<std::filesystem::path>& log_dir = std::nullopt);

nlohmann::json ablation_json(std::span<const AblationRow> rows);
// Aligned text table, one line per cell followed by per-setting means.
std::string ablation_table(std::span<const AblationRow> rows);

}  // namespace eclip
