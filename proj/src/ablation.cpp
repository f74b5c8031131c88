#include "eclip/ablation.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "eclip/error.hpp"

namespace eclip {

AblationGrid parse_grid(const nlohmann::json& j) {
  static const std::set<std::string> kKeys = {"base",  "attention_mode", "beta",       "temporal_mode",
                                              "seeds", "task",           "probe_seed", "data"};
  if (!j.is_object()) throw ValidationError("grid must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!kKeys.count(key)) throw ValidationError("grid: unknown key '" + key + "'");
  }
  AblationGrid grid;
  try {
    if (j.contains("base")) grid.base = j.at("base").get<TrainConfig>();
    grid.base.validate();
    if (j.contains("attention_mode")) {
      for (const auto& s : j.at("attention_mode")) grid.attention_modes.push_back(parse_attention_mode(s));
    } else {
      grid.attention_modes = {grid.base.model.attention_mode};
    }
    if (j.contains("beta")) {
      grid.betas = j.at("beta").get<std::vector<double>>();
    } else {
      grid.betas = {grid.base.beta};
    }
    if (j.contains("temporal_mode")) {
      for (const auto& s : j.at("temporal_mode")) grid.temporal_modes.push_back(parse_temporal_mode(s));
    } else {
      grid.temporal_modes = {grid.base.model.temporal_mode};
    }
    if (j.contains("seeds")) {
      grid.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    } else {
      grid.seeds = {grid.base.seed};
    }
    if (j.contains("task")) grid.task = parse_probe_task(j.at("task"));
    if (j.contains("probe_seed")) grid.probe.seed = j.at("probe_seed").get<std::uint64_t>();
    if (!j.contains("data")) throw ValidationError("grid: missing 'data'");
    const auto& data = j.at("data");
    if (data.contains("dir")) {
      grid.data_dir = data.at("dir").get<std::string>();
    } else if (data.contains("synthetic")) {
      grid.synthetic = data.at("synthetic").get<SyntheticSpec>();
      grid.synthetic_n = data.at("n").get<std::size_t>();
      grid.data_seed = data.value("seed", std::uint64_t{0});
    } else {
      throw ValidationError("grid: 'data' needs 'dir' or 'synthetic'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("grid: ") + e.what());
  }
  if (grid.attention_modes.empty() || grid.betas.empty() || grid.temporal_modes.empty() || grid.seeds.empty()) {
    throw ValidationError("grid: every axis needs at least one value");
  }
  for (double b : grid.betas) {
    if (!(b >= 0.0)) throw ValidationError("grid: beta values must be non-negative");
  }
  return grid;
}

AblationGrid load_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open grid " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return parse_grid(j);
}

std::vector<ClipRecord> grid_records(const AblationGrid& grid) {
  if (grid.synthetic) return synthesize_records(grid.synthetic_n, *grid.synthetic, grid.data_seed);
  return load_dataset(grid.data_dir);
}

std::vector<AblationRow> run_ablation(const AblationGrid& grid, std::span<const ClipRecord> records,
                                      std::ostream* progress, const std::optional<std::filesystem::path>& log_dir) {
  std::vector<AblationRow> rows;
  std::size_t cell = 0;
  for (auto attention : grid.attention_modes)
    for (double beta : grid.betas)
      for (auto temporal : grid.temporal_modes)
        for (auto seed : grid.seeds) {
          TrainConfig cfg = grid.base;
          cfg.model.attention_mode = attention;
          cfg.model.temporal_mode = temporal;
          cfg.beta = beta;
          cfg.seed = seed;
          cfg.checkpoint_path.clear();
          cfg.log_path = log_dir ? (*log_dir / ("cell-" + std::to_string(cell) + ".jsonl")).string() : "";
          if (progress) {
            *progress << "cell " << cell << ": attention=" << to_string(attention) << " beta=" << beta
                      << " temporal=" << to_string(temporal) << " seed=" << seed << '\n';
          }
          const TrainResult trained = train(cfg, records);
          ProbeOptions popt = grid.probe;
          popt.mask_threshold = cfg.mask_threshold;
          const ProbeResult probed = linear_probe(trained.model, records, grid.task, popt);
          const auto losses = trained.epoch_losses();
          rows.push_back(AblationRow{attention, beta, temporal, seed, probed.report,
                                     losses.empty() ? 0.0 : losses.back(), trained.seconds});
          ++cell;
        }
  return rows;
}

nlohmann::json ablation_json(std::span<const AblationRow> rows) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& r : rows) {
    cells.push_back({{"attention_mode", to_string(r.attention_mode)},
                     {"beta", r.beta},
                     {"temporal_mode", to_string(r.temporal_mode)},
                     {"seed", r.seed},
                     {"metrics", r.report},
                     {"final_loss", r.final_loss},
                     {"train_seconds", r.train_seconds}});
  }
  return nlohmann::json{{"cells", cells}};
}

namespace {

std::string fmt(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

std::string fmt(double v) { return fmt(std::optional<double>(v)); }

}  // namespace

std::string ablation_table(std::span<const AblationRow> rows) {
  const std::vector<std::string> header = {"attention", "beta", "temporal", "seed", "map", "auc",
                                           "r2",        "acc",  "wF1",      "mse",  "loss"};
  std::vector<std::vector<std::string>> lines;
  using Key = std::tuple<std::string, double, std::string>;
  std::map<Key, std::vector<const AblationRow*>> groups;
  std::vector<Key> order;
  for (const auto& r : rows) {
    char beta[32];
    std::snprintf(beta, sizeof(beta), "%g", r.beta);
    lines.push_back({to_string(r.attention_mode), beta, to_string(r.temporal_mode), std::to_string(r.seed),
                     fmt(r.report.map), fmt(r.report.auc), fmt(r.report.r2), fmt(r.report.accuracy),
                     fmt(r.report.weighted_f1), fmt(r.report.mse), fmt(r.final_loss)});
    const Key key{to_string(r.attention_mode), r.beta, to_string(r.temporal_mode)};
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&r);
  }
  for (const auto& key : order) {
    const auto& members = groups[key];
    auto mean = [&](auto field) -> std::optional<double> {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto* r : members)
        if (auto v = field(*r)) sum += *v, ++n;
      if (n == 0) return std::nullopt;
      return sum / static_cast<double>(n);
    };
    char beta[32];
    std::snprintf(beta, sizeof(beta), "%g", std::get<1>(key));
    lines.push_back({std::get<0>(key), beta, std::get<2>(key), "mean",
                     fmt(mean([](const AblationRow& r) { return r.report.map; })),
                     fmt(mean([](const AblationRow& r) { return r.report.auc; })),
                     fmt(mean([](const AblationRow& r) { return r.report.r2; })),
                     fmt(mean([](const AblationRow& r) { return r.report.accuracy; })),
                     fmt(mean([](const AblationRow& r) { return r.report.weighted_f1; })),
                     fmt(mean([](const AblationRow& r) { return r.report.mse; })),
                     fmt(mean([](const AblationRow& r) { return std::optional<double>(r.final_loss); }))});
  }
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& l : lines) width[c] = std::max(width[c], l[c].size());
  }
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      out << cells[c];
      if (c + 1 < cells.size()) out << std::string(width[c] - cells[c].size() + 2, ' ');
    }
    out << '\n';
  };
  emit(header);
  for (const auto& l : lines) emit(l);
  return out.str();
}

}  // namespace eclip
