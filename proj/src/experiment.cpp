#include "boxseg/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "boxseg/error.hpp"
#include "boxseg/evaluate.hpp"
#include "boxseg/random.hpp"

namespace boxseg {
namespace {

std::vector<const Sample*> pointers(const std::vector<Sample>& samples) {
  std::vector<const Sample*> out;
  for (const Sample& s : samples) out.push_back(&s);
  return out;
}

std::string cell_name(std::uint64_t seed, std::size_t f) {
  return "seed" + std::to_string(seed) + "_F" + std::to_string(f);
}

void save_model(const std::optional<std::filesystem::path>& cell_dir, const std::string& name,
                const ParamSet& params, const ArchConfig& arch, const TrainReport* report) {
  if (!cell_dir) return;
  const auto dir = *cell_dir / name;
  nlohmann::ordered_json meta{{"arch", to_json(arch)}};
  save_params(params, dir, meta.dump());
  if (report) report->write_jsonl(dir / "train_report.jsonl");
}

CellResult run_cell(const ExperimentSpec& spec, std::uint64_t seed, std::size_t f_size,
                    const std::vector<Sample>& pool, const std::vector<Sample>& test,
                    const std::optional<std::filesystem::path>& cell_dir) {
  CellResult cell;
  cell.seed = seed;
  cell.f_size = f_size;
  const ArchConfig& arch = spec.config.arch;
  TrainConfig train = spec.config.train;
  train.seed = derive_seed(seed, "train");
  TrainConfig anc_cfg = spec.config.ancillary;
  anc_cfg.seed = derive_seed(seed, "ancillary");
  const auto test_ptrs = pointers(test);
  auto miou = [&](ModelKind kind, const ParamSet& params) {
    return evaluate(kind, arch, params, test_ptrs).miou;
  };

  DatasetSplit split = split_dataset(pool, f_size, seed);
  const auto& strategies = spec.strategies;
  const bool needs_full_theta =
      std::any_of(strategies.begin(), strategies.end(), [](const std::string& s) { return s != "conv"; });

  ParamSet theta;
  if (needs_full_theta || strategies.empty()) {
    TrainReport rep;
    theta = train_ancillary(arch, split.fully, anc_cfg, &rep);
    cell.metrics["ancillary"] = miou(ModelKind::kAncillary, theta);
    cell.train_seconds["ancillary"] = rep.wall_seconds;
    save_model(cell_dir, "ancillary", theta, arch, &rep);
  }
  if (spec.f_only) {
    TrainConfig cfg = train;
    cfg.strategy = Strategy::kNone;
    PrimaryResult r = train_primary(arch, cfg, split.fully, {}, {});
    cell.metrics["f-only"] = miou(ModelKind::kPrimary, r.state.phi);
    cell.train_seconds["f-only"] = r.report.wall_seconds;
    save_model(cell_dir, "f-only", r.state.phi, arch, &r.report);
  }
  for (const std::string& name : strategies) {
    TrainConfig cfg = train;
    cfg.strategy = parse_strategy(name);
    if (cfg.strategy == Strategy::kConv) {
      const ProtocolResult p = run_protocol_conv(arch, cfg, anc_cfg, split.fully, split.weak);
      cell.metrics["ancillary-half"] = miou(ModelKind::kAncillary, p.theta);
      cell.metrics["conv-stage2"] = miou(ModelKind::kPrimary, p.stage2.state.phi);
      cell.metrics["conv"] = miou(ModelKind::kPrimary, p.stage3.state.phi);
      cell.train_seconds["ancillary-half"] = p.ancillary_report.wall_seconds;
      cell.train_seconds["conv-stage2"] = p.stage2.report.wall_seconds;
      cell.train_seconds["conv"] = p.stage3.report.wall_seconds;
      const ParamSet random_lambda = init_selfcorr_head(arch, derive_seed(cfg.seed, "lambda"));
      cell.metrics["qconv-loss-random"] =
          heldout_qconv_loss(arch, p.stage2.state.phi, p.theta, random_lambda, test_ptrs);
      cell.metrics["qconv-loss-pretrained"] =
          heldout_qconv_loss(arch, p.stage2.state.phi, p.theta, *p.stage2.state.lambda, test_ptrs);
      save_model(cell_dir, "ancillary-half", p.theta, arch, &p.ancillary_report);
      save_model(cell_dir, "conv-stage2", p.stage2.state.phi, arch, &p.stage2.report);
      save_model(cell_dir, "conv-stage2-head", *p.stage2.state.lambda, arch, nullptr);
      save_model(cell_dir, "conv", p.stage3.state.phi, arch, &p.stage3.report);
      save_model(cell_dir, "conv-head", *p.stage3.state.lambda, arch, nullptr);
    } else {
      PrimaryResult r = train_primary(arch, cfg, split.fully, split.weak, theta);
      cell.metrics[name] = miou(ModelKind::kPrimary, r.state.phi);
      cell.train_seconds[name] = r.report.wall_seconds;
      save_model(cell_dir, name, r.state.phi, arch, &r.report);
    }
  }
  if (spec.noisy_rate &&
      std::find(spec.noisy_f_sizes.begin(), spec.noisy_f_sizes.end(), f_size) != spec.noisy_f_sizes.end()) {
    // Weak-set images regain their ground truth, corrupted.
    std::map<std::string, const Sample*> by_id;
    for (const Sample& s : pool) by_id[s.id] = &s;
    std::vector<Sample> noisy = split.fully;
    for (const Sample& w : split.weak) {
      Sample s = w;
      s.mask = inject_label_noise(*by_id.at(w.id)->mask, *spec.noisy_rate, derive_seed(seed, "noise:" + w.id));
      noisy.push_back(std::move(s));
    }
    TrainConfig cfg = train;
    cfg.strategy = Strategy::kNone;
    PrimaryResult r = train_primary(arch, cfg, noisy, {}, {});
    cell.metrics["noisy-control"] = miou(ModelKind::kPrimary, r.state.phi);
    cell.train_seconds["noisy-control"] = r.report.wall_seconds;
    save_model(cell_dir, "noisy-control", r.state.phi, arch, &r.report);
  }
  return cell;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

}  // namespace

ExperimentSpec parse_experiment_spec(const nlohmann::json& j) {
  ExperimentSpec spec;
  try {
    for (const auto& [key, _] : j.items()) {
      static const char* kKnown[] = {"seeds", "num_images", "num_test", "f_sizes", "strategies",
                                     "f_only", "noisy_control", "save_checkpoints", "config"};
      if (std::find_if(std::begin(kKnown), std::end(kKnown), [&](const char* k) { return key == k; }) ==
          std::end(kKnown)) {
        throw Error(ErrorKind::kFormat, "unknown key '" + key + "' in experiment spec");
      }
    }
    if (j.contains("seeds")) spec.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("num_images")) spec.num_images = j.at("num_images").get<std::size_t>();
    if (j.contains("num_test")) spec.num_test = j.at("num_test").get<std::size_t>();
    if (j.contains("f_sizes")) spec.f_sizes = j.at("f_sizes").get<std::vector<std::size_t>>();
    if (j.contains("strategies")) spec.strategies = j.at("strategies").get<std::vector<std::string>>();
    if (j.contains("f_only")) spec.f_only = j.at("f_only").get<bool>();
    if (j.contains("save_checkpoints")) spec.save_checkpoints = j.at("save_checkpoints").get<bool>();
    if (j.contains("noisy_control")) {
      const auto& n = j.at("noisy_control");
      spec.noisy_rate = n.value("rate", 0.5);
      spec.noisy_f_sizes = n.contains("f_sizes") ? n.at("f_sizes").get<std::vector<std::size_t>>() : spec.f_sizes;
    }
    spec.config = j.contains("config") ? parse_run_config(j.at("config")) : default_run_config();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("bad experiment spec: ") + e.what());
  }
  for (const std::string& s : spec.strategies) parse_strategy(s);
  if (spec.seeds.empty()) throw_invalid("experiment spec: no seeds");
  for (std::size_t f : spec.f_sizes) {
    if (f > spec.num_images) throw_invalid("experiment spec: F size exceeds num_images");
  }
  return spec;
}

ExperimentSpec load_experiment_spec(const std::filesystem::path& path) {
  return parse_experiment_spec(read_json_file(path));
}

std::vector<double> ExperimentResult::values(const std::string& row, std::size_t f) const {
  std::vector<double> out;
  for (const CellResult& c : cells) {
    if (c.f_size != f) continue;
    auto it = c.metrics.find(row);
    if (it != c.metrics.end()) out.push_back(it->second);
  }
  return out;
}

double ExperimentResult::median(const std::string& row, std::size_t f) const {
  std::vector<double> v = values(row, f);
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

ExperimentResult run_experiment(const ExperimentSpec& spec,
                                const std::optional<std::filesystem::path>& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentResult result;
  for (std::uint64_t seed : spec.seeds) {
    const auto pool = generate_dataset(spec.config.scene, spec.num_images, derive_seed(seed, "train-data"), "tr");
    const auto test = generate_dataset(spec.config.scene, spec.num_test, derive_seed(seed, "test-data"), "te");
    for (std::size_t f : spec.f_sizes) {
      std::optional<std::filesystem::path> cell_dir;
      if (out_dir && spec.save_checkpoints) cell_dir = *out_dir / "cells" / cell_name(seed, f);
      try {
        result.cells.push_back(run_cell(spec, seed, f, pool, test, cell_dir));
      } catch (const std::exception& e) {
        CellResult failed;
        failed.seed = seed;
        failed.f_size = f;
        failed.error = e.what();
        result.cells.push_back(std::move(failed));
      }
    }
  }
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    std::ofstream(*out_dir / "report.json") << experiment_report(spec, result).dump(2) << '\n';
    std::ofstream(*out_dir / "table.md") << experiment_table(spec, result);
    nlohmann::ordered_json timing{{"wall_seconds", result.wall_seconds}, {"cells", nlohmann::json::array()}};
    for (const CellResult& c : result.cells) {
      timing["cells"].push_back({{"seed", c.seed}, {"f_size", c.f_size}, {"train_seconds", c.train_seconds}});
    }
    std::ofstream(*out_dir / "timing.json") << timing.dump() << '\n';
  }
  return result;
}

nlohmann::ordered_json experiment_report(const ExperimentSpec& spec, const ExperimentResult& result) {
  nlohmann::ordered_json report;
  report["config"] = to_json(spec.config);
  report["seeds"] = spec.seeds;
  report["f_sizes"] = spec.f_sizes;
  report["num_images"] = spec.num_images;
  report["num_test"] = spec.num_test;
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  for (const CellResult& c : result.cells) {
    nlohmann::ordered_json cj;
    cj["seed"] = c.seed;
    cj["f_size"] = c.f_size;
    cj["metrics"] = c.metrics;
    if (c.error) cj["error"] = *c.error;
    cells.push_back(std::move(cj));
  }
  report["cells"] = std::move(cells);
  nlohmann::ordered_json medians;
  std::vector<std::string> rows;
  for (const CellResult& c : result.cells)
    for (const auto& [row, _] : c.metrics)
      if (std::find(rows.begin(), rows.end(), row) == rows.end()) rows.push_back(row);
  std::sort(rows.begin(), rows.end());
  for (const std::string& row : rows) {
    nlohmann::ordered_json by_f;
    for (std::size_t f : spec.f_sizes) {
      const double m = result.median(row, f);
      if (!std::isnan(m)) by_f[std::to_string(f)] = m;
    }
    medians[row] = by_f;
  }
  report["medians"] = std::move(medians);
  return report;
}

std::string experiment_table(const ExperimentSpec& spec, const ExperimentResult& result) {
  std::vector<std::string> rows{"ancillary"};
  if (spec.f_only) rows.push_back("f-only");
  for (const std::string& s : spec.strategies) rows.push_back(s);
  if (spec.noisy_rate) rows.push_back("noisy-control");
  std::ostringstream os;
  os << "| model (median mIOU over " << spec.seeds.size() << " seeds) |";
  for (std::size_t f : spec.f_sizes) os << " F=" << f << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < spec.f_sizes.size(); ++i) os << "---|";
  os << '\n';
  for (const std::string& row : rows) {
    os << "| " << row << " |";
    for (std::size_t f : spec.f_sizes) os << ' ' << format_number(result.median(row, f)) << " |";
    os << '\n';
  }
  return os.str();
}

}  // namespace boxseg
