#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "boxseg/config.hpp"

namespace boxseg {

// Grid of (strategy x F size) cells repeated over seeds.
//
//   {
//     "seeds": [0, 1, 2],
//     "num_images": 2000,          // training pool, split into F and W
//     "num_test": 200,             // held-out images with masks
//     "f_sizes": [50, 200],
//     "strategies": ["none", "linear", "conv"],   // "em-fixed" also accepted
//     "f_only": true,              // primary trained on F alone
//     "noisy_control": { "rate": 0.5, "f_sizes": [200] },   // optional
//     "save_checkpoints": true,
//     "config": { ...run config: scene, arch, train, ancillary... }
//   }
struct ExperimentSpec {
  std::vector<std::uint64_t> seeds{0};
  std::size_t num_images = 2000;
  std::size_t num_test = 200;
  std::vector<std::size_t> f_sizes{200};
  std::vector<std::string> strategies{"none", "linear", "conv"};
  bool f_only = true;
  std::optional<double> noisy_rate;
  std::vector<std::size_t> noisy_f_sizes;
  bool save_checkpoints = true;
  RunConfig config;
};

ExperimentSpec parse_experiment_spec(const nlohmann::json& j);
ExperimentSpec load_experiment_spec(const std::filesystem::path& path);

// Metrics of one (seed, F) cell, keyed by row name: "ancillary",
// "ancillary-half", "f-only", each strategy, "conv-stage2", "noisy-control",
// plus "qconv-loss-random" / "qconv-loss-pretrained" for the conv protocol.
struct CellResult {
  std::uint64_t seed = 0;
  std::size_t f_size = 0;
  std::map<std::string, double> metrics;
  std::map<std::string, double> train_seconds;  // timing.json only
  std::optional<std::string> error;
};

struct ExperimentResult {
  std::vector<CellResult> cells;
  double wall_seconds = 0.0;

  // Median over seeds of metric `row` at F size `f`; NaN when absent.
  double median(const std::string& row, std::size_t f) const;
  std::vector<double> values(const std::string& row, std::size_t f) const;
};

ExperimentResult run_experiment(const ExperimentSpec& spec,
                                const std::optional<std::filesystem::path>& out_dir);

// Report bundle pieces, deterministic given the experiment spec.
nlohmann::ordered_json experiment_report(const ExperimentSpec& spec, const ExperimentResult& result);
// Rows: ancillary first, then f-only and strategies; one column per F size.
std::string experiment_table(const ExperimentSpec& spec, const ExperimentResult& result);

}  // namespace boxseg
