#pragma once

#include <cstddef>
#include <filesystem>
#include <json.hpp>

#include "boxseg/data.hpp"
#include "boxseg/models.hpp"
#include "boxseg/training.hpp"

namespace boxseg {

// Configuration file (JSON). Every section and key is optional; missing keys
// keep their defaults.
//
//   {
//     "scene":     { "height", "width", "num_classes", "min_shapes", "max_shapes",
//                    "min_size", "max_size", "color_jitter", "texture_noise",
//                    "allow_overlap", "background": "flat|gradient|noise" },
//     "dataset":   { "num_samples" },
//     "arch":      { "encoder_widths": [..], "extra_convs", "fine_tap", "coarse_tap",
//                    "decoder_width", "head_width" },
//     "train":     { "learning_rate", "momentum", "lr_power", "steps", "batch_size",
//                    "seed", "strategy", "alpha_start", "alpha_end", "em_bias",
//                    "clamp_outside_boxes", "pretrain_steps" },
//     "ancillary": { same keys as "train" }
//   }
//
// The arch's num_classes/height/width always follow the scene section.
struct RunConfig {
  SceneConfig scene;
  std::size_t num_samples = 1000;
  ArchConfig arch;
  TrainConfig train;
  TrainConfig ancillary;

  void sync_arch();
};

RunConfig default_run_config();
RunConfig parse_run_config(const nlohmann::json& j, RunConfig base = default_run_config());
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::ordered_json to_json(const SceneConfig& cfg);
nlohmann::ordered_json to_json(const ArchConfig& cfg);
nlohmann::ordered_json to_json(const TrainConfig& cfg);
nlohmann::ordered_json to_json(const RunConfig& cfg);

SceneConfig parse_scene(const nlohmann::json& j, SceneConfig base = {});
ArchConfig parse_arch(const nlohmann::json& j, ArchConfig base = {});
TrainConfig parse_train(const nlohmann::json& j, TrainConfig base = {});

nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace boxseg
