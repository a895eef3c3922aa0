#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "boxseg/label_map.hpp"
#include "boxseg/models.hpp"
#include "boxseg/tensor.hpp"

namespace boxseg {

struct Sample {
  std::string id;
  Tensor image;                  // 3 x H x W, values in [0,1]
  std::optional<LabelMap> mask;  // absent for weak-set samples
  std::vector<BoxAnnotation> boxes;

  bool identical(const Sample& other) const;
};

struct DatasetSplit {
  std::vector<Sample> fully;
  std::vector<Sample> weak;
  std::uint64_t seed = 0;
};

enum class BackgroundMode { kFlat, kGradient, kNoise };

// Classes 1..num_classes are drawn as disk, rectangle, triangle, ring (in that
// order; at most four).
struct SceneConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t num_classes = 4;
  std::size_t min_shapes = 1;
  std::size_t max_shapes = 3;
  std::size_t min_size = 10;  // shape extent in pixels
  std::size_t max_size = 24;
  double color_jitter = 0.22;  // per-shape color offset amplitude
  double texture_noise = 0.08;  // per-pixel gaussian sigma
  bool allow_overlap = true;
  BackgroundMode background = BackgroundMode::kNoise;

  void validate() const;
  friend bool operator==(const SceneConfig&, const SceneConfig&) = default;
};

const char* to_string(BackgroundMode mode);
BackgroundMode parse_background(const std::string& name);

// Shapes are painted back to front; the mask records the topmost shape and
// every visible shape gets a tight box around its visible pixels.
Sample generate_scene(const SceneConfig& cfg, std::uint64_t seed);
std::vector<Sample> generate_dataset(const SceneConfig& cfg, std::size_t count, std::uint64_t seed,
                                     const std::string& id_prefix = "s");

// Seeded shuffle; the first f_size samples keep their masks.
DatasetSplit split_dataset(std::vector<Sample> samples, std::size_t f_size, std::uint64_t seed);
// Seeded halves whose sizes differ by at most one (the first gets the extra).
std::pair<std::vector<Sample>, std::vector<Sample>> split_half(std::vector<Sample> fully,
                                                               std::uint64_t seed);

// Each 4-connected object is, with probability `rate`, dilated or eroded by
// 1-3 pixels. Eroded pixels become background.
LabelMap inject_label_noise(const LabelMap& mask, double rate, std::uint64_t seed);

// On-disk dataset: manifest.json plus one container per image (f32) and mask
// (u8).
struct StoredDataset {
  std::size_t num_classes = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Sample> unassigned;
  DatasetSplit split;

  std::vector<const Sample*> all() const;
};

void write_dataset(const std::filesystem::path& dir, const StoredDataset& data);
StoredDataset read_dataset(const std::filesystem::path& dir);

}  // namespace boxseg
