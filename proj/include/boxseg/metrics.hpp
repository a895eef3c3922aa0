#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "boxseg/label_map.hpp"

namespace boxseg {

struct IouReport {
  std::vector<std::uint64_t> intersection;
  std::vector<std::uint64_t> union_count;
  std::vector<double> iou;  // 0 for classes with zero union (excluded from the mean)
  std::vector<bool> included;
  double miou = 0.0;
  std::size_t images = 0;
};

// Dataset-level confusion accumulation: counts are summed over images and
// only then divided.
class IouAccumulator {
 public:
  explicit IouAccumulator(std::size_t num_classes);

  void add(const LabelMap& pred, const LabelMap& gt);
  void merge(const IouAccumulator& other);
  IouReport report() const;

 private:
  std::size_t num_classes_;
  std::vector<std::uint64_t> intersection_;
  std::vector<std::uint64_t> union_;
  std::size_t images_ = 0;
};

// num_classes counts every label value, background included.
IouReport miou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
               std::size_t num_classes);

}  // namespace boxseg
