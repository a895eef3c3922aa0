#include "boxseg/metrics.hpp"

#include "boxseg/error.hpp"

namespace boxseg {

LabelMap::LabelMap(std::size_t h, std::size_t w, std::vector<std::uint8_t> values)
    : height(h), width(w), labels(std::move(values)) {
  if (labels.size() != h * w) throw_shape("LabelMap", "labels", h * w, labels.size());
}

IouAccumulator::IouAccumulator(std::size_t num_classes)
    : num_classes_(num_classes), intersection_(num_classes, 0), union_(num_classes, 0) {
  if (num_classes == 0) throw_invalid("IouAccumulator: num_classes must be >= 1");
}

void IouAccumulator::add(const LabelMap& pred, const LabelMap& gt) {
  if (pred.height != gt.height) throw_shape("miou", "height", gt.height, pred.height);
  if (pred.width != gt.width) throw_shape("miou", "width", gt.width, pred.width);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const std::size_t p = pred.labels[i];
    const std::size_t g = gt.labels[i];
    if (p >= num_classes_) throw_shape("miou", "class", num_classes_, p);
    if (g >= num_classes_) throw_shape("miou", "class", num_classes_, g);
    if (p == g) {
      ++intersection_[p];
      ++union_[p];
    } else {
      ++union_[p];
      ++union_[g];
    }
  }
  ++images_;
}

void IouAccumulator::merge(const IouAccumulator& other) {
  if (other.num_classes_ != num_classes_) throw_shape("miou", "classes", num_classes_, other.num_classes_);
  for (std::size_t c = 0; c < num_classes_; ++c) {
    intersection_[c] += other.intersection_[c];
    union_[c] += other.union_[c];
  }
  images_ += other.images_;
}

IouReport IouAccumulator::report() const {
  IouReport r;
  r.intersection = intersection_;
  r.union_count = union_;
  r.iou.assign(num_classes_, 0.0);
  r.included.assign(num_classes_, false);
  r.images = images_;
  // Extended precision so hand examples like 7/12 round to the nearest double.
  long double total = 0.0L;
  std::size_t count = 0;
  for (std::size_t c = 0; c < num_classes_; ++c) {
    if (union_[c] == 0) continue;
    r.included[c] = true;
    r.iou[c] = static_cast<double>(intersection_[c]) / static_cast<double>(union_[c]);
    total += static_cast<long double>(intersection_[c]) / static_cast<long double>(union_[c]);
    ++count;
  }
  r.miou = count ? static_cast<double>(total / static_cast<long double>(count)) : 0.0;
  return r;
}

IouReport miou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
               std::size_t num_classes) {
  if (preds.size() != gts.size()) throw_shape("miou", "images", gts.size(), preds.size());
  IouAccumulator acc(num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) acc.add(preds[i], gts[i]);
  return acc.report();
}

}  // namespace boxseg
