#include "boxseg/evaluate.hpp"

#include "boxseg/container.hpp"
#include "boxseg/distributions.hpp"
#include "boxseg/error.hpp"
#include "boxseg/ops.hpp"
#include "boxseg/selfcorrect.hpp"
#include "boxseg/training.hpp"

namespace boxseg {
namespace {

constexpr std::size_t kChunk = 16;

template <typename F>
void for_chunks(const std::vector<const Sample*>& samples, F f) {
  for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
    const std::size_t end = std::min(samples.size(), begin + kChunk);
    f(std::vector<const Sample*>(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                 samples.begin() + static_cast<std::ptrdiff_t>(end)));
  }
}

}  // namespace

const char* to_string(ModelKind kind) {
  return kind == ModelKind::kPrimary ? "primary" : "ancillary";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "primary") return ModelKind::kPrimary;
  if (name == "ancillary") return ModelKind::kAncillary;
  throw_invalid("unknown model kind '" + name + "' (expected primary|ancillary)");
}

std::vector<LabelMap> predict_labels(ModelKind kind, const ArchConfig& arch, const ParamSet& params,
                                     const std::vector<const Sample*>& samples,
                                     bool clamp_outside_boxes) {
  std::vector<LabelMap> out;
  out.reserve(samples.size());
  for_chunks(samples, [&](const std::vector<const Sample*>& chunk) {
    const Tensor images = stack_images(chunk);
    const Tensor logits = kind == ModelKind::kPrimary
                              ? predict_primary(arch, params, images)
                              : predict_ancillary(arch, params, images,
                                                  stack_box_masks(chunk, arch.num_classes));
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      LabelMap pred = argmax_labels(batch_item(logits, i));
      if (clamp_outside_boxes) {
        const Tensor boxes = boxes_to_mask(chunk[i]->boxes, arch.num_classes, arch.height, arch.width).tensor();
        for (std::size_t p = 0; p < pred.size(); ++p)
          if (boxes[p] == 1.0) pred.labels[p] = 0;
      }
      out.push_back(std::move(pred));
    }
  });
  return out;
}

IouReport evaluate(ModelKind kind, const ArchConfig& arch, const ParamSet& params,
                   const std::vector<const Sample*>& samples, const EvalOptions& options) {
  for (const Sample* s : samples) {
    if (!s->mask) throw_invalid("evaluate: sample " + s->id + " has no ground-truth mask");
  }
  const auto preds = predict_labels(kind, arch, params, samples, options.clamp_outside_boxes);
  IouAccumulator acc(arch.channels());
  for (std::size_t i = 0; i < samples.size(); ++i) acc.add(preds[i], *samples[i]->mask);
  if (options.dump_masks) {
    std::filesystem::create_directories(*options.dump_masks);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      container::write_u8(*options.dump_masks / (samples[i]->id + ".pred.stns"),
                          {preds[i].height, preds[i].width}, preds[i].labels);
    }
  }
  return acc.report();
}

double heldout_qconv_loss(const ArchConfig& arch, const ParamSet& phi, const ParamSet& theta,
                          const ParamSet& lambda, const std::vector<const Sample*>& samples) {
  double total = 0.0;
  double pixels = 0.0;
  for_chunks(samples, [&](const std::vector<const Sample*>& chunk) {
    const Tensor images = stack_images(chunk);
    Graph g;
    Var l = g.constant(predict_primary(arch, phi, images));
    Var anc = g.constant(predict_ancillary(arch, theta, images, stack_box_masks(chunk, arch.num_classes)));
    Var loss = loss_qconv(arch, bind(g, lambda, false), l, anc, concat_labels(chunk), 1.0);
    total += loss.value()[0];
    pixels += static_cast<double>(chunk.size() * arch.height * arch.width);
  });
  return pixels > 0.0 ? total / pixels : 0.0;
}

}  // namespace boxseg
