#include "boxseg/selfcorrect.hpp"

#include <algorithm>
#include <cmath>

#include "boxseg/error.hpp"
#include "boxseg/kernels.hpp"
#include "boxseg/ops.hpp"

namespace boxseg {
namespace {

double pixel_count(Var logits) {
  const Nchw s = as_nchw(logits.dims(), "loss");
  return static_cast<double>(s.n * s.plane());
}

}  // namespace

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::kNone: return "none";
    case Strategy::kLinear: return "linear";
    case Strategy::kConv: return "conv";
    case Strategy::kEmFixed: return "em-fixed";
  }
  return "unknown";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "none") return Strategy::kNone;
  if (name == "linear") return Strategy::kLinear;
  if (name == "conv") return Strategy::kConv;
  if (name == "em-fixed") return Strategy::kEmFixed;
  throw_invalid("unknown strategy '" + name + "' (expected none|linear|conv|em-fixed)");
}

void AlphaSchedule::validate() const {
  if (!(alpha_end > 0.0)) throw_invalid("AlphaSchedule: alpha_end must be > 0");
  if (!(alpha_start >= alpha_end)) throw_invalid("AlphaSchedule: alpha_start must be >= alpha_end");
  if (total_steps < 1) throw_invalid("AlphaSchedule: total_steps must be >= 1");
}

double alpha_at(const AlphaSchedule& schedule, std::int64_t step) {
  schedule.validate();
  const std::int64_t clamped = std::clamp<std::int64_t>(step, 0, schedule.total_steps);
  if (clamped == 0) return schedule.alpha_start;
  if (clamped == schedule.total_steps) return schedule.alpha_end;
  const double t = static_cast<double>(clamped) / static_cast<double>(schedule.total_steps);
  return schedule.alpha_start * std::pow(schedule.alpha_end / schedule.alpha_start, t);
}

LabelDistribution target_distribution(Strategy strategy, const PixelLogits& logits,
                                      const PixelLogits& ancillary_logits,
                                      const ParamSet* lambda, const ArchConfig& arch,
                                      double alpha) {
  if (logits.scores().dims() != ancillary_logits.scores().dims()) {
    throw Error(ErrorKind::kShape,
                "target_distribution: logits " + shape_string(logits.scores().dims()) +
                    " vs ancillary " + shape_string(ancillary_logits.scores().dims()),
                "dims");
  }
  switch (strategy) {
    case Strategy::kNone:
      return make_factorial(ancillary_logits);
    case Strategy::kLinear:
      return make_factorial(fuse_linear(logits, ancillary_logits, alpha));
    case Strategy::kConv:
      if (lambda == nullptr || lambda->empty()) {
        throw Error(ErrorKind::kState, "target_distribution: conv strategy requires head parameters");
      }
      return make_factorial(PixelLogits(
          predict_selfcorr_head(arch, *lambda, logits.scores(), ancillary_logits.scores())));
    case Strategy::kEmFixed:
      break;
  }
  throw_invalid("target_distribution: em-fixed targets need box masks; use em_fixed_target");
}

void clamp_outside_boxes(Tensor& probs, const Tensor& box_masks) {
  if (probs.dims() != box_masks.dims()) {
    throw Error(ErrorKind::kShape,
                "clamp_outside_boxes: " + shape_string(probs.dims()) + " vs " +
                    shape_string(box_masks.dims()),
                "dims");
  }
  const Nchw s = as_nchw(probs.dims(), "clamp_outside_boxes");
  for (std::size_t n = 0; n < s.n; ++n) {
    const std::size_t base = n * s.image();
    for (std::size_t i = 0; i < s.plane(); ++i) {
      if (box_masks[base + i] != 1.0) continue;
      for (std::size_t c = 0; c < s.c; ++c) probs[base + c * s.plane() + i] = c == 0 ? 1.0 : 0.0;
    }
  }
}

Var loss_fully_supervised(Var logits, std::span<const std::uint8_t> labels,
                          std::optional<double> normalizer) {
  return ops::neg_log_likelihood(logits, labels, normalizer.value_or(pixel_count(logits)));
}

Var loss_weak(Var logits, const Tensor& target, std::optional<double> normalizer) {
  return ops::soft_cross_entropy(target, logits, normalizer.value_or(pixel_count(logits)));
}

Var loss_qconv(const ArchConfig& arch, const BoundParams& lambda, Var logits, Var ancillary_logits,
               std::span<const std::uint8_t> labels, std::optional<double> normalizer) {
  Var head = selfcorr_head_forward(arch, lambda, ops::detach(logits), ops::detach(ancillary_logits));
  return ops::neg_log_likelihood(head, labels, normalizer.value_or(pixel_count(logits)));
}

}  // namespace boxseg
