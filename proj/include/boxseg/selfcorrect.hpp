#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "boxseg/distributions.hpp"
#include "boxseg/models.hpp"

namespace boxseg {

// kEmFixed is the box-biased EM baseline; it is not a self-correction
// strategy but shares the weak-set training path.
enum class Strategy { kNone, kLinear, kConv, kEmFixed };

const char* to_string(Strategy s);
Strategy parse_strategy(const std::string& name);

// Geometric decay from alpha_start at step 0 to alpha_end at total_steps.
struct AlphaSchedule {
  double alpha_start = 30.0;
  double alpha_end = 0.5;
  std::int64_t total_steps = 1;

  void validate() const;
};

// Steps outside [0, total_steps] are clamped to the endpoints.
double alpha_at(const AlphaSchedule& schedule, std::int64_t step);

// Target distribution for weak-set pixels. The result is a plain value: no
// gradient can reach the models that produced its inputs.
//   kNone   -> softmax(l_anc)
//   kLinear -> softmax((l + alpha l_anc) / (alpha + 1))
//   kConv   -> softmax(head(l, l_anc))
LabelDistribution target_distribution(Strategy strategy, const PixelLogits& logits,
                                      const PixelLogits& ancillary_logits,
                                      const ParamSet* lambda, const ArchConfig& arch,
                                      double alpha);

// Pixels covered by no box get a one-hot background target.
void clamp_outside_boxes(Tensor& probs, const Tensor& box_masks);

// Negative log-likelihood of ground truth, divided by `normalizer` (default:
// pixel count of the batch).
Var loss_fully_supervised(Var logits, std::span<const std::uint8_t> labels,
                          std::optional<double> normalizer = std::nullopt);

// Soft cross-entropy against a constant target distribution.
Var loss_weak(Var logits, const Tensor& target, std::optional<double> normalizer = std::nullopt);

// Trains the self-correction head: the primary and ancillary logits are
// detached, so only lambda receives gradient.
Var loss_qconv(const ArchConfig& arch, const BoundParams& lambda, Var logits, Var ancillary_logits,
               std::span<const std::uint8_t> labels,
               std::optional<double> normalizer = std::nullopt);

}  // namespace boxseg
