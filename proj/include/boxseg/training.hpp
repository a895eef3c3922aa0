#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "boxseg/data.hpp"
#include "boxseg/models.hpp"
#include "boxseg/selfcorrect.hpp"

namespace boxseg {

struct TrainConfig {
  double learning_rate = 0.007;
  double momentum = 0.9;
  double lr_power = 0.9;  // polynomial decay
  std::int64_t steps = 3000;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  Strategy strategy = Strategy::kNone;
  double alpha_start = 30.0;
  double alpha_end = 0.5;
  std::optional<double> fixed_alpha;  // replaces the schedule when set
  double em_bias = 5.0;
  bool clamp_outside_boxes = false;
  std::int64_t pretrain_steps = 1000;  // conv protocol stage 2
  // Self-correction head; unset means learning_rate. Same decay schedule.
  std::optional<double> head_learning_rate;

  void validate() const;
  AlphaSchedule alpha_schedule() const { return {alpha_start, alpha_end, steps}; }
  double learning_rate_at(std::int64_t step) const { return learning_rate_at(step, steps); }
  // Polynomial decay over a phase of `total` steps.
  double learning_rate_at(std::int64_t step, std::int64_t total) const;
  double head_learning_rate_at(std::int64_t step, std::int64_t total) const;
};

struct StepRecord {
  std::int64_t step = 0;
  double loss_full = 0.0;   // F term
  double loss_weak = 0.0;   // W term
  double loss_qconv = 0.0;  // self-correction head term
  double alpha = 0.0;
  double learning_rate = 0.0;

  double total() const { return loss_full + loss_weak + loss_qconv; }
};

struct TrainReport {
  std::string stage;
  std::vector<StepRecord> steps;
  double wall_seconds = 0.0;

  // One JSON object per line; the wall-clock time is not included so that
  // reports of identical runs are byte-identical.
  std::string to_jsonl() const;
  void write_jsonl(const std::filesystem::path& path) const;
};

// Trains theta on fully supervised samples with box masks derived from their
// boxes. Every sample must carry a mask.
ParamSet train_ancillary(const ArchConfig& arch, const std::vector<Sample>& fully,
                         const TrainConfig& cfg, TrainReport* report = nullptr);

struct PrimaryState {
  ParamSet phi;
  std::optional<ParamSet> lambda;
};

struct PrimaryResult {
  PrimaryState state;
  TrainReport report;
};

// Weak-set target override used by tests: receives the batch's detached
// primary logits, cached ancillary logits, box masks and the step.
using WeakTargetFn = std::function<Tensor(const Tensor& logits, const Tensor& ancillary_logits,
                                          const Tensor& box_masks, std::int64_t step)>;

// Main training. Each step draws a batch from F and W in proportion to their
// sizes. F samples contribute the supervised term, W samples the soft
// cross-entropy against the strategy's target, and under kConv F samples also
// train the head. theta is never updated. kConv requires `init` with a
// pretrained lambda (see pretrain_selfcorr).
PrimaryResult train_primary(const ArchConfig& arch, const TrainConfig& cfg,
                            const std::vector<Sample>& fully, const std::vector<Sample>& weak,
                            const ParamSet& theta, const PrimaryState* init = nullptr,
                            const WeakTargetFn& weak_target = nullptr);

// Conv protocol stage 2: phi and lambda trained on F with the supervised and
// head terms only.
PrimaryResult pretrain_selfcorr(const ArchConfig& arch, const TrainConfig& cfg,
                                const std::vector<Sample>& fully, const ParamSet& theta);

struct ProtocolResult {
  ParamSet theta;
  TrainReport ancillary_report;
  PrimaryResult stage2;
  PrimaryResult stage3;
};

// Stage 1 trains theta on one half of F; stage 2 runs pretrain_selfcorr on
// all of F; stage 3 fine-tunes with all three terms on F and W.
ProtocolResult run_protocol_conv(const ArchConfig& arch, const TrainConfig& cfg,
                                 const TrainConfig& ancillary_cfg, const std::vector<Sample>& fully,
                                 const std::vector<Sample>& weak);

// Adds `bias` to the class-c logit inside class-c boxes and to the background
// logit outside every box, then applies a per-pixel softmax.
LabelDistribution em_fixed_target(const PixelLogits& logits, const BoxMaskTensor& box_mask,
                                  double bias);
Tensor em_fixed_probs(const Tensor& logits, const Tensor& box_masks, double bias);

// Stacked inputs of a list of samples.
Tensor stack_images(const std::vector<const Sample*>& samples);
Tensor stack_box_masks(const std::vector<const Sample*>& samples, std::size_t num_classes);
std::vector<std::uint8_t> concat_labels(const std::vector<const Sample*>& samples);

// Ancillary logits for each sample, computed in batches.
std::vector<Tensor> ancillary_logits(const ArchConfig& arch, const ParamSet& theta,
                                     const std::vector<const Sample*>& samples);

}  // namespace boxseg
