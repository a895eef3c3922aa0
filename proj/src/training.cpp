#include "boxseg/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "boxseg/error.hpp"
#include "boxseg/kernels.hpp"
#include "boxseg/ops.hpp"
#include "boxseg/random.hpp"

namespace boxseg {
namespace {

constexpr std::size_t kInferenceChunk = 16;

// Walks seeded permutations of [0, size), reshuffling at every epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t size, std::uint64_t seed) : rng_(seed), order_(size) {
    for (std::size_t i = 0; i < size; ++i) order_[i] = i;
    rng_.shuffle(order_);
  }

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (cursor_ == order_.size()) {
        rng_.shuffle(order_);
        cursor_ = 0;
      }
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

void sgd_step(ParamSet& params, ParamSet& velocity, const ParamSet& grads, double lr,
              double momentum) {
  for (auto& [name, p] : params) {
    if (!grads.contains(name)) continue;
    const Tensor& g = grads.at(name);
    Tensor& v = velocity.at(name);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      v[i] = momentum * v[i] + g[i];
      p[i] -= lr * v[i];
    }
  }
}

void check_finite(const StepRecord& r, const std::string& stage) {
  if (!std::isfinite(r.total())) {
    throw Error(ErrorKind::kState, stage + ": non-finite loss at step " + std::to_string(r.step));
  }
}

std::vector<const Sample*> pointers(const std::vector<Sample>& samples) {
  std::vector<const Sample*> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(&s);
  return out;
}

void require_masks(const std::vector<Sample>& fully, const char* op) {
  for (const Sample& s : fully) {
    if (!s.mask) throw_invalid(std::string(op) + ": fully supervised sample " + s.id + " lacks a mask");
  }
}

Tensor stack_tensors(const std::vector<const Tensor*>& items) { return stack(items); }

std::vector<const Sample*> select(const std::vector<const Sample*>& all,
                                  const std::vector<std::size_t>& idx) {
  std::vector<const Sample*> out;
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

Tensor gather(const std::vector<Tensor>& cache, const std::vector<std::size_t>& idx) {
  std::vector<const Tensor*> items;
  for (std::size_t i : idx) items.push_back(&cache[i]);
  return stack_tensors(items);
}

enum class Phase { kMain, kPretrain };

struct LoopInputs {
  const ArchConfig& arch;
  const TrainConfig& cfg;
  std::vector<const Sample*> fully;
  std::vector<const Sample*> weak;
  std::vector<Tensor> anc_fully;  // filled when the head is trained
  std::vector<Tensor> anc_weak;
  std::vector<Tensor> box_weak;
};

PrimaryResult primary_loop(const LoopInputs& in, Phase phase, PrimaryState state,
                           const WeakTargetFn& weak_target) {
  const TrainConfig& cfg = in.cfg;
  const ArchConfig& arch = in.arch;
  const bool with_head = state.lambda.has_value();
  const std::int64_t steps = phase == Phase::kPretrain ? cfg.pretrain_steps : cfg.steps;
  const std::size_t pool = in.fully.size() + (phase == Phase::kMain ? in.weak.size() : 0);
  if (pool == 0) throw_invalid("train_primary: no training samples");

  PrimaryResult result;
  result.report.stage = phase == Phase::kPretrain ? "conv-pretrain" : std::string("primary-") + to_string(cfg.strategy);
  const auto start = std::chrono::steady_clock::now();
  ParamSet vel_phi = state.phi.zeros_like();
  std::optional<ParamSet> vel_lambda;
  if (with_head) vel_lambda = state.lambda->zeros_like();
  BatchSampler sampler(pool, derive_seed(cfg.seed, phase == Phase::kPretrain ? "batches:conv-pretrain" : "batches:primary"));
  const AlphaSchedule schedule{cfg.alpha_start, cfg.alpha_end, steps};
  const double pixels = static_cast<double>(cfg.batch_size * arch.height * arch.width);

  for (std::int64_t step = 0; step < steps; ++step) {
    std::vector<std::size_t> f_idx, w_idx;
    for (std::size_t i : sampler.next(cfg.batch_size)) {
      if (i < in.fully.size()) f_idx.push_back(i);
      else w_idx.push_back(i - in.fully.size());
    }
    StepRecord rec;
    rec.step = step;
    rec.learning_rate = cfg.learning_rate_at(step, steps);
    if (cfg.strategy == Strategy::kLinear && phase == Phase::kMain) {
      rec.alpha = cfg.fixed_alpha ? *cfg.fixed_alpha : alpha_at(schedule, step);
    }

    Graph g;
    const BoundParams phi = bind(g, state.phi, true);
    std::optional<BoundParams> lambda;
    if (with_head) lambda = bind(g, *state.lambda, true);
    std::vector<Var> terms;

    if (!f_idx.empty()) {
      const auto batch = select(in.fully, f_idx);
      const auto labels = concat_labels(batch);
      Var logits = primary_forward(arch, phi, g.constant(stack_images(batch)));
      Var full = loss_fully_supervised(logits, labels, pixels);
      rec.loss_full = full.value()[0];
      terms.push_back(full);
      if (with_head) {
        Var anc = g.constant(gather(in.anc_fully, f_idx));
        Var q = loss_qconv(arch, *lambda, logits, anc, labels, pixels);
        rec.loss_qconv = q.value()[0];
        terms.push_back(q);
      }
    }
    if (!w_idx.empty()) {
      Var logits = primary_forward(arch, phi, g.constant(stack_images(select(in.weak, w_idx))));
      const Tensor anc = gather(in.anc_weak, w_idx);
      const Tensor boxes = gather(in.box_weak, w_idx);
      Tensor target;
      if (weak_target) {
        target = weak_target(logits.value(), anc, boxes, step);
      } else if (cfg.strategy == Strategy::kEmFixed) {
        target = em_fixed_probs(logits.value(), boxes, cfg.em_bias);
      } else {
        target = target_distribution(cfg.strategy, PixelLogits(logits.value()), PixelLogits(anc),
                                     with_head ? &*state.lambda : nullptr, arch, rec.alpha)
                     .probs();
      }
      if (cfg.clamp_outside_boxes) clamp_outside_boxes(target, boxes);
      Var weak = loss_weak(logits, target, pixels);
      rec.loss_weak = weak.value()[0];
      terms.push_back(weak);
    }

    Var total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) total = ops::add(total, terms[i]);
    check_finite(rec, result.report.stage);
    g.backward(total);
    ParamSet grads = g.param_grads();
    sgd_step(state.phi, vel_phi, grads, rec.learning_rate, cfg.momentum);
    if (with_head) {
      sgd_step(*state.lambda, *vel_lambda, grads, cfg.head_learning_rate_at(step, steps), cfg.momentum);
    }
    result.report.steps.push_back(rec);
  }
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.state = std::move(state);
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  if (steps <= 0) throw_invalid("TrainConfig: steps must be > 0");
  if (batch_size < 1) throw_invalid("TrainConfig: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw_invalid("TrainConfig: learning_rate must be > 0");
  if (head_learning_rate && !(*head_learning_rate > 0.0)) {
    throw_invalid("TrainConfig: head_learning_rate must be > 0");
  }
  if (momentum < 0.0 || momentum >= 1.0) throw_invalid("TrainConfig: momentum must be in [0,1)");
  if (pretrain_steps < 0) throw_invalid("TrainConfig: pretrain_steps must be >= 0");
  if (fixed_alpha && !(*fixed_alpha >= 0.0)) throw_invalid("TrainConfig: fixed_alpha must be >= 0");
  if (strategy == Strategy::kLinear && !fixed_alpha) alpha_schedule().validate();
}

namespace {

double poly_decay(std::int64_t step, std::int64_t total, double power) {
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total);
  return std::pow(std::max(frac, 0.0), power);
}

}  // namespace

double TrainConfig::learning_rate_at(std::int64_t step, std::int64_t total) const {
  return learning_rate * poly_decay(step, total, lr_power);
}

double TrainConfig::head_learning_rate_at(std::int64_t step, std::int64_t total) const {
  return head_learning_rate.value_or(learning_rate) * poly_decay(step, total, lr_power);
}

std::string TrainReport::to_jsonl() const {
  std::ostringstream os;
  for (const StepRecord& r : steps) {
    nlohmann::ordered_json j;
    j["stage"] = stage;
    j["step"] = r.step;
    j["loss_full"] = r.loss_full;
    j["loss_weak"] = r.loss_weak;
    j["loss_qconv"] = r.loss_qconv;
    j["alpha"] = r.alpha;
    j["lr"] = r.learning_rate;
    os << j.dump() << '\n';
  }
  return os.str();
}

void TrainReport::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << to_jsonl();
}

Tensor stack_images(const std::vector<const Sample*>& samples) {
  std::vector<const Tensor*> items;
  for (const Sample* s : samples) items.push_back(&s->image);
  return stack(items);
}

Tensor stack_box_masks(const std::vector<const Sample*>& samples, std::size_t num_classes) {
  std::vector<Tensor> masks;
  masks.reserve(samples.size());
  for (const Sample* s : samples) {
    masks.push_back(boxes_to_mask(s->boxes, num_classes, s->image.dim(1), s->image.dim(2)).tensor());
  }
  std::vector<const Tensor*> items;
  for (const Tensor& t : masks) items.push_back(&t);
  return stack(items);
}

std::vector<std::uint8_t> concat_labels(const std::vector<const Sample*>& samples) {
  std::vector<std::uint8_t> out;
  for (const Sample* s : samples) {
    if (!s->mask) throw_invalid("sample " + s->id + " lacks a mask");
    out.insert(out.end(), s->mask->labels.begin(), s->mask->labels.end());
  }
  return out;
}

std::vector<Tensor> ancillary_logits(const ArchConfig& arch, const ParamSet& theta,
                                     const std::vector<const Sample*>& samples) {
  std::vector<Tensor> out;
  out.reserve(samples.size());
  for (std::size_t begin = 0; begin < samples.size(); begin += kInferenceChunk) {
    const std::size_t end = std::min(samples.size(), begin + kInferenceChunk);
    std::vector<const Sample*> chunk(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                     samples.begin() + static_cast<std::ptrdiff_t>(end));
    const Tensor logits =
        predict_ancillary(arch, theta, stack_images(chunk), stack_box_masks(chunk, arch.num_classes));
    for (std::size_t i = 0; i < chunk.size(); ++i) out.push_back(batch_item(logits, i));
  }
  return out;
}

ParamSet train_ancillary(const ArchConfig& arch, const std::vector<Sample>& fully,
                         const TrainConfig& cfg, TrainReport* report) {
  cfg.validate();
  arch.validate();
  require_masks(fully, "train_ancillary");
  if (fully.empty()) throw_invalid("train_ancillary: empty training set");
  const auto start = std::chrono::steady_clock::now();
  const auto all = pointers(fully);
  std::vector<Tensor> boxes;
  for (const Sample* s : all) boxes.push_back(stack_box_masks({s}, arch.num_classes));
  for (Tensor& b : boxes) b = b.reshaped({arch.channels(), arch.height, arch.width});

  ParamSet theta = init_ancillary(arch, derive_seed(cfg.seed, "theta"));
  ParamSet velocity = theta.zeros_like();
  BatchSampler sampler(all.size(), derive_seed(cfg.seed, "batches:ancillary"));
  const double pixels = static_cast<double>(cfg.batch_size * arch.height * arch.width);
  TrainReport local;
  local.stage = "ancillary";
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    const auto idx = sampler.next(cfg.batch_size);
    const auto batch = select(all, idx);
    Graph g;
    const BoundParams bound = bind(g, theta, true);
    Var logits = ancillary_forward(arch, bound, g.constant(stack_images(batch)), g.constant(gather(boxes, idx)));
    Var loss = loss_fully_supervised(logits, concat_labels(batch), pixels);
    StepRecord rec;
    rec.step = step;
    rec.loss_full = loss.value()[0];
    rec.learning_rate = cfg.learning_rate_at(step);
    check_finite(rec, "ancillary");
    g.backward(loss);
    sgd_step(theta, velocity, g.param_grads(), rec.learning_rate, cfg.momentum);
    local.steps.push_back(rec);
  }
  local.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (report) *report = std::move(local);
  return theta;
}

PrimaryResult train_primary(const ArchConfig& arch, const TrainConfig& cfg,
                            const std::vector<Sample>& fully, const std::vector<Sample>& weak,
                            const ParamSet& theta, const PrimaryState* init,
                            const WeakTargetFn& weak_target) {
  cfg.validate();
  arch.validate();
  require_masks(fully, "train_primary");
  const bool conv = cfg.strategy == Strategy::kConv;
  if (conv && (init == nullptr || !init->lambda)) {
    throw Error(ErrorKind::kState,
                "train_primary: conv strategy needs pretrained self-correction parameters "
                "(run the pretraining stage first)");
  }
  const bool needs_theta = !weak.empty() || conv;
  if (needs_theta && theta.empty() && !weak_target) {
    throw Error(ErrorKind::kState, "train_primary: ancillary parameters required");
  }

  LoopInputs in{arch, cfg, pointers(fully), pointers(weak), {}, {}, {}};
  if (!weak.empty()) {
    if (!theta.empty()) in.anc_weak = ancillary_logits(arch, theta, in.weak);
    else in.anc_weak.assign(weak.size(), Tensor({arch.channels(), arch.height, arch.width}));
    for (const Sample* s : in.weak) {
      in.box_weak.push_back(boxes_to_mask(s->boxes, arch.num_classes, arch.height, arch.width).tensor());
    }
  }
  PrimaryState state;
  if (init) {
    state.phi = init->phi;
    if (conv) state.lambda = init->lambda;
  } else {
    state.phi = init_primary(arch, derive_seed(cfg.seed, "phi"));
  }
  if (conv) in.anc_fully = ancillary_logits(arch, theta, in.fully);
  return primary_loop(in, Phase::kMain, std::move(state), weak_target);
}

PrimaryResult pretrain_selfcorr(const ArchConfig& arch, const TrainConfig& cfg,
                                const std::vector<Sample>& fully, const ParamSet& theta) {
  cfg.validate();
  arch.validate();
  require_masks(fully, "pretrain_selfcorr");
  if (cfg.pretrain_steps < 1) throw_invalid("pretrain_selfcorr: pretrain_steps must be >= 1");
  if (theta.empty()) throw Error(ErrorKind::kState, "pretrain_selfcorr: ancillary parameters required");
  LoopInputs in{arch, cfg, pointers(fully), {}, {}, {}, {}};
  in.anc_fully = ancillary_logits(arch, theta, in.fully);
  PrimaryState state;
  state.phi = init_primary(arch, derive_seed(cfg.seed, "phi"));
  state.lambda = init_selfcorr_head(arch, derive_seed(cfg.seed, "lambda"));
  return primary_loop(in, Phase::kPretrain, std::move(state), nullptr);
}

ProtocolResult run_protocol_conv(const ArchConfig& arch, const TrainConfig& cfg,
                                 const TrainConfig& ancillary_cfg, const std::vector<Sample>& fully,
                                 const std::vector<Sample>& weak) {
  if (fully.size() < 2) throw_invalid("run_protocol_conv: need at least 2 fully supervised samples");
  ProtocolResult out;
  auto halves = split_half(fully, cfg.seed);
  out.theta = train_ancillary(arch, halves.first, ancillary_cfg, &out.ancillary_report);
  out.stage2 = pretrain_selfcorr(arch, cfg, fully, out.theta);
  TrainConfig main = cfg;
  main.strategy = Strategy::kConv;
  out.stage3 = train_primary(arch, main, fully, weak, out.theta, &out.stage2.state);
  return out;
}

Tensor em_fixed_probs(const Tensor& logits, const Tensor& box_masks, double bias) {
  if (logits.dims() != box_masks.dims()) {
    throw Error(ErrorKind::kShape,
                "em_fixed_target: logits " + shape_string(logits.dims()) + " vs box mask " +
                    shape_string(box_masks.dims()),
                "dims");
  }
  Tensor shifted = logits;
  for (std::size_t i = 0; i < shifted.numel(); ++i) shifted[i] += bias * box_masks[i];
  return kernels::softmax_channels(shifted);
}

LabelDistribution em_fixed_target(const PixelLogits& logits, const BoxMaskTensor& box_mask,
                                  double bias) {
  return LabelDistribution(em_fixed_probs(logits.scores(), box_mask.tensor(), bias));
}

}  // namespace boxseg
