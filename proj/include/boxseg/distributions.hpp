#pragma once

#include <cstddef>

#include "boxseg/label_map.hpp"
#include "boxseg/tensor.hpp"

namespace boxseg {

// Pre-softmax per-pixel scores, (C+1) x H x W (or batched N x (C+1) x H x W).
class PixelLogits {
 public:
  explicit PixelLogits(Tensor scores);
  const Tensor& scores() const noexcept { return scores_; }
  std::size_t channels() const;

 private:
  Tensor scores_;
};

// Factorial categorical distribution: one probability vector per pixel.
class LabelDistribution {
 public:
  static constexpr double kSumTolerance = 1e-6;

  // Validates that every pixel's channel vector lies on the simplex.
  explicit LabelDistribution(Tensor probs);
  const Tensor& probs() const noexcept { return probs_; }
  std::size_t channels() const;

 private:
  Tensor probs_;
};

// Hard labels laid out as a distribution with exactly one 1 per pixel.
class OneHotMask {
 public:
  explicit OneHotMask(Tensor labels);
  static OneHotMask from_labels(const LabelMap& map, std::size_t channels);

  const Tensor& tensor() const noexcept { return labels_; }
  LabelMap to_labels() const;

 private:
  Tensor labels_;
};

LabelDistribution make_factorial(const PixelLogits& logits);

// Sum over pixels and channels of q log(q/p), with 0 log 0 = 0. Returns
// +infinity when p vanishes where q does not.
double kl_divergence(const LabelDistribution& q, const LabelDistribution& p);

// Logits of the minimiser of KL(q||p) + alpha KL(q||p_anc):
// (l + alpha * l_anc) / (alpha + 1).
PixelLogits fuse_linear(const PixelLogits& primary, const PixelLogits& ancillary,
                        double alpha);

// -sum q log softmax(l).
double soft_cross_entropy(const LabelDistribution& q, const PixelLogits& logits);
double log_prob(const PixelLogits& logits, const OneHotMask& y);
double entropy(const LabelDistribution& q);

// Per-pixel argmax over channels of a rank-3 tensor.
LabelMap argmax_labels(const Tensor& scores);

}  // namespace boxseg
