#include "boxseg/distributions.hpp"

#include <cmath>
#include <limits>

#include "boxseg/error.hpp"
#include "boxseg/kernels.hpp"

namespace boxseg {
namespace {

void require_same_dims(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rank() != b.rank()) throw_shape(op, "rank", a.rank(), b.rank());
  static const char* kAxes4[] = {"batch", "channels", "height", "width"};
  static const char* kAxes3[] = {"channels", "height", "width"};
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw_shape(op, a.rank() == 4 ? kAxes4[i] : kAxes3[i], a.dim(i), b.dim(i));
    }
  }
}

std::size_t channel_count(const Tensor& t, const char* op) { return as_nchw(t.dims(), op).c; }

}  // namespace

PixelLogits::PixelLogits(Tensor scores) : scores_(std::move(scores)) {
  as_nchw(scores_.dims(), "PixelLogits");
  if (!scores_.all_finite()) throw_invalid("PixelLogits: non-finite score");
}

std::size_t PixelLogits::channels() const { return channel_count(scores_, "PixelLogits"); }

LabelDistribution::LabelDistribution(Tensor probs) : probs_(std::move(probs)) {
  const Nchw s = as_nchw(probs_.dims(), "LabelDistribution");
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < s.plane(); ++i) {
      double total = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const double v = probs_[n * s.image() + c * s.plane() + i];
        if (!(v >= 0.0 && v <= 1.0)) throw_invalid("LabelDistribution: entry outside [0,1]");
        total += v;
      }
      if (std::abs(total - 1.0) > kSumTolerance) {
        throw_invalid("LabelDistribution: pixel " + std::to_string(i) + " sums to " +
                      std::to_string(total));
      }
    }
  }
}

std::size_t LabelDistribution::channels() const {
  return channel_count(probs_, "LabelDistribution");
}

OneHotMask::OneHotMask(Tensor labels) : labels_(std::move(labels)) {
  const Nchw s = as_nchw(labels_.dims(), "OneHotMask");
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < s.plane(); ++i) {
      int ones = 0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const double v = labels_[n * s.image() + c * s.plane() + i];
        if (v == 1.0) ++ones;
        else if (v != 0.0) throw_invalid("OneHotMask: entries must be 0 or 1");
      }
      if (ones != 1) throw_invalid("OneHotMask: pixel " + std::to_string(i) + " is not one-hot");
    }
  }
}

OneHotMask OneHotMask::from_labels(const LabelMap& map, std::size_t channels) {
  Tensor t({channels, map.height, map.width});
  const std::size_t plane = map.height * map.width;
  for (std::size_t i = 0; i < plane; ++i) {
    if (map.labels[i] >= channels) throw_shape("OneHotMask", "class", channels, map.labels[i]);
    t[map.labels[i] * plane + i] = 1.0;
  }
  return OneHotMask(std::move(t));
}

LabelMap OneHotMask::to_labels() const {
  if (labels_.rank() != 3) throw_shape("OneHotMask::to_labels", "rank", 3, labels_.rank());
  return argmax_labels(labels_);
}

LabelDistribution make_factorial(const PixelLogits& logits) {
  return LabelDistribution(kernels::softmax_channels(logits.scores()));
}

double kl_divergence(const LabelDistribution& q, const LabelDistribution& p) {
  require_same_dims(q.probs(), p.probs(), "kl_divergence");
  double total = 0.0;
  for (std::size_t i = 0; i < q.probs().numel(); ++i) {
    const double qi = q.probs()[i];
    if (qi == 0.0) continue;
    const double pi = p.probs()[i];
    if (pi == 0.0) return std::numeric_limits<double>::infinity();
    total += qi * (std::log(qi) - std::log(pi));
  }
  return total;
}

PixelLogits fuse_linear(const PixelLogits& primary, const PixelLogits& ancillary,
                        double alpha) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw_invalid("fuse_linear: alpha must be a finite non-negative real, got " +
                  std::to_string(alpha));
  }
  require_same_dims(primary.scores(), ancillary.scores(), "fuse_linear");
  Tensor out(primary.scores().dims());
  const double denom = alpha + 1.0;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = (primary.scores()[i] + alpha * ancillary.scores()[i]) / denom;
  }
  return PixelLogits(std::move(out));
}

double soft_cross_entropy(const LabelDistribution& q, const PixelLogits& logits) {
  require_same_dims(q.probs(), logits.scores(), "soft_cross_entropy");
  const Tensor logp = kernels::log_softmax_channels(logits.scores());
  double total = 0.0;
  for (std::size_t i = 0; i < logp.numel(); ++i) {
    if (q.probs()[i] != 0.0) total -= q.probs()[i] * logp[i];
  }
  return total;
}

double log_prob(const PixelLogits& logits, const OneHotMask& y) {
  require_same_dims(y.tensor(), logits.scores(), "log_prob");
  const Tensor logp = kernels::log_softmax_channels(logits.scores());
  double total = 0.0;
  for (std::size_t i = 0; i < logp.numel(); ++i) {
    if (y.tensor()[i] == 1.0) total += logp[i];
  }
  return total;
}

double entropy(const LabelDistribution& q) {
  double total = 0.0;
  for (double v : q.probs().data()) {
    if (v > 0.0) total -= v * std::log(v);
  }
  return total;
}

LabelMap argmax_labels(const Tensor& scores) {
  if (scores.rank() != 3) throw_shape("argmax_labels", "rank", 3, scores.rank());
  const std::size_t channels = scores.dim(0);
  LabelMap out(scores.dim(1), scores.dim(2));
  const std::size_t plane = out.size();
  for (std::size_t i = 0; i < plane; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < channels; ++c) {
      if (scores[c * plane + i] > scores[best * plane + i]) best = c;
    }
    out.labels[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace boxseg
