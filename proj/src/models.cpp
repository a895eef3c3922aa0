#include "boxseg/models.hpp"

#include <cmath>

#include "boxseg/error.hpp"
#include "boxseg/ops.hpp"
#include "boxseg/random.hpp"

namespace boxseg {
namespace {

constexpr double kAttentionBias = 2.0;

std::string stage_name(std::size_t stage, std::size_t conv) {
  return "enc" + std::to_string(stage) + "_" + std::to_string(conv);
}

Tensor he_uniform(Rng& rng, std::size_t cout, std::size_t cin, std::size_t k) {
  const double bound = std::sqrt(6.0 / static_cast<double>(cin * k * k));
  Tensor t({cout, cin, k, k});
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

void add_conv(ParamSet& params, Rng& rng, const std::string& name, std::size_t cout,
              std::size_t cin, double bias = 0.0) {
  params.add(name + ".w", he_uniform(rng, cout, cin, 3));
  params.add(name + ".b", Tensor({cout}, bias));
}

void add_backbone(const ArchConfig& arch, ParamSet& params, Rng& rng) {
  std::size_t cin = 3;
  for (std::size_t s = 0; s <= arch.coarse_tap; ++s) {
    const std::size_t width = arch.encoder_widths[s];
    for (std::size_t k = 0; k <= arch.extra_convs; ++k) {
      add_conv(params, rng, stage_name(s, k), width, k == 0 ? cin : width);
    }
    cin = width;
  }
  const std::size_t merged = arch.encoder_widths[arch.fine_tap] + arch.encoder_widths[arch.coarse_tap];
  add_conv(params, rng, "dec", arch.decoder_width, merged);
  add_conv(params, rng, "cls", arch.channels(), arch.decoder_width);
}

Var conv(const BoundParams& p, const std::string& name, Var x, std::size_t stride) {
  return ops::conv2d(x, p.at(name + ".w"), p.at(name + ".b"), {stride, 1});
}

void check_input(const ArchConfig& arch, const Shape& dims, std::size_t channels,
                 const char* what) {
  const Nchw s = as_nchw(dims, what);
  if (s.c != channels) throw_shape(what, "channels", channels, s.c);
  if (s.h != arch.height) throw_shape(what, "height", arch.height, s.h);
  if (s.w != arch.width) throw_shape(what, "width", arch.width, s.w);
}

struct Taps {
  Var fine;
  Var coarse;
};

Taps encode(const ArchConfig& arch, const BoundParams& p, Var images) {
  Var x = images;
  Taps taps;
  for (std::size_t s = 0; s <= arch.coarse_tap; ++s) {
    x = ops::relu(conv(p, stage_name(s, 0), x, 2));
    for (std::size_t k = 1; k <= arch.extra_convs; ++k) x = ops::relu(conv(p, stage_name(s, k), x, 1));
    if (s == arch.fine_tap) taps.fine = x;
  }
  taps.coarse = x;
  return taps;
}

Var decode(const ArchConfig& arch, const BoundParams& p, const Taps& taps) {
  const Nchw fine = as_nchw(taps.fine.dims(), "decoder");
  Var up = ops::resize_nearest(taps.coarse, fine.h, fine.w);
  Var merged = ops::concat_channels(taps.fine, up);
  Var hidden = ops::relu(conv(p, "dec", merged, 1));
  Var logits = conv(p, "cls", hidden, 1);
  // Bilinear so class boundaries can fall inside a low-resolution cell.
  return ops::resize_bilinear(logits, arch.height, arch.width);
}

Var attend(const BoundParams& p, const std::string& name, Var features, Var box_masks) {
  const Nchw s = as_nchw(features.dims(), "attention");
  Var resized = ops::resize_nearest(box_masks, s.h, s.w);
  Var attention = ops::sigmoid(conv(p, name, resized, 1));
  return ops::mul(features, attention);
}

Var input_var(Graph& g, const Tensor& t) { return g.constant(t); }

}  // namespace

void ArchConfig::validate() const {
  if (num_classes < 1) throw_invalid("ArchConfig: num_classes must be >= 1");
  if (num_classes + 1 > 255) throw_invalid("ArchConfig: too many classes for u8 labels");
  if (encoder_widths.empty()) throw_invalid("ArchConfig: no encoder stages");
  if (coarse_tap >= encoder_widths.size()) throw_invalid("ArchConfig: coarse_tap beyond encoder");
  if (fine_tap >= coarse_tap) throw_invalid("ArchConfig: fine_tap must precede coarse_tap");
  for (std::size_t w : encoder_widths)
    if (w == 0) throw_invalid("ArchConfig: zero encoder width");
  if (decoder_width == 0 || head_width == 0) throw_invalid("ArchConfig: zero layer width");
  if (height == 0 || height % downsampling() != 0) {
    throw Error(ErrorKind::kShape,
                "ArchConfig: height " + std::to_string(height) + " not divisible by " +
                    std::to_string(downsampling()),
                "height");
  }
  if (width == 0 || width % downsampling() != 0) {
    throw Error(ErrorKind::kShape,
                "ArchConfig: width " + std::to_string(width) + " not divisible by " +
                    std::to_string(downsampling()),
                "width");
  }
}

BoxMaskTensor::BoxMaskTensor(Tensor mask) : mask_(std::move(mask)) {
  const Nchw s = as_nchw(mask_.dims(), "BoxMaskTensor");
  for (double v : mask_.data())
    if (v != 0.0 && v != 1.0) throw_invalid("BoxMaskTensor: entries must be 0 or 1");
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < s.plane(); ++i) {
      bool covered = false;
      for (std::size_t c = 1; c < s.c; ++c) covered |= mask_[n * s.image() + c * s.plane() + i] == 1.0;
      if (covered == (mask_[n * s.image() + i] == 1.0)) {
        throw_invalid("BoxMaskTensor: background channel inconsistent at pixel " + std::to_string(i));
      }
    }
  }
}

BoxMaskTensor boxes_to_mask(const std::vector<BoxAnnotation>& boxes, std::size_t num_classes,
                            std::size_t height, std::size_t width) {
  Tensor mask({num_classes + 1, height, width});
  for (const BoxAnnotation& b : boxes) {
    if (b.class_id < 1 || b.class_id > num_classes) {
      throw_invalid("boxes_to_mask: class id " + std::to_string(b.class_id) + " outside 1.." +
                    std::to_string(num_classes));
    }
    if (!(b.x0 < b.x1 && b.x1 <= width)) {
      throw Error(ErrorKind::kShape, "boxes_to_mask: box x-range [" + std::to_string(b.x0) + "," +
                                         std::to_string(b.x1) + ") outside width " + std::to_string(width),
                  "width");
    }
    if (!(b.y0 < b.y1 && b.y1 <= height)) {
      throw Error(ErrorKind::kShape, "boxes_to_mask: box y-range [" + std::to_string(b.y0) + "," +
                                         std::to_string(b.y1) + ") outside height " + std::to_string(height),
                  "height");
    }
    for (std::size_t y = b.y0; y < b.y1; ++y)
      for (std::size_t x = b.x0; x < b.x1; ++x) mask.at(b.class_id, y, x) = 1.0;
  }
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      bool covered = false;
      for (std::size_t c = 1; c <= num_classes; ++c) covered |= mask.at(c, y, x) == 1.0;
      mask.at(0, y, x) = covered ? 0.0 : 1.0;
    }
  }
  return BoxMaskTensor(std::move(mask));
}

ParamSet init_primary(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  ParamSet params;
  add_backbone(arch, params, rng);
  return params;
}

ParamSet init_ancillary(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  ParamSet params;
  add_backbone(arch, params, rng);
  add_conv(params, rng, "att_fine", arch.encoder_widths[arch.fine_tap], arch.channels(), kAttentionBias);
  add_conv(params, rng, "att_coarse", arch.encoder_widths[arch.coarse_tap], arch.channels(),
           kAttentionBias);
  return params;
}

ParamSet init_selfcorr_head(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  ParamSet params;
  add_conv(params, rng, "head0", arch.head_width, 2 * arch.channels());
  add_conv(params, rng, "head1", arch.channels(), arch.head_width);
  return params;
}

BoundParams bind(Graph& graph, const ParamSet& params, bool trainable) {
  BoundParams out;
  for (const auto& [name, value] : params) out.emplace(name, graph.param(name, value, trainable));
  return out;
}

Var primary_forward(const ArchConfig& arch, const BoundParams& phi, Var images) {
  check_input(arch, images.dims(), 3, "primary_forward");
  return decode(arch, phi, encode(arch, phi, images));
}

Var ancillary_forward(const ArchConfig& arch, const BoundParams& theta, Var images,
                      Var box_masks) {
  check_input(arch, images.dims(), 3, "ancillary_forward");
  check_input(arch, box_masks.dims(), arch.channels(), "ancillary_forward");
  if (images.dims().size() != box_masks.dims().size() ||
      as_nchw(images.dims(), "ancillary_forward").n != as_nchw(box_masks.dims(), "ancillary_forward").n) {
    throw_shape("ancillary_forward", "batch", as_nchw(images.dims(), "ancillary_forward").n,
                as_nchw(box_masks.dims(), "ancillary_forward").n);
  }
  Taps taps = encode(arch, theta, images);
  taps.fine = attend(theta, "att_fine", taps.fine, box_masks);
  taps.coarse = attend(theta, "att_coarse", taps.coarse, box_masks);
  return decode(arch, theta, taps);
}

Var selfcorr_head_forward(const ArchConfig& arch, const BoundParams& lambda, Var logits,
                          Var ancillary_logits) {
  if (logits.dims() != ancillary_logits.dims()) {
    throw Error(ErrorKind::kShape,
                "selfcorr_head_forward: logits " + shape_string(logits.dims()) + " vs ancillary " +
                    shape_string(ancillary_logits.dims()),
                "dims");
  }
  const Nchw s = as_nchw(logits.dims(), "selfcorr_head_forward");
  if (s.c != arch.channels()) throw_shape("selfcorr_head_forward", "channels", arch.channels(), s.c);
  Var merged = ops::concat_channels(logits, ancillary_logits);
  Var hidden = ops::relu(conv(lambda, "head0", merged, 1));
  return conv(lambda, "head1", hidden, 1);
}

PixelLogits primary_forward(const ArchConfig& arch, const ParamSet& phi, const Tensor& image) {
  Graph g;
  return PixelLogits(primary_forward(arch, bind(g, phi, false), input_var(g, image)).value());
}

PixelLogits ancillary_forward(const ArchConfig& arch, const ParamSet& theta, const Tensor& image,
                              const BoxMaskTensor& box_mask) {
  Graph g;
  return PixelLogits(ancillary_forward(arch, bind(g, theta, false), input_var(g, image),
                                       input_var(g, box_mask.tensor()))
                         .value());
}

PixelLogits selfcorr_head_forward(const ArchConfig& arch, const ParamSet& lambda,
                                  const PixelLogits& logits, const PixelLogits& ancillary_logits) {
  Graph g;
  return PixelLogits(selfcorr_head_forward(arch, bind(g, lambda, false),
                                           input_var(g, logits.scores()),
                                           input_var(g, ancillary_logits.scores()))
                         .value());
}

Tensor predict_primary(const ArchConfig& arch, const ParamSet& phi, const Tensor& images) {
  Graph g;
  return primary_forward(arch, bind(g, phi, false), input_var(g, images)).value();
}

Tensor predict_ancillary(const ArchConfig& arch, const ParamSet& theta, const Tensor& images,
                         const Tensor& box_masks) {
  Graph g;
  return ancillary_forward(arch, bind(g, theta, false), input_var(g, images),
                           input_var(g, box_masks))
      .value();
}

Tensor predict_selfcorr_head(const ArchConfig& arch, const ParamSet& lambda, const Tensor& logits,
                             const Tensor& ancillary_logits) {
  Graph g;
  return selfcorr_head_forward(arch, bind(g, lambda, false), input_var(g, logits),
                               input_var(g, ancillary_logits))
      .value();
}

}  // namespace boxseg
