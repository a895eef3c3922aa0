#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "boxseg/distributions.hpp"
#include "boxseg/graph.hpp"
#include "boxseg/param_set.hpp"
#include "boxseg/tensor.hpp"

namespace boxseg {

// Desk-scale encoder-decoder. Each encoder stage is a stride-2 3x3 conv
// followed by ReLU (plus `extra_convs` stride-1 3x3 convs). The decoder
// upsamples the coarse tap to the fine tap's resolution, concatenates, and
// applies two 3x3 convs; the logits are resized to the input resolution.
struct ArchConfig {
  std::size_t num_classes = 4;
  std::size_t height = 64;
  std::size_t width = 64;
  std::vector<std::size_t> encoder_widths{16, 32, 64, 96};
  std::size_t extra_convs = 0;
  std::size_t fine_tap = 0;
  std::size_t coarse_tap = 3;
  std::size_t decoder_width = 32;
  std::size_t head_width = 128;

  std::size_t channels() const { return num_classes + 1; }
  // Downsampling factor of the coarse tap.
  std::size_t downsampling() const { return std::size_t{1} << (coarse_tap + 1); }
  std::size_t tap_height(std::size_t stage) const { return height >> (stage + 1); }
  std::size_t tap_width(std::size_t stage) const { return width >> (stage + 1); }
  void validate() const;

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

struct BoxAnnotation {
  std::size_t class_id = 1;
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // [x0, x1) x [y0, y1)

  bool contains(std::size_t y, std::size_t x) const {
    return x >= x0 && x < x1 && y >= y0 && y < y1;
  }
  friend bool operator==(const BoxAnnotation&, const BoxAnnotation&) = default;
};

// (C+1) x H x W binary raster: channel c >= 1 marks pixels inside a class-c
// box, channel 0 marks pixels covered by no box.
class BoxMaskTensor {
 public:
  explicit BoxMaskTensor(Tensor mask);
  const Tensor& tensor() const noexcept { return mask_; }

 private:
  Tensor mask_;
};

BoxMaskTensor boxes_to_mask(const std::vector<BoxAnnotation>& boxes, std::size_t num_classes,
                            std::size_t height, std::size_t width);

ParamSet init_primary(const ArchConfig& arch, std::uint64_t seed);
ParamSet init_ancillary(const ArchConfig& arch, std::uint64_t seed);
ParamSet init_selfcorr_head(const ArchConfig& arch, std::uint64_t seed);

using BoundParams = std::map<std::string, Var>;
BoundParams bind(Graph& graph, const ParamSet& params, bool trainable);

// Graph forwards over batches (N x 3 x H x W images, N x (C+1) x H x W box
// masks and logits). Rank-3 inputs are accepted as a batch of one.
Var primary_forward(const ArchConfig& arch, const BoundParams& phi, Var images);
Var ancillary_forward(const ArchConfig& arch, const BoundParams& theta, Var images,
                      Var box_masks);
// concat(l, l_anc) -> conv3x3(head_width) -> relu -> conv3x3(C+1).
Var selfcorr_head_forward(const ArchConfig& arch, const BoundParams& lambda, Var logits,
                          Var ancillary_logits);

// Single-image conveniences on a throwaway graph.
PixelLogits primary_forward(const ArchConfig& arch, const ParamSet& phi, const Tensor& image);
PixelLogits ancillary_forward(const ArchConfig& arch, const ParamSet& theta,
                              const Tensor& image, const BoxMaskTensor& box_mask);
PixelLogits selfcorr_head_forward(const ArchConfig& arch, const ParamSet& lambda,
                                  const PixelLogits& logits, const PixelLogits& ancillary_logits);

// Batched inference without gradients; images is N x 3 x H x W.
Tensor predict_primary(const ArchConfig& arch, const ParamSet& phi, const Tensor& images);
Tensor predict_ancillary(const ArchConfig& arch, const ParamSet& theta, const Tensor& images,
                         const Tensor& box_masks);
Tensor predict_selfcorr_head(const ArchConfig& arch, const ParamSet& lambda,
                             const Tensor& logits, const Tensor& ancillary_logits);

}  // namespace boxseg
