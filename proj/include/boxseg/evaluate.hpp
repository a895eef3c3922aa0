#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "boxseg/data.hpp"
#include "boxseg/metrics.hpp"
#include "boxseg/models.hpp"

namespace boxseg {

enum class ModelKind { kPrimary, kAncillary };

const char* to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

struct EvalOptions {
  // Predictions outside every box are forced to background.
  bool clamp_outside_boxes = false;
  // Writes each predicted mask as a u8 container named <id>.pred.stns.
  std::optional<std::filesystem::path> dump_masks;
};

// Per-image argmax predictions. Ancillary models also consume the boxes.
std::vector<LabelMap> predict_labels(ModelKind kind, const ArchConfig& arch, const ParamSet& params,
                                     const std::vector<const Sample*>& samples,
                                     bool clamp_outside_boxes = false);

// Every sample must carry a ground-truth mask.
IouReport evaluate(ModelKind kind, const ArchConfig& arch, const ParamSet& params,
                   const std::vector<const Sample*>& samples, const EvalOptions& options = {});

// Mean per-pixel loss of the self-correction head against ground truth.
double heldout_qconv_loss(const ArchConfig& arch, const ParamSet& phi, const ParamSet& theta,
                          const ParamSet& lambda, const std::vector<const Sample*>& samples);

}  // namespace boxseg
