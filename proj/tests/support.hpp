#pragma once

#include <filesystem>
#include <string>

#include "boxseg/data.hpp"
#include "boxseg/error.hpp"
#include "boxseg/models.hpp"
#include "boxseg/training.hpp"

namespace boxseg::testing {

// Head weights whose output is (l + l_anc) / 2 exactly: the hidden layer
// carries relu(v) and relu(-v) of every input logit through the center tap,
// the output layer recombines them with weight +-1/2.
inline ParamSet averaging_head(const ArchConfig& arch) {
  const std::size_t k = arch.channels(), in = 2 * k, hidden = arch.head_width;
  if (hidden < 2 * in) throw_invalid("averaging_head: head too narrow");
  Tensor w0({hidden, in, 3, 3}), w1({k, hidden, 3, 3});
  for (std::size_t c = 0; c < in; ++c) {
    w0[((2 * c) * in + c) * 9 + 4] = 1.0;
    w0[((2 * c + 1) * in + c) * 9 + 4] = -1.0;
  }
  for (std::size_t o = 0; o < k; ++o) {
    for (std::size_t src : {o, o + k}) {
      w1[(o * hidden + 2 * src) * 9 + 4] = 0.5;
      w1[(o * hidden + 2 * src + 1) * 9 + 4] = -0.5;
    }
  }
  ParamSet p;
  p.add("head0.w", w0);
  p.add("head0.b", Tensor({hidden}));
  p.add("head1.w", w1);
  p.add("head1.b", Tensor({k}));
  return p;
}

// Small network and scene for fast training tests.
inline ArchConfig tiny_arch(std::size_t classes = 3, std::size_t size = 16) {
  ArchConfig a;
  a.num_classes = classes;
  a.height = a.width = size;
  a.encoder_widths = {8, 12, 16};
  a.fine_tap = 0;
  a.coarse_tap = 2;
  a.decoder_width = 12;
  a.head_width = 16;
  return a;
}

inline SceneConfig tiny_scene(std::size_t classes = 3, std::size_t size = 16) {
  SceneConfig s;
  s.num_classes = classes;
  s.height = s.width = size;
  s.min_size = 5;
  s.max_size = 9;
  s.min_shapes = 1;
  s.max_shapes = 2;
  return s;
}

inline TrainConfig quick_train(std::int64_t steps, std::uint64_t seed = 1) {
  TrainConfig t;
  t.steps = steps;
  t.pretrain_steps = steps;
  t.batch_size = 4;
  t.seed = seed;
  t.learning_rate = 0.05;
  return t;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("boxseg_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace boxseg::testing
