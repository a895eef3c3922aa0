#include "boxseg/config.hpp"

#include <fstream>

#include "boxseg/error.hpp"

namespace boxseg {
namespace {

template <typename T>
void take(const nlohmann::json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

void check_keys(const nlohmann::json& j, const char* section,
                std::initializer_list<const char*> known) {
  if (!j.is_object()) throw Error(ErrorKind::kFormat, std::string(section) + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok |= key == k;
    if (!ok) throw Error(ErrorKind::kFormat, std::string("unknown key '") + key + "' in " + section);
  }
}

}  // namespace

void RunConfig::sync_arch() {
  arch.num_classes = scene.num_classes;
  arch.height = scene.height;
  arch.width = scene.width;
}

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.sync_arch();
  return cfg;
}

SceneConfig parse_scene(const nlohmann::json& j, SceneConfig s) {
  check_keys(j, "scene", {"height", "width", "num_classes", "min_shapes", "max_shapes", "min_size",
                          "max_size", "color_jitter", "texture_noise", "allow_overlap", "background"});
  take(j, "height", s.height);
  take(j, "width", s.width);
  take(j, "num_classes", s.num_classes);
  take(j, "min_shapes", s.min_shapes);
  take(j, "max_shapes", s.max_shapes);
  take(j, "min_size", s.min_size);
  take(j, "max_size", s.max_size);
  take(j, "color_jitter", s.color_jitter);
  take(j, "texture_noise", s.texture_noise);
  take(j, "allow_overlap", s.allow_overlap);
  if (j.contains("background")) s.background = parse_background(j.at("background").get<std::string>());
  s.validate();
  return s;
}

ArchConfig parse_arch(const nlohmann::json& j, ArchConfig a) {
  check_keys(j, "arch", {"encoder_widths", "extra_convs", "fine_tap", "coarse_tap", "decoder_width",
                         "head_width", "num_classes", "height", "width"});
  take(j, "encoder_widths", a.encoder_widths);
  take(j, "extra_convs", a.extra_convs);
  take(j, "fine_tap", a.fine_tap);
  take(j, "coarse_tap", a.coarse_tap);
  take(j, "decoder_width", a.decoder_width);
  take(j, "head_width", a.head_width);
  take(j, "num_classes", a.num_classes);
  take(j, "height", a.height);
  take(j, "width", a.width);
  return a;
}

TrainConfig parse_train(const nlohmann::json& j, TrainConfig t) {
  check_keys(j, "train", {"learning_rate", "momentum", "lr_power", "steps", "batch_size", "seed",
                          "strategy", "alpha_start", "alpha_end", "em_bias", "clamp_outside_boxes",
                          "pretrain_steps", "head_learning_rate"});
  take(j, "learning_rate", t.learning_rate);
  take(j, "momentum", t.momentum);
  take(j, "lr_power", t.lr_power);
  take(j, "steps", t.steps);
  take(j, "batch_size", t.batch_size);
  take(j, "seed", t.seed);
  if (j.contains("strategy")) t.strategy = parse_strategy(j.at("strategy").get<std::string>());
  take(j, "alpha_start", t.alpha_start);
  take(j, "alpha_end", t.alpha_end);
  take(j, "em_bias", t.em_bias);
  take(j, "clamp_outside_boxes", t.clamp_outside_boxes);
  take(j, "pretrain_steps", t.pretrain_steps);
  if (j.contains("head_learning_rate")) t.head_learning_rate = j.at("head_learning_rate").get<double>();
  t.validate();
  return t;
}

RunConfig parse_run_config(const nlohmann::json& j, RunConfig cfg) {
  try {
    check_keys(j, "config", {"scene", "dataset", "arch", "train", "ancillary"});
    if (j.contains("scene")) cfg.scene = parse_scene(j.at("scene"), cfg.scene);
    if (j.contains("dataset")) {
      check_keys(j.at("dataset"), "dataset", {"num_samples"});
      take(j.at("dataset"), "num_samples", cfg.num_samples);
    }
    if (j.contains("arch")) cfg.arch = parse_arch(j.at("arch"), cfg.arch);
    if (j.contains("train")) cfg.train = parse_train(j.at("train"), cfg.train);
    if (j.contains("ancillary")) cfg.ancillary = parse_train(j.at("ancillary"), cfg.ancillary);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("bad config: ") + e.what());
  }
  cfg.sync_arch();
  cfg.arch.validate();
  return cfg;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, path.string() + ": " + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_json_file(path));
}

nlohmann::ordered_json to_json(const SceneConfig& s) {
  return {{"height", s.height},         {"width", s.width},
          {"num_classes", s.num_classes}, {"min_shapes", s.min_shapes},
          {"max_shapes", s.max_shapes}, {"min_size", s.min_size},
          {"max_size", s.max_size},     {"color_jitter", s.color_jitter},
          {"texture_noise", s.texture_noise}, {"allow_overlap", s.allow_overlap},
          {"background", to_string(s.background)}};
}

nlohmann::ordered_json to_json(const ArchConfig& a) {
  return {{"num_classes", a.num_classes},     {"height", a.height},
          {"width", a.width},                 {"encoder_widths", a.encoder_widths},
          {"extra_convs", a.extra_convs},     {"fine_tap", a.fine_tap},
          {"coarse_tap", a.coarse_tap},       {"decoder_width", a.decoder_width},
          {"head_width", a.head_width}};
}

nlohmann::ordered_json to_json(const TrainConfig& t) {
  nlohmann::ordered_json j = {{"learning_rate", t.learning_rate}, {"momentum", t.momentum},
          {"lr_power", t.lr_power},           {"steps", t.steps},
          {"batch_size", t.batch_size},       {"seed", t.seed},
          {"strategy", to_string(t.strategy)}, {"alpha_start", t.alpha_start},
          {"alpha_end", t.alpha_end},         {"em_bias", t.em_bias},
          {"clamp_outside_boxes", t.clamp_outside_boxes}, {"pretrain_steps", t.pretrain_steps}};
  if (t.head_learning_rate) j["head_learning_rate"] = *t.head_learning_rate;
  return j;
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  return {{"scene", to_json(c.scene)},
          {"dataset", {{"num_samples", c.num_samples}}},
          {"arch", to_json(c.arch)},
          {"train", to_json(c.train)},
          {"ancillary", to_json(c.ancillary)}};
}

}  // namespace boxseg
