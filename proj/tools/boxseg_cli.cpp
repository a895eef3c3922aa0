#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "boxseg/config.hpp"
#include "boxseg/container.hpp"
#include "boxseg/distributions.hpp"
#include "boxseg/error.hpp"
#include "boxseg/evaluate.hpp"
#include "boxseg/experiment.hpp"
#include "boxseg/gradcheck.hpp"
#include "boxseg/training.hpp"

namespace fs = std::filesystem;
using namespace boxseg;
using nlohmann::ordered_json;

namespace {

RunConfig config_or_default(const std::string& path) {
  return path.empty() ? default_run_config() : load_run_config(path);
}

// Checkpoints record the architecture they were trained with.
void save_checkpoint(const ParamSet& params, const fs::path& dir, const ArchConfig& arch,
                     const std::string& kind, const TrainReport* report) {
  ordered_json meta{{"kind", kind}, {"arch", to_json(arch)}};
  save_params(params, dir, meta.dump());
  if (report) report->write_jsonl(dir / "train_report.jsonl");
}

ArchConfig checkpoint_arch(const fs::path& dir, std::string* kind = nullptr) {
  const auto meta = nlohmann::json::parse(load_params_meta(dir));
  if (!meta.contains("arch")) throw Error(ErrorKind::kFormat, "checkpoint has no arch record: " + dir.string());
  if (kind) *kind = meta.value("kind", "");
  return parse_arch(meta.at("arch"));
}

void check_dataset_arch(const StoredDataset& data, const ArchConfig& arch) {
  if (data.num_classes != arch.num_classes || data.height != arch.height || data.width != arch.width) {
    throw Error(ErrorKind::kShape, "dataset does not match the model's classes or resolution");
  }
}

ArchConfig arch_for(const RunConfig& cfg, const StoredDataset& data) {
  ArchConfig arch = cfg.arch;
  arch.num_classes = data.num_classes;
  arch.height = data.height;
  arch.width = data.width;
  arch.validate();
  return arch;
}

void print(const ordered_json& j) { std::cout << j.dump() << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Box-supervised segmentation with self-correction"};
  app.require_subcommand(1);

  std::string config_path, out, data_dir, ckpt, strategy, model, dump, spec_path, ops = "all";
  std::string primary_logits, ancillary_logits, ancillary_ckpt;
  std::int64_t seed = 0;
  std::size_t f_size = 0;
  bool use_half = false, clamp = false;
  double alpha = 0.0;
  std::optional<double> alpha_start, alpha_end;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic shapes dataset");
  gen->add_option("--config", config_path, "run config (scene and dataset sections)")->required();
  gen->add_option("--out", out)->required();
  gen->add_option("--seed", seed)->required();

  auto* split = app.add_subcommand("split", "Split a dataset into fully and weakly labeled sets");
  split->add_option("--data", data_dir)->required();
  split->add_option("--f-size", f_size)->required();
  split->add_option("--seed", seed)->required();

  auto* anc = app.add_subcommand("train-ancillary", "Train the box-conditioned model on F");
  anc->add_option("--data", data_dir)->required();
  anc->add_flag("--use-half-f", use_half, "train on one seeded half of F");
  anc->add_option("--out", out)->required();
  anc->add_option("--config", config_path);

  auto* train = app.add_subcommand("train", "Train the primary model on F and W");
  train->add_option("--strategy", strategy)
      ->required()
      ->check(CLI::IsMember({"none", "linear", "conv", "em-fixed"}));
  train->add_option("--data", data_dir)->required();
  train->add_option("--ancillary", ancillary_ckpt)->required();
  train->add_option("--out", out)->required();
  train->add_option("--alpha-start", alpha_start);
  train->add_option("--alpha-end", alpha_end);
  train->add_flag("--clamp-outside-boxes", clamp);
  train->add_option("--config", config_path);

  auto* eval = app.add_subcommand("eval", "mIOU of a checkpoint on a dataset");
  eval->add_option("--model", model)->required()->check(CLI::IsMember({"primary", "ancillary"}));
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--data", data_dir)->required();
  eval->add_option("--dump-masks", dump);
  eval->add_flag("--clamp-outside-boxes", clamp);

  auto* fuse = app.add_subcommand("fuse", "Fuse primary and ancillary logits");
  fuse->add_option("--primary-logits", primary_logits)->required();
  fuse->add_option("--ancillary-logits", ancillary_logits)->required();
  fuse->add_option("--alpha", alpha)->required();
  fuse->add_option("--out", out)->required();

  auto* grad = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  grad->add_option("--ops", ops);
  grad->add_option("--seed", seed)->required();

  auto* exp = app.add_subcommand("experiment", "Run a strategy x F-size grid");
  exp->add_option("--spec", spec_path)->required();
  exp->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print({{"error", {{"kind", "usage"}, {"message", e.what()}}}});
    return 2;
  }

  try {
    const auto useed = static_cast<std::uint64_t>(seed);
    if (*gen) {
      const RunConfig cfg = load_run_config(config_path);
      StoredDataset data;
      data.num_classes = cfg.scene.num_classes;
      data.height = cfg.scene.height;
      data.width = cfg.scene.width;
      data.unassigned = generate_dataset(cfg.scene, cfg.num_samples, useed);
      write_dataset(out, data);
      print({{"samples", data.unassigned.size()}, {"out", out}});
    } else if (*split) {
      StoredDataset data = read_dataset(data_dir);
      if (!data.split.weak.empty() || !data.split.fully.empty()) {
        throw Error(ErrorKind::kState, "dataset is already split");
      }
      data.split = split_dataset(std::move(data.unassigned), f_size, useed);
      data.unassigned.clear();
      write_dataset(data_dir, data);
      print({{"fully", data.split.fully.size()}, {"weak", data.split.weak.size()}});
    } else if (*anc) {
      const RunConfig cfg = config_or_default(config_path);
      const StoredDataset data = read_dataset(data_dir);
      const ArchConfig arch = arch_for(cfg, data);
      std::vector<Sample> fully = data.split.fully;
      if (fully.empty()) throw Error(ErrorKind::kState, "dataset has no fully labeled split");
      // Same halving as the conv protocol so the two routes agree.
      if (use_half) fully = split_half(std::move(fully), cfg.train.seed).first;
      TrainReport report;
      const ParamSet theta = train_ancillary(arch, fully, cfg.ancillary, &report);
      save_checkpoint(theta, out, arch, "ancillary", &report);
      print({{"trained_on", fully.size()}, {"out", out}});
    } else if (*train) {
      RunConfig cfg = config_or_default(config_path);
      if (alpha_start) cfg.train.alpha_start = *alpha_start;
      if (alpha_end) cfg.train.alpha_end = *alpha_end;
      if (clamp) cfg.train.clamp_outside_boxes = true;
      cfg.train.strategy = parse_strategy(strategy);
      const StoredDataset data = read_dataset(data_dir);
      const ArchConfig arch = arch_for(cfg, data);
      std::string kind;
      if (checkpoint_arch(ancillary_ckpt, &kind) != arch) {
        throw Error(ErrorKind::kInvalidArgument, "ancillary checkpoint arch differs from the config");
      }
      const ParamSet theta = load_params(ancillary_ckpt);
      ordered_json summary{{"strategy", strategy}, {"out", out}};
      if (cfg.train.strategy == Strategy::kConv) {
        PrimaryResult stage2 = pretrain_selfcorr(arch, cfg.train, data.split.fully, theta);
        save_checkpoint(stage2.state.phi, fs::path(out) / "stage2", arch, "primary", &stage2.report);
        PrimaryResult r = train_primary(arch, cfg.train, data.split.fully, data.split.weak, theta, &stage2.state);
        save_checkpoint(r.state.phi, out, arch, "primary", &r.report);
        save_checkpoint(*r.state.lambda, fs::path(out) / "selfcorr", arch, "selfcorr", nullptr);
      } else {
        PrimaryResult r = train_primary(arch, cfg.train, data.split.fully, data.split.weak, theta);
        save_checkpoint(r.state.phi, out, arch, "primary", &r.report);
      }
      print(summary);
    } else if (*eval) {
      const StoredDataset data = read_dataset(data_dir);
      const ArchConfig arch = checkpoint_arch(ckpt);
      check_dataset_arch(data, arch);
      const ParamSet params = load_params(ckpt);
      EvalOptions opts;
      opts.clamp_outside_boxes = clamp;
      if (!dump.empty()) opts.dump_masks = dump;
      const IouReport r = evaluate(parse_model_kind(model), arch, params, data.all(), opts);
      print({{"miou", r.miou}, {"iou", r.iou}, {"included", r.included}, {"images", r.images}});
    } else if (*fuse) {
      const PixelLogits p(container::read_tensor(primary_logits));
      const PixelLogits a(container::read_tensor(ancillary_logits));
      container::write_tensor(out, fuse_linear(p, a, alpha).scores());
      print({{"out", out}});
    } else if (*grad) {
      bool ok = true;
      for (const GradCheckResult& r : run_gradcheck(ops, useed)) {
        ok = ok && r.passed;
        print({{"name", r.name}, {"coordinates", r.coordinates}, {"max_rel_error", r.max_rel_error},
               {"skipped_kinks", r.skipped_kinks},
               {"passed", r.passed}});
      }
      if (!ok) return 1;
    } else if (*exp) {
      const ExperimentSpec spec = load_experiment_spec(spec_path);
      const ExperimentResult r = run_experiment(spec, fs::path(out));
      std::cout << experiment_table(spec, r);
      for (const CellResult& c : r.cells) {
        if (c.error) std::cerr << "cell seed=" << c.seed << " F=" << c.f_size << " failed: " << *c.error << '\n';
      }
    }
  } catch (const Error& e) {
    ordered_json err{{"kind", to_string(e.kind())}, {"message", e.what()}};
    if (!e.axis().empty()) err["axis"] = e.axis();
    print({{"error", err}});
    return 1;
  } catch (const std::exception& e) {
    print({{"error", {{"kind", "internal"}, {"message", e.what()}}}});
    return 1;
  }
  return 0;
}
