#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "feddet/config.hpp"
#include "feddet/dataio.hpp"
#include "feddet/experiment.hpp"

namespace {

feddet::ExperimentConfig load_config(const std::string& path, const std::string& out,
                                     bool has_seed, std::uint64_t seed) {
  feddet::ExperimentConfig cfg = feddet::load_experiment_config(path);
  if (has_seed) {
    feddet::ExperimentConfig reseeded = cfg;
    reseeded.seed = seed;
    reseeded.model.seed = reseeded.model_seed();
    reseeded.partition.seed = reseeded.partition_seed();
    cfg = reseeded;
  }
  if (!out.empty()) cfg.output_dir = out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic federated training simulator for grid detection"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic labeled dataset");
  int gen_count = 100, gen_size = 64;
  std::uint64_t gen_seed = 0;
  std::string gen_out = "data";
  std::vector<double> gen_mix;
  gen->add_option("--count", gen_count, "Number of images");
  gen->add_option("--image-size", gen_size, "Square image size in pixels");
  gen->add_option("--seed", gen_seed, "Generation seed");
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_option("--mix", gen_mix, "Class proportions (3 values summing to 1)")
      ->expected(3);

  // partition
  auto* part = app.add_subcommand("partition", "Write a client partition manifest");
  std::string part_data, part_mode = "iid", part_out = "partition.json";
  int part_clients = 1, part_classes = 3;
  double part_alpha = 0.5;
  std::uint64_t part_seed = 0;
  part->add_option("--data", part_data, "Sample directory")->required();
  part->add_option("--mode", part_mode, "iid or dirichlet")
      ->check(CLI::IsMember({"iid", "dirichlet"}));
  part->add_option("-n,--clients", part_clients, "Number of clients")->required();
  part->add_option("--alpha", part_alpha, "Dirichlet concentration");
  part->add_option("--seed", part_seed, "Partition seed");
  part->add_option("--classes", part_classes, "Number of classes in the labels");
  part->add_option("--out", part_out, "Manifest path");

  // run / centralized
  std::string run_config, run_out;
  std::uint64_t run_seed = 0;
  int run_threads = 1;
  auto add_run_flags = [&](CLI::App* cmd) {
    cmd->add_option("--config", run_config, "Experiment config (JSON)")->required();
    cmd->add_option("--out", run_out, "Output directory (overrides the config)");
    cmd->add_option("--seed", run_seed, "Master seed (overrides the config)");
    cmd->add_option("--threads", run_threads, "Client-parallel worker count")
        ->check(CLI::PositiveNumber);
  };
  auto* run = app.add_subcommand("run", "Run a federated experiment");
  add_run_flags(run);
  auto* central =
      app.add_subcommand("centralized", "Run the pooled single-model baseline");
  add_run_flags(central);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a directory");
  std::string eval_ckpt, eval_data, eval_out = "eval_out";
  feddet::EvalConfig eval_cfg;
  std::vector<std::string> eval_names;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--data", eval_data, "Sample directory")->required();
  eval->add_option("--out", eval_out, "Output directory");
  eval->add_option("--conf-threshold", eval_cfg.conf_threshold, "Decode threshold");
  eval->add_option("--nms-iou", eval_cfg.nms_iou, "NMS IoU threshold");
  eval->add_option("--confusion-iou", eval_cfg.confusion_iou, "Confusion IoU threshold");
  eval->add_option("--confusion-conf", eval_cfg.confusion_conf,
                   "Confusion confidence threshold");
  eval->add_flag("--eleven-point", eval_cfg.eleven_point, "11-point AP interpolation");
  eval->add_option("--class-names", eval_names, "Class names (one per class)");

  // compare
  auto* compare = app.add_subcommand("compare", "Side-by-side report for two runs");
  std::string cmp_first, cmp_second, cmp_out = "compare_out";
  compare->add_option("first", cmp_first, "First run directory or summary.json (federated)")
      ->required();
  compare->add_option("second", cmp_second,
                      "Second run directory or summary.json (baseline)")
      ->required();
  compare->add_option("--out", cmp_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      std::array<double, 3> mix{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
      if (!gen_mix.empty()) mix = {gen_mix[0], gen_mix[1], gen_mix[2]};
      const feddet::Dataset data =
          feddet::generate_synthetic(gen_count, gen_size, mix, gen_seed);
      feddet::save_directory(gen_out, data);
      std::printf("wrote %zu samples to %s\n", data.size(), gen_out.c_str());
    } else if (part->parsed()) {
      feddet::PartitionSpec spec;
      spec.mode = part_mode == "iid" ? feddet::PartitionSpec::Mode::kIid
                                     : feddet::PartitionSpec::Mode::kDirichlet;
      spec.alpha = part_alpha;
      spec.num_clients = part_clients;
      spec.seed = part_seed;
      const feddet::Dataset data = feddet::load_directory(part_data, part_classes);
      const auto assignment = feddet::partition_indices(data, spec);
      feddet::write_partition_manifest(part_out, assignment);
      std::printf("wrote %d-client manifest to %s\n", part_clients, part_out.c_str());
    } else if (run->parsed() || central->parsed()) {
      const bool centralized = central->parsed();
      const CLI::App* cmd = centralized ? central : run;
      feddet::ExperimentConfig cfg =
          load_config(run_config, run_out, cmd->count("--seed") > 0, run_seed);
      std::string out = cfg.output_dir;
      if (centralized && run_out.empty()) out += "/centralized";
      feddet::run_experiment(cfg, out, run_threads, centralized);
      std::printf("run complete; summary at %s/summary.json\n", out.c_str());
    } else if (eval->parsed()) {
      feddet::run_eval(eval_ckpt, eval_data, eval_out, eval_cfg, eval_names);
      std::printf("evaluation written to %s\n", eval_out.c_str());
    } else if (compare->parsed()) {
      auto resolve = [](const std::string& p) {
        const std::filesystem::path path(p);
        return std::filesystem::is_directory(path) ? path / "summary.json" : path;
      };
      feddet::run_compare(resolve(cmp_first), resolve(cmp_second), cmp_out);
      std::printf("comparison written to %s\n", cmp_out.c_str());
    }
    return 0;
  } catch (const feddet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
