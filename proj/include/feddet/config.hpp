#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "feddet/dataio.hpp"
#include "feddet/federation.hpp"
#include "feddet/netsim.hpp"
#include "feddet/rng.hpp"

namespace feddet {

// Thrown for malformed or invalid experiment configs; the CLI maps it to
// exit code 2 (as opposed to runtime failures, which exit 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" | "directory"
  int count = 600;
  int image_size = 64;
  std::array<double, 3> class_mix{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  std::string path;  // directory source only
  int target_size = 0;  // 0 = keep image_size
  std::vector<Augment> augment;
  double train_fraction = 0.8;
};

struct EvalConfig {
  double conf_threshold = 0.001;
  double nms_iou = 0.45;
  double confusion_iou = 0.45;
  double confusion_conf = 0.25;
  bool eleven_point = false;
};

// Everything one experiment needs. A fixed seed makes the whole run
// reproducible; every stage draws from its own stream derived from it.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  DataConfig data;
  ModelConfig model;       // input size filled from data at load time
  TrainConfig train;
  LossWeights loss;
  int rounds = 10;
  int clients = 1;
  int eval_every = 1;
  bool weighted_by_samples = false;
  FailurePolicy on_failure = FailurePolicy::kAbort;
  PartitionSpec partition;
  NetProfile net;
  EvalConfig eval;
  std::vector<std::string> class_names;

  void validate() const;  // throws ConfigError

  std::uint64_t data_seed() const { return derive_seed(seed, 1); }
  std::uint64_t split_seed() const { return derive_seed(seed, 2); }
  std::uint64_t partition_seed() const { return derive_seed(seed, 3); }
  std::uint64_t model_seed() const { return derive_seed(seed, 4); }
  std::uint64_t federation_seed() const { return derive_seed(seed, 5); }
};

// Parses a JSON experiment config. Unknown keys anywhere are errors, so a
// typo cannot silently fall back to a default. Bandwidths accept the
// string "inf" for an unconstrained link.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::string& origin = "<config>");

}  // namespace feddet
