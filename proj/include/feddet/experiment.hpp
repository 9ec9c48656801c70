#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "feddet/config.hpp"
#include "feddet/metrics.hpp"

namespace feddet {

// Full evaluation of one parameter vector against a dataset: decoded
// detections, the AP table, confusion matrix, threshold curves, mean
// detection loss, and confusion accuracy.
struct EvalOutcome {
  std::vector<ImageEval> evals;
  MapTable table;
  ConfusionMatrix conf;
  CurveBundle curve_bundle;
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

// The reported mean loss uses a fixed yardstick (default term weights, IoU
// confidence targets) so it is comparable across training configurations.
EvalOutcome evaluate_model(const ModelConfig& model, const ParamVector& params,
                           const Dataset& data, const EvalConfig& eval,
                           const std::vector<std::string>& class_names);

// Runs an experiment end to end (federated when centralized == false) and
// writes rounds.jsonl, final_model.fdck, metrics/ CSVs, test_data/, and
// summary.json into out_dir. The final metrics are computed from the
// f32-quantized checkpoint, so a later standalone evaluation of the written
// artifacts reproduces them exactly.
void run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                    int threads, bool centralized);

// Standalone evaluation of a checkpoint against a sample directory; writes
// metrics CSVs and summary.json (kind "eval") into out_dir.
void run_eval(const std::filesystem::path& checkpoint,
              const std::filesystem::path& data_dir,
              const std::filesystem::path& out_dir, const EvalConfig& eval,
              const std::vector<std::string>& class_names_or_empty);

// Side-by-side report for two summaries (typically federated vs pooled):
// compare.csv, accuracy.svg, loss.svg, and both confusion matrices.
void run_compare(const std::filesystem::path& first_summary,
                 const std::filesystem::path& second_summary,
                 const std::filesystem::path& out_dir);

}  // namespace feddet
