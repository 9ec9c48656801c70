#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "feddet/model.hpp"
#include "feddet/netsim.hpp"
#include "feddet/sample.hpp"
#include "feddet/trainer.hpp"

namespace feddet {

enum class FailurePolicy { kAbort, kDropClient };

struct FedConfig {
  int rounds = 1;
  int clients = 1;
  ModelConfig model;
  TrainConfig train;
  LossWeights loss;
  int eval_every = 0;  // 0 = never
  std::uint64_t master_seed = 0;
  bool weighted_by_samples = false;
  FailurePolicy on_failure = FailurePolicy::kAbort;

  void validate() const;
};

// Element-wise arithmetic mean, summed in ascending client-index order.
ParamVector fedavg(const std::vector<ParamVector>& updates);

// Mean weighted by per-update weights (used for size-weighted aggregation
// and for dropping failed clients). Weights must be >= 0 with a positive sum.
ParamVector fedavg_weighted(const std::vector<ParamVector>& updates,
                            const std::vector<double>& weights);

struct ValidationMetrics {
  double map50 = 0.0;
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

struct RoundReport {
  int round = 0;  // 1-based
  std::vector<double> client_loss;  // mean training loss per client this round
  double mean_loss = 0.0;
  std::string checksum;  // fnv1a64 of the serialized global checkpoint, hex
  std::optional<ValidationMetrics> validation;
  double sim_seconds = 0.0;
  double cum_sim_seconds = 0.0;
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
  std::vector<int> dropped_clients;
};

struct FederationResult {
  ParamVector params;
  std::vector<RoundReport> reports;
  CostLedger ledger;
};

// Shuffle seed shared by every client in `round` (1-based). Exposed so a
// pooled single-model baseline can follow the exact same sample order as a
// single-client federation.
std::uint64_t federation_round_seed(std::uint64_t master_seed, int round);

// Optional per-round evaluation callback (round index is 1-based).
using EvalFn = std::function<ValidationMetrics(const ParamVector&, int round)>;
// Optional per-round data source; when set, replaces every client's dataset
// at the start of each round. Default is static per-client data.
using RepartitionFn = std::function<std::vector<Dataset>(int round)>;

// Runs the full synchronous loop: distribute the global model, train every
// client locally, aggregate by (possibly weighted) averaging, repeat.
// Per-round client shuffle seeds derive from (master_seed, round) only, so
// identical client datasets produce identical updates. Client work may run
// on `threads` workers; results are aggregated in client order and are
// bit-identical to a sequential run.
FederationResult run_federation(const FedConfig& cfg,
                                const std::vector<Dataset>& client_data,
                                const NetProfile& net, int threads = 1,
                                const EvalFn& eval = {},
                                const RepartitionFn& repartition = {});

// Checkpoint encoding: 32-byte little-endian header
//   0  char[4] magic "FDCK"
//   4  u32     version (1)
//   8  u16     input_height
//   10 u16     input_width
//   12 u16     grid_size
//   14 u16     boxes_per_cell
//   16 u16     num_classes
//   18 u16     hidden_width
//   20 u64     parameter count M
//   28 u32     reserved (0)
// followed by M parameters as little-endian f32.
std::vector<std::uint8_t> serialize_checkpoint(const ParamVector& params,
                                               const ModelConfig& meta);
std::pair<ParamVector, ModelConfig> deserialize_checkpoint(
    std::span<const std::uint8_t> bytes);

std::size_t checkpoint_size(const ModelConfig& cfg);

void write_checkpoint_file(const std::filesystem::path& path,
                           const ParamVector& params, const ModelConfig& meta);
std::pair<ParamVector, ModelConfig> read_checkpoint_file(
    const std::filesystem::path& path);

// FNV-1a 64-bit digest, reported as 16 hex digits.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::string checkpoint_checksum(const ParamVector& params, const ModelConfig& meta);

// Appends one JSON object per round (report merged with that round's ledger
// entries) to a JSON-lines file.
void write_round_log(const std::filesystem::path& path,
                     const std::vector<RoundReport>& reports,
                     const CostLedger& ledger);

}  // namespace feddet
