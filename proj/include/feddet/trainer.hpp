#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "feddet/model.hpp"
#include "feddet/sample.hpp"
#include "feddet/yolo_loss.hpp"

namespace feddet {

struct TrainConfig {
  double learning_rate = 0.01;
  int local_epochs = 1;
  int batch_size = 8;
  std::uint64_t shuffle_seed = 0;
  ConfidenceTarget confidence_target = ConfidenceTarget::kIoU;

  void validate() const;  // learning_rate >= 0, local_epochs >= 1, batch_size >= 1
};

struct EpochTrace {
  LossBreakdown mean_loss;
  std::size_t samples_processed = 0;
};

// Thrown when a gradient or loss goes non-finite during local training;
// the federation layer maps this to its client-failure policy.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One plain SGD step: theta - eta * grad, element-wise.
ParamVector sgd_step(const ParamVector& params, const ParamVector& grad, double eta);

// Visit order for one epoch: Fisher-Yates permutation of [0, n) seeded with
// shuffle_seed XOR epoch. Exposed so tests can reproduce batch boundaries.
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t shuffle_seed,
                                           int epoch);

struct TrainResult {
  ParamVector params;
  std::vector<EpochTrace> epochs;
};

// Mini-batch SGD over one client's dataset for cfg.local_epochs epochs.
// The batch gradient is the mean of per-sample loss gradients chained
// through the model backward pass; the last partial batch is kept.
// Deterministic given identical inputs. Throws NonFiniteError if the loss
// leaves the reals.
TrainResult train_local(const ModelConfig& model_cfg, ParamVector params,
                        const Dataset& data, const TrainConfig& cfg,
                        const LossWeights& weights);

}  // namespace feddet
