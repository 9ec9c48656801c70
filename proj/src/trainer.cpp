#include "feddet/trainer.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "feddet/rng.hpp"

namespace feddet {

void TrainConfig::validate() const {
  if (!(std::isfinite(learning_rate) && learning_rate >= 0.0))
    throw std::invalid_argument("learning_rate must be finite and >= 0");
  if (local_epochs < 1) throw std::invalid_argument("local_epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
}

ParamVector sgd_step(const ParamVector& params, const ParamVector& grad, double eta) {
  if (params.size() != grad.size())
    throw std::invalid_argument("sgd_step: params/grad length mismatch");
  ParamVector out(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!std::isfinite(grad[i]))
      throw NonFiniteError("non-finite gradient element at index " + std::to_string(i));
    out[i] = params[i] - eta * grad[i];
  }
  return out;
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t shuffle_seed,
                                           int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(shuffle_seed ^ static_cast<std::uint64_t>(epoch));
  rng.shuffle(order);
  return order;
}

TrainResult train_local(const ModelConfig& model_cfg, ParamVector params,
                        const Dataset& data, const TrainConfig& cfg,
                        const LossWeights& weights) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train_local: empty dataset");

  const std::size_t n = data.size();
  TrainResult result;
  result.epochs.reserve(cfg.local_epochs);

  ParamVector batch_grad(params.size());

  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    const auto order = epoch_permutation(n, cfg.shuffle_seed, epoch);

    LossBreakdown epoch_sum;
    std::size_t processed = 0;

    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      std::fill(batch_grad.begin(), batch_grad.end(), 0.0);

      for (std::size_t k = start; k < end; ++k) {
        const Sample& sample = data[order[k]];
        const GridPrediction pred = forward(model_cfg, params, sample.pixels);
        const TargetAssignment assign =
            assign_targets(sample.objects, pred, cfg.confidence_target);
        const LossBreakdown lb = detection_loss(pred, assign, weights);
        if (!std::isfinite(lb.total))
          throw NonFiniteError("non-finite loss at epoch " + std::to_string(epoch) +
                               ", sample " + std::to_string(order[k]));
        epoch_sum += lb;

        const GridPrediction up = detection_loss_grad(pred, assign, weights);
        const ParamVector g = backward(model_cfg, params, sample.pixels, up);
        for (std::size_t i = 0; i < g.size(); ++i) batch_grad[i] += g[i];
      }

      const double scale = 1.0 / static_cast<double>(end - start);
      for (double& g : batch_grad) g *= scale;
      params = sgd_step(params, batch_grad, cfg.learning_rate);
      processed += end - start;
    }

    EpochTrace trace;
    trace.mean_loss = epoch_sum;
    trace.mean_loss *= 1.0 / static_cast<double>(n);
    trace.samples_processed = processed;
    result.epochs.push_back(trace);
  }

  result.params = std::move(params);
  return result;
}

}  // namespace feddet
