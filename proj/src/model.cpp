#include "feddet/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "feddet/rng.hpp"

namespace feddet {

namespace {

std::size_t checked_mul(std::size_t a, std::size_t b) {
  if (a != 0 && b > std::numeric_limits<std::size_t>::max() / a)
    throw std::overflow_error("model dimension product overflows size_t");
  return a * b;
}

std::size_t checked_add(std::size_t a, std::size_t b) {
  if (b > std::numeric_limits<std::size_t>::max() - a)
    throw std::overflow_error("model dimension sum overflows size_t");
  return a + b;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

constexpr double kLeakySlope = 0.1;

}  // namespace

void ModelConfig::validate() const {
  if (grid_size < 1 || boxes_per_cell < 1 || num_classes < 1 || hidden_width < 1)
    throw std::invalid_argument("model config: S, B, C, H must all be >= 1");
  if (input_height < grid_size || input_width < grid_size)
    throw std::invalid_argument(
        "model config: input dims must be >= grid_size (each cell covers >= 1 pixel)");
  param_count(*this);  // overflow check
}

std::size_t param_count(const ModelConfig& cfg) {
  const std::size_t in = checked_mul(cfg.input_height, cfg.input_width);
  const std::size_t hidden = cfg.hidden_width;
  const std::size_t out =
      checked_mul(checked_mul(cfg.grid_size, cfg.grid_size),
                  checked_add(checked_mul(cfg.boxes_per_cell, 5), cfg.num_classes));
  const std::size_t layer1 = checked_add(checked_mul(in, hidden), hidden);
  const std::size_t layer2 = checked_add(checked_mul(hidden, out), out);
  return checked_add(layer1, layer2);
}

GridPrediction GridPrediction::zeros_like(const GridPrediction& other) {
  GridPrediction g;
  g.grid_size = other.grid_size;
  g.boxes_per_cell = other.boxes_per_cell;
  g.num_classes = other.num_classes;
  g.values.assign(other.values.size(), 0.0);
  return g;
}

ParamVector init_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t in = cfg.input_pixels();
  const std::size_t hidden = cfg.hidden_width;
  const std::size_t out = cfg.output_size();

  ParamVector params(param_count(cfg), 0.0);
  Rng rng(cfg.seed);

  const double a1 = std::sqrt(6.0 / static_cast<double>(in + hidden));
  for (std::size_t i = 0; i < in * hidden; ++i) params[i] = rng.uniform(-a1, a1);
  // biases b1 stay zero

  const double a2 = std::sqrt(6.0 / static_cast<double>(hidden + out));
  const std::size_t w2_base = in * hidden + hidden;
  for (std::size_t i = 0; i < hidden * out; ++i)
    params[w2_base + i] = rng.uniform(-a2, a2);
  // biases b2 stay zero

  return params;
}

namespace {

struct Layout {
  std::size_t in, hidden, out;
  std::size_t w1, b1, w2, b2;  // offsets
};

Layout layout_of(const ModelConfig& cfg) {
  Layout l;
  l.in = cfg.input_pixels();
  l.hidden = cfg.hidden_width;
  l.out = cfg.output_size();
  l.w1 = 0;
  l.b1 = l.in * l.hidden;
  l.w2 = l.b1 + l.hidden;
  l.b2 = l.w2 + l.hidden * l.out;
  return l;
}

void check_shapes(const ModelConfig& cfg, const ParamVector& params,
                  std::span<const double> image) {
  if (params.size() != param_count(cfg))
    throw std::invalid_argument("params length " + std::to_string(params.size()) +
                                " does not match config (expected " +
                                std::to_string(param_count(cfg)) + ")");
  if (image.size() != static_cast<std::size_t>(cfg.input_pixels()))
    throw std::invalid_argument("image size " + std::to_string(image.size()) +
                                " does not match config input dims");
  for (double p : image)
    if (!std::isfinite(p)) throw std::invalid_argument("non-finite input pixel");
}

// Shared affine pass; writes hidden pre-activations, activations, and output
// pre-activations into the given buffers.
void run_affine(const ModelConfig& cfg, const ParamVector& params,
                std::span<const double> image, std::vector<double>& z1,
                std::vector<double>& a1, std::vector<double>& z2) {
  const Layout l = layout_of(cfg);
  z1.assign(l.hidden, 0.0);
  a1.assign(l.hidden, 0.0);
  z2.assign(l.out, 0.0);

  for (std::size_t h = 0; h < l.hidden; ++h) {
    const double* w = &params[l.w1 + h * l.in];
    double acc = params[l.b1 + h];
    for (std::size_t i = 0; i < l.in; ++i) acc += w[i] * image[i];
    z1[h] = acc;
    a1[h] = acc > 0.0 ? acc : kLeakySlope * acc;
  }
  for (std::size_t o = 0; o < l.out; ++o) {
    const double* w = &params[l.w2 + o * l.hidden];
    double acc = params[l.b2 + o];
    for (std::size_t h = 0; h < l.hidden; ++h) acc += w[h] * a1[h];
    z2[o] = acc;
  }
}

}  // namespace

GridPrediction forward(const ModelConfig& cfg, const ParamVector& params,
                       std::span<const double> image) {
  check_shapes(cfg, params, image);

  std::vector<double> z1, a1, z2;
  run_affine(cfg, params, image, z1, a1, z2);

  GridPrediction pred;
  pred.grid_size = cfg.grid_size;
  pred.boxes_per_cell = cfg.boxes_per_cell;
  pred.num_classes = cfg.num_classes;
  pred.values.resize(z2.size());
  for (std::size_t o = 0; o < z2.size(); ++o) pred.values[o] = sigmoid(z2[o]);
  return pred;
}

ParamVector backward(const ModelConfig& cfg, const ParamVector& params,
                     std::span<const double> image, const GridPrediction& upstream) {
  check_shapes(cfg, params, image);
  const Layout l = layout_of(cfg);
  if (upstream.values.size() != l.out)
    throw std::invalid_argument("upstream gradient size does not match config output");

  std::vector<double> z1, a1, z2;
  run_affine(cfg, params, image, z1, a1, z2);

  ParamVector grad(params.size(), 0.0);
  std::vector<double> dz2(l.out);
  for (std::size_t o = 0; o < l.out; ++o) {
    const double y = sigmoid(z2[o]);
    dz2[o] = upstream.values[o] * y * (1.0 - y);
  }

  std::vector<double> da1(l.hidden, 0.0);
  for (std::size_t o = 0; o < l.out; ++o) {
    const double d = dz2[o];
    double* gw = &grad[l.w2 + o * l.hidden];
    const double* w = &params[l.w2 + o * l.hidden];
    for (std::size_t h = 0; h < l.hidden; ++h) {
      gw[h] = d * a1[h];
      da1[h] += w[h] * d;
    }
    grad[l.b2 + o] = d;
  }

  for (std::size_t h = 0; h < l.hidden; ++h) {
    const double dz1 = da1[h] * (z1[h] > 0.0 ? 1.0 : kLeakySlope);
    double* gw = &grad[l.w1 + h * l.in];
    for (std::size_t i = 0; i < l.in; ++i) gw[i] = dz1 * image[i];
    grad[l.b1 + h] = dz1;
  }

  return grad;
}

}  // namespace feddet
