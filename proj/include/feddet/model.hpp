#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace feddet {

// Geometry of the detector: a flattened image goes through one hidden
// dense layer (leaky-rectifier, slope 0.1) into a dense output layer with
// logistic squashing on every output. The output is read as an S x S grid
// where each cell carries B boxes (x, y, w, h, confidence) plus C class
// scores.
struct ModelConfig {
  int input_height = 64;
  int input_width = 64;
  int grid_size = 4;
  int boxes_per_cell = 1;
  int num_classes = 3;
  int hidden_width = 64;
  std::uint64_t seed = 0;

  int input_pixels() const { return input_height * input_width; }
  int outputs_per_cell() const { return boxes_per_cell * 5 + num_classes; }
  int output_size() const { return grid_size * grid_size * outputs_per_cell(); }

  // Throws std::invalid_argument on nonsensical dimensions and
  // std::overflow_error when the parameter count would overflow.
  void validate() const;
};

// Flat parameter vector theta. Layout:
//   W1 (hidden x input, row-major), b1, W2 (output x hidden, row-major), b2.
using ParamVector = std::vector<double>;

// Total parameter count M for a config. Throws on overflow.
std::size_t param_count(const ModelConfig& cfg);

// Detector output for one image. values is cell-major (row-major cells);
// within a cell: B box tuples (x, y, w, h, conf) then C class scores.
struct GridPrediction {
  int grid_size = 0;
  int boxes_per_cell = 0;
  int num_classes = 0;
  std::vector<double> values;

  int cells() const { return grid_size * grid_size; }
  int cell_stride() const { return boxes_per_cell * 5 + num_classes; }

  std::size_t box_offset(int cell, int box) const {
    return static_cast<std::size_t>(cell) * cell_stride() + box * 5;
  }
  std::size_t class_offset(int cell, int c) const {
    return static_cast<std::size_t>(cell) * cell_stride() + boxes_per_cell * 5 + c;
  }

  double box_x(int cell, int box) const { return values[box_offset(cell, box) + 0]; }
  double box_y(int cell, int box) const { return values[box_offset(cell, box) + 1]; }
  double box_w(int cell, int box) const { return values[box_offset(cell, box) + 2]; }
  double box_h(int cell, int box) const { return values[box_offset(cell, box) + 3]; }
  double box_conf(int cell, int box) const { return values[box_offset(cell, box) + 4]; }
  double class_score(int cell, int c) const { return values[class_offset(cell, c)]; }

  // Zero-filled prediction-shaped container (used for upstream gradients).
  static GridPrediction zeros_like(const GridPrediction& other);
};

// Deterministic initialization: weights uniform in [-a, a] with
// a = sqrt(6 / (fan_in + fan_out)) per layer, biases zero.
ParamVector init_params(const ModelConfig& cfg);

// Pure forward pass. Throws on shape mismatch or non-finite pixels.
GridPrediction forward(const ModelConfig& cfg, const ParamVector& params,
                       std::span<const double> image);

// Gradient of <upstream, forward(params, image)> with respect to params.
// upstream has the shape of a GridPrediction over the same config.
ParamVector backward(const ModelConfig& cfg, const ParamVector& params,
                     std::span<const double> image, const GridPrediction& upstream);

}  // namespace feddet
