#pragma once

#include <cstdint>
#include <vector>

#include "feddet/model.hpp"
#include "feddet/sample.hpp"

namespace feddet {

// Confidence target for responsible boxes: IoU of the predicted box with
// the truth (recomputed each pass), or a constant 1.
enum class ConfidenceTarget { kIoU, kOne };

struct LossWeights {
  double lambda_coord = 5.0;
  double lambda_conf_obj = 1.0;
  double lambda_conf_noobj = 0.5;

  void validate() const;  // throws on negative or non-finite weights
};

// Per-image assignment of ground truth to predictor slots. For each object:
// the owning cell (the cell containing the object's center), the responsible
// box within that cell (highest IoU with the truth, ties to the lowest box
// index), the regression targets, and the confidence target. obj_mask marks
// responsible (cell, box) pairs; every other pair is a no-object pair.
struct TargetAssignment {
  struct ObjectTarget {
    int cell = 0;
    int box = 0;
    double x = 0.0;  // center offset within the cell, in [0,1]
    double y = 0.0;
    double w = 0.0;  // fractions of the image
    double h = 0.0;
    double conf = 0.0;
    int class_id = 0;
  };

  int grid_size = 0;
  int boxes_per_cell = 0;
  int num_classes = 0;
  std::vector<ObjectTarget> objects;   // ascending cell index
  std::vector<std::uint8_t> obj_mask;  // S*S*B entries

  bool is_obj(int cell, int box) const {
    return obj_mask[static_cast<std::size_t>(cell) * boxes_per_cell + box] != 0;
  }
};

// Five-term squared-error breakdown. total is the sum of the five terms in
// the fixed order below, so it is bit-reproducible.
struct LossBreakdown {
  double coord = 0.0;
  double size = 0.0;
  double conf_obj = 0.0;
  double conf_noobj = 0.0;
  double classification = 0.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o);
  LossBreakdown& operator*=(double s);
};

// Builds the assignment for one image. Throws if a box violates the unit
// invariants or two objects share an owning cell.
TargetAssignment assign_targets(const std::vector<GroundTruthObject>& truth,
                                const GridPrediction& prediction,
                                ConfidenceTarget mode = ConfidenceTarget::kIoU);

// Evaluates the five loss terms against a fixed assignment. Accumulation
// order: ascending cell, then box, then class.
LossBreakdown detection_loss(const GridPrediction& prediction,
                             const TargetAssignment& assignment,
                             const LossWeights& weights);

// Exact gradient of detection_loss(...).total with respect to the
// prediction, with the assignment held fixed (targets are constants).
GridPrediction detection_loss_grad(const GridPrediction& prediction,
                                   const TargetAssignment& assignment,
                                   const LossWeights& weights);

}  // namespace feddet
