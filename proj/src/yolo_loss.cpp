#include "feddet/yolo_loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace feddet {

void LossWeights::validate() const {
  for (double w : {lambda_coord, lambda_conf_obj, lambda_conf_noobj})
    if (!(std::isfinite(w) && w >= 0.0))
      throw std::invalid_argument("loss weights must be finite and >= 0");
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  coord += o.coord;
  size += o.size;
  conf_obj += o.conf_obj;
  conf_noobj += o.conf_noobj;
  classification += o.classification;
  total += o.total;
  return *this;
}

LossBreakdown& LossBreakdown::operator*=(double s) {
  coord *= s;
  size *= s;
  conf_obj *= s;
  conf_noobj *= s;
  classification *= s;
  total *= s;
  return *this;
}

namespace {

// Predicted box of a (cell, box) slot in absolute normalized coordinates.
BBox decode_slot(const GridPrediction& p, int cell, int box) {
  const int s = p.grid_size;
  const int row = cell / s;
  const int col = cell % s;
  BBox b;
  b.cx = (col + p.box_x(cell, box)) / s;
  b.cy = (row + p.box_y(cell, box)) / s;
  b.w = p.box_w(cell, box);
  b.h = p.box_h(cell, box);
  return b;
}

}  // namespace

TargetAssignment assign_targets(const std::vector<GroundTruthObject>& truth,
                                const GridPrediction& prediction,
                                ConfidenceTarget mode) {
  const int s = prediction.grid_size;
  const int b = prediction.boxes_per_cell;

  TargetAssignment out;
  out.grid_size = s;
  out.boxes_per_cell = b;
  out.num_classes = prediction.num_classes;
  out.obj_mask.assign(static_cast<std::size_t>(s) * s * b, 0);

  std::vector<int> cell_owner(static_cast<std::size_t>(s) * s, -1);

  for (std::size_t t = 0; t < truth.size(); ++t) {
    const GroundTruthObject& obj = truth[t];
    if (!obj.box.inside_unit())
      throw std::invalid_argument("ground truth box " + std::to_string(t) +
                                  " outside the unit square");
    if (obj.class_id < 0 || obj.class_id >= prediction.num_classes)
      throw std::invalid_argument("ground truth class out of range");

    const int col = static_cast<int>(std::floor(obj.box.cx * s));
    const int row = static_cast<int>(std::floor(obj.box.cy * s));
    const int cell = row * s + col;
    if (cell_owner[cell] >= 0)
      throw std::invalid_argument("two objects share grid cell " + std::to_string(cell));
    cell_owner[cell] = static_cast<int>(t);

    // Responsible predictor: highest IoU with the truth, ties to lowest index.
    int best_box = 0;
    double best_iou = -1.0;
    for (int j = 0; j < b; ++j) {
      const double v = iou(decode_slot(prediction, cell, j), obj.box);
      if (v > best_iou) {
        best_iou = v;
        best_box = j;
      }
    }

    TargetAssignment::ObjectTarget tgt;
    tgt.cell = cell;
    tgt.box = best_box;
    tgt.x = obj.box.cx * s - col;
    tgt.y = obj.box.cy * s - row;
    tgt.w = obj.box.w;
    tgt.h = obj.box.h;
    tgt.conf = mode == ConfidenceTarget::kIoU ? best_iou : 1.0;
    tgt.class_id = obj.class_id;
    out.objects.push_back(tgt);
    out.obj_mask[static_cast<std::size_t>(cell) * b + best_box] = 1;
  }

  std::sort(out.objects.begin(), out.objects.end(),
            [](const auto& a, const auto& c) { return a.cell < c.cell; });
  return out;
}

namespace {

void check_geometry(const GridPrediction& p, const TargetAssignment& a) {
  if (p.grid_size != a.grid_size || p.boxes_per_cell != a.boxes_per_cell ||
      p.num_classes != a.num_classes)
    throw std::invalid_argument("assignment geometry does not match prediction");
}

}  // namespace

LossBreakdown detection_loss(const GridPrediction& prediction,
                             const TargetAssignment& assignment,
                             const LossWeights& weights) {
  check_geometry(prediction, assignment);
  weights.validate();

  LossBreakdown lb;

  // Coordinate and size terms over responsible pairs, ascending cell order.
  for (const auto& t : assignment.objects) {
    if (t.w < 0.0 || t.h < 0.0)
      throw std::invalid_argument("negative size target (square root undefined)");
    const double dx = t.x - prediction.box_x(t.cell, t.box);
    const double dy = t.y - prediction.box_y(t.cell, t.box);
    lb.coord += weights.lambda_coord * (dx * dx + dy * dy);

    const double dw = std::sqrt(t.w) - std::sqrt(prediction.box_w(t.cell, t.box));
    const double dh = std::sqrt(t.h) - std::sqrt(prediction.box_h(t.cell, t.box));
    lb.size += weights.lambda_coord * (dw * dw + dh * dh);

    const double dc = t.conf - prediction.box_conf(t.cell, t.box);
    lb.conf_obj += weights.lambda_conf_obj * dc * dc;
  }

  // No-object confidence over the complement, cell then box order.
  for (int cell = 0; cell < assignment.grid_size * assignment.grid_size; ++cell) {
    for (int box = 0; box < assignment.boxes_per_cell; ++box) {
      if (assignment.is_obj(cell, box)) continue;
      const double c = prediction.box_conf(cell, box);
      lb.conf_noobj += weights.lambda_conf_noobj * c * c;
    }
  }

  // Classification over object cells, ascending cell then class order.
  for (const auto& t : assignment.objects) {
    for (int c = 0; c < assignment.num_classes; ++c) {
      const double target = c == t.class_id ? 1.0 : 0.0;
      const double d = target - prediction.class_score(t.cell, c);
      lb.classification += d * d;
    }
  }

  lb.total = lb.coord + lb.size + lb.conf_obj + lb.conf_noobj + lb.classification;
  return lb;
}

GridPrediction detection_loss_grad(const GridPrediction& prediction,
                                   const TargetAssignment& assignment,
                                   const LossWeights& weights) {
  check_geometry(prediction, assignment);
  weights.validate();

  GridPrediction grad = GridPrediction::zeros_like(prediction);

  for (const auto& t : assignment.objects) {
    if (t.w < 0.0 || t.h < 0.0)
      throw std::invalid_argument("negative size target (square root undefined)");
    const std::size_t off = prediction.box_offset(t.cell, t.box);

    grad.values[off + 0] =
        2.0 * weights.lambda_coord * (prediction.box_x(t.cell, t.box) - t.x);
    grad.values[off + 1] =
        2.0 * weights.lambda_coord * (prediction.box_y(t.cell, t.box) - t.y);

    // d/dw (sqrt(w_t) - sqrt(w))^2 = (sqrt(w) - sqrt(w_t)) / sqrt(w)
    const double pw = prediction.box_w(t.cell, t.box);
    const double ph = prediction.box_h(t.cell, t.box);
    grad.values[off + 2] =
        weights.lambda_coord * (std::sqrt(pw) - std::sqrt(t.w)) / std::sqrt(pw);
    grad.values[off + 3] =
        weights.lambda_coord * (std::sqrt(ph) - std::sqrt(t.h)) / std::sqrt(ph);

    grad.values[off + 4] = 2.0 * weights.lambda_conf_obj *
                           (prediction.box_conf(t.cell, t.box) - t.conf);

    for (int c = 0; c < assignment.num_classes; ++c) {
      const double target = c == t.class_id ? 1.0 : 0.0;
      grad.values[prediction.class_offset(t.cell, c)] =
          2.0 * (prediction.class_score(t.cell, c) - target);
    }
  }

  for (int cell = 0; cell < assignment.grid_size * assignment.grid_size; ++cell) {
    for (int box = 0; box < assignment.boxes_per_cell; ++box) {
      if (assignment.is_obj(cell, box)) continue;
      grad.values[prediction.box_offset(cell, box) + 4] =
          2.0 * weights.lambda_conf_noobj * prediction.box_conf(cell, box);
    }
  }

  return grad;
}

}  // namespace feddet
