#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "feddet/box.hpp"
#include "feddet/model.hpp"
#include "feddet/sample.hpp"

namespace feddet {

struct Detection {
  int class_id = 0;
  double score = 0.0;
  BBox box;
};

// Everything evaluation needs from one image.
struct ImageEval {
  std::vector<Detection> detections;  // descending score
  std::vector<GroundTruthObject> truths;
};

// Turns a grid prediction into detections: per (cell, box) the score is
// confidence times the best class probability (class ties go to the lowest
// id), the center is unnormalized to absolute coordinates, boxes below
// conf_threshold are dropped, per-class greedy NMS suppresses overlaps
// with IoU > nms_iou, and the survivors come back sorted by descending
// score with ties broken by cell index.
std::vector<Detection> decode(const GridPrediction& prediction, double conf_threshold,
                              double nms_iou);

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (detection, truth)
  std::vector<std::size_t> unmatched_detections;
  std::vector<std::size_t> unmatched_truths;
};

// Greedy matching for P/R/AP: each detection, in ranked order, takes the
// highest-IoU still-unmatched truth of its own class with IoU >= threshold.
// Detections must arrive sorted by descending score.
MatchResult match(const std::vector<Detection>& detections,
                  const std::vector<GroundTruthObject>& truths, double iou_threshold);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// 0/0 counts as 0 for all three values.
Prf precision_recall_f1(std::size_t tp, std::size_t fp, std::size_t fn);

// One metric swept over thresholds: per-class columns plus an aggregate.
struct CurveSeries {
  std::vector<double> thresholds;
  std::vector<std::vector<double>> per_class;  // [class][threshold index]
  std::vector<double> all;
};

struct CurveBundle {
  CurveSeries precision;  // vs confidence threshold, all = micro over pooled counts
  CurveSeries recall;
  CurveSeries f1;
  CurveSeries pr;  // precision envelope vs recall grid, all = class mean
};

// Sweeps confidence thresholds 0.00..1.00 in steps of 0.01, re-matching at
// each, and builds the ranked-list PR curve.
CurveBundle curves(const std::vector<ImageEval>& evals, double iou_threshold,
                   int num_classes);

// AP for one class from its ranked (score, is_true_positive) flags.
// PR points are taken at distinct-score boundaries and integrated under
// the precision envelope; eleven_point switches to the mean of envelope
// precision at recalls {0.0, 0.1, ..., 1.0}. No truths -> nullopt.
std::optional<double> average_precision(std::vector<std::pair<double, bool>> ranked,
                                        std::size_t num_truths,
                                        bool eleven_point = false);

// Mean AP over classes with at least one truth, at a single IoU threshold.
// Returns 0 when no class has truths.
double map_at(const std::vector<ImageEval>& evals, int num_classes,
              double iou_threshold, bool eleven_point = false);

struct ClassAPRow {
  std::string name;
  std::size_t images = 0;  // images containing this class
  double box_p = 0.0;
  double recall = 0.0;
  double map50 = 0.0;
  double map50_95 = 0.0;
  bool defined = true;  // false when the class has zero truths
};

struct MapTable {
  std::vector<ClassAPRow> rows;
  ClassAPRow all;  // unweighted mean over defined classes
  double best_f1_threshold = 0.0;
};

// Table-shaped summary: per class Box(P) and R at the confidence threshold
// maximizing all-class F1, AP at IoU 0.5, and the mean AP over IoU
// 0.50:0.05:0.95.
MapTable map_table(const std::vector<ImageEval>& evals,
                   const std::vector<std::string>& class_names,
                   bool eleven_point = false);

// (C+1) x (C+1); the last row/column is the background bucket for
// unmatched truths and detections. Row = truth class, column = predicted.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::size_t> counts;  // (C+1)^2, row-major

  std::size_t& at(int gt, int pred) {
    return counts[static_cast<std::size_t>(gt) * (num_classes + 1) + pred];
  }
  std::size_t at(int gt, int pred) const {
    return counts[static_cast<std::size_t>(gt) * (num_classes + 1) + pred];
  }
  std::size_t total() const;
  double accuracy() const;  // trace / total, 0 when empty
};

// Class-agnostic greedy matching (highest IoU first) of detections at or
// above conf_threshold, so misclassified boxes land off the diagonal.
ConfusionMatrix confusion(const std::vector<ImageEval>& evals, int num_classes,
                          double iou_threshold = 0.45, double conf_threshold = 0.25);

// CSV / text emission. Curve CSVs use the header
// `threshold,class_0,...,class_{C-1},all`.
void write_curve_csv(const std::filesystem::path& path, const CurveSeries& series);
void write_ap_table_csv(const std::filesystem::path& path, const MapTable& table);
std::string format_ap_table(const MapTable& table);
void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& m,
                         const std::vector<std::string>& class_names);

}  // namespace feddet
