#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "feddet/rng.hpp"
#include "feddet/yolo_loss.hpp"

using namespace feddet;

namespace {

GridPrediction make_pred(int S, int B, int C, double fill = 0.5) {
  GridPrediction p;
  p.grid_size = S;
  p.boxes_per_cell = B;
  p.num_classes = C;
  p.values.assign(static_cast<std::size_t>(S) * S * (B * 5 + C), fill);
  return p;
}

// Standalone transcription of the five-term objective, sharing no code with
// the library: its own IoU, its own cell/responsibility arithmetic, its own
// accumulation. Used as the ground-truth oracle for detection_loss.
struct OracleTerms {
  double coord = 0, size = 0, conf_obj = 0, conf_noobj = 0, cls = 0;
  double total() const { return coord + size + conf_obj + conf_noobj + cls; }
};

double oracle_iou(double ax0, double ay0, double ax1, double ay1, double bx0,
                  double by0, double bx1, double by1) {
  const double ix = std::min(ax1, bx1) - std::max(ax0, bx0);
  const double iy = std::min(ay1, by1) - std::max(ay0, by0);
  if (ix <= 0 || iy <= 0) return 0;
  const double inter = ix * iy;
  const double uni = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
  return uni <= 0 ? 0 : inter / uni;
}

OracleTerms oracle_loss(const std::vector<GroundTruthObject>& truth,
                        const GridPrediction& p, const LossWeights& w,
                        ConfidenceTarget mode) {
  const int S = p.grid_size, B = p.boxes_per_cell, C = p.num_classes;
  std::vector<int> responsible(static_cast<std::size_t>(S) * S * B, 0);
  OracleTerms t;

  for (const auto& o : truth) {
    const int col = static_cast<int>(std::floor(o.box.cx * S));
    const int row = static_cast<int>(std::floor(o.box.cy * S));
    const int cell = row * S + col;
    double best = -1;
    int best_b = 0;
    for (int b = 0; b < B; ++b) {
      const double px = (col + p.box_x(cell, b)) / S;
      const double py = (row + p.box_y(cell, b)) / S;
      const double pw = p.box_w(cell, b), ph = p.box_h(cell, b);
      const double v =
          oracle_iou(px - pw / 2, py - ph / 2, px + pw / 2, py + ph / 2,
                     o.box.x_min(), o.box.y_min(), o.box.x_max(), o.box.y_max());
      if (v > best) {
        best = v;
        best_b = b;
      }
    }
    responsible[static_cast<std::size_t>(cell) * B + best_b] = 1;

    const double tx = o.box.cx * S - col;
    const double ty = o.box.cy * S - row;
    const double tconf = mode == ConfidenceTarget::kOne ? 1.0 : best;
    const double dx = tx - p.box_x(cell, best_b);
    const double dy = ty - p.box_y(cell, best_b);
    const double dw = std::sqrt(o.box.w) - std::sqrt(p.box_w(cell, best_b));
    const double dh = std::sqrt(o.box.h) - std::sqrt(p.box_h(cell, best_b));
    const double dc = tconf - p.box_conf(cell, best_b);

    t.coord += w.lambda_coord * (dx * dx + dy * dy);
    t.size += w.lambda_coord * (dw * dw + dh * dh);
    t.conf_obj += w.lambda_conf_obj * dc * dc;
    for (int c = 0; c < C; ++c) {
      const double pc = c == o.class_id ? 1.0 : 0.0;
      const double d = pc - p.class_score(cell, c);
      t.cls += d * d;
    }
  }
  for (int cell = 0; cell < S * S; ++cell)
    for (int b = 0; b < B; ++b)
      if (!responsible[static_cast<std::size_t>(cell) * B + b]) {
        const double c = p.box_conf(cell, b);
        t.conf_noobj += w.lambda_conf_noobj * c * c;
      }
  return t;
}

struct Scene {
  GridPrediction pred;
  std::vector<GroundTruthObject> truth;
};

// Random scene: predictions away from 0/1 so sqrt finite differences behave,
// objects in distinct cells with boxes strictly inside the unit square.
Scene random_scene(Rng& rng) {
  const int S = 1 + static_cast<int>(rng.uniform_index(4));
  const int B = 1 + static_cast<int>(rng.uniform_index(2));
  const int C = 1 + static_cast<int>(rng.uniform_index(3));
  Scene s;
  s.pred = make_pred(S, B, C);
  for (double& v : s.pred.values) v = rng.uniform(0.05, 0.95);

  const int n_obj = static_cast<int>(rng.uniform_index(
      static_cast<std::uint64_t>(std::min(3, S * S) + 1)));
  std::set<int> used;
  while (static_cast<int>(s.truth.size()) < n_obj) {
    const int col = static_cast<int>(rng.uniform_index(S));
    const int row = static_cast<int>(rng.uniform_index(S));
    if (!used.insert(row * S + col).second) continue;
    GroundTruthObject o;
    o.class_id = static_cast<int>(rng.uniform_index(C));
    o.box.cx = (col + rng.uniform(0.1, 0.9)) / S;
    o.box.cy = (row + rng.uniform(0.1, 0.9)) / S;
    o.box.w = rng.uniform(0.02, 2.0 * std::min(o.box.cx, 1.0 - o.box.cx));
    o.box.h = rng.uniform(0.02, 2.0 * std::min(o.box.cy, 1.0 - o.box.cy));
    s.truth.push_back(o);
  }
  return s;
}

double breakdown_term_gap(const LossBreakdown& lb, const OracleTerms& o) {
  double gap = std::abs(lb.coord - o.coord);
  gap = std::max(gap, std::abs(lb.size - o.size));
  gap = std::max(gap, std::abs(lb.conf_obj - o.conf_obj));
  gap = std::max(gap, std::abs(lb.conf_noobj - o.conf_noobj));
  gap = std::max(gap, std::abs(lb.classification - o.cls));
  return std::max(gap, std::abs(lb.total - o.total()));
}

}  // namespace

TEST_CASE("owning cell follows floor arithmetic") {
  GridPrediction p = make_pred(2, 1, 1);
  GroundTruthObject o;
  o.class_id = 0;
  o.box = {0.9, 0.1, 0.1, 0.1};
  const TargetAssignment a = assign_targets({o}, p);
  REQUIRE(a.objects.size() == 1);
  CHECK(a.objects[0].cell == 1);  // row 0, col 1
  CHECK(a.objects[0].box == 0);   // B=1: only candidate
  CHECK(a.objects[0].x == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(a.objects[0].y == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("empty truth flags every pair as no-object") {
  const GridPrediction p = make_pred(3, 2, 2);
  const TargetAssignment a = assign_targets({}, p);
  CHECK(a.objects.empty());
  for (int cell = 0; cell < 9; ++cell)
    for (int b = 0; b < 2; ++b) CHECK_FALSE(a.is_obj(cell, b));
}

TEST_CASE("responsibility ties break to the lowest box index") {
  GridPrediction p = make_pred(1, 3, 1);
  // Give all three boxes identical geometry: identical IoUs.
  for (int b = 0; b < 3; ++b) {
    p.values[p.box_offset(0, b) + 0] = 0.5;
    p.values[p.box_offset(0, b) + 1] = 0.5;
    p.values[p.box_offset(0, b) + 2] = 0.4;
    p.values[p.box_offset(0, b) + 3] = 0.4;
  }
  GroundTruthObject o;
  o.box = {0.5, 0.5, 0.3, 0.3};
  const TargetAssignment a = assign_targets({o}, p);
  REQUIRE(a.objects.size() == 1);
  CHECK(a.objects[0].box == 0);
}

TEST_CASE("responsible box is the IoU argmax") {
  GridPrediction p = make_pred(1, 2, 1);
  // Box 0 far away, box 1 on target.
  p.values[p.box_offset(0, 0) + 0] = 0.1;
  p.values[p.box_offset(0, 0) + 1] = 0.1;
  p.values[p.box_offset(0, 0) + 2] = 0.1;
  p.values[p.box_offset(0, 0) + 3] = 0.1;
  p.values[p.box_offset(0, 1) + 0] = 0.6;
  p.values[p.box_offset(0, 1) + 1] = 0.6;
  p.values[p.box_offset(0, 1) + 2] = 0.3;
  p.values[p.box_offset(0, 1) + 3] = 0.3;
  GroundTruthObject o;
  o.box = {0.6, 0.6, 0.3, 0.3};
  const TargetAssignment a = assign_targets({o}, p);
  REQUIRE(a.objects.size() == 1);
  CHECK(a.objects[0].box == 1);
  CHECK(a.objects[0].conf == doctest::Approx(1.0));
  CHECK(a.is_obj(0, 1));
  CHECK_FALSE(a.is_obj(0, 0));
}

TEST_CASE("invalid truth is rejected") {
  const GridPrediction p = make_pred(2, 1, 1);
  GroundTruthObject out_of_unit;
  out_of_unit.box = {0.5, 0.5, 1.2, 0.2};
  CHECK_THROWS_AS(assign_targets({out_of_unit}, p), std::invalid_argument);

  GroundTruthObject a, b;  // both centers land in cell (0,0)
  a.box = {0.2, 0.2, 0.1, 0.1};
  b.box = {0.3, 0.3, 0.1, 0.1};
  CHECK_THROWS_AS(assign_targets({a, b}, p), std::invalid_argument);
}

TEST_CASE("perfect prediction has zero loss and zero gradient") {
  GridPrediction p = make_pred(2, 1, 2, 0.0);
  GroundTruthObject o;
  o.class_id = 1;
  o.box = {0.25, 0.25, 0.25, 0.25};
  // Cell (0,0): center offsets (0.5, 0.5), sizes as truth.
  p.values[p.box_offset(0, 0) + 0] = 0.5;
  p.values[p.box_offset(0, 0) + 1] = 0.5;
  p.values[p.box_offset(0, 0) + 2] = 0.25;
  p.values[p.box_offset(0, 0) + 3] = 0.25;
  p.values[p.box_offset(0, 0) + 4] = 1.0;  // IoU of an exact match
  p.values[p.class_offset(0, 1)] = 1.0;

  const TargetAssignment a = assign_targets({o}, p, ConfidenceTarget::kIoU);
  REQUIRE(a.objects.size() == 1);
  CHECK(a.objects[0].conf == doctest::Approx(1.0).epsilon(1e-12));

  const LossBreakdown lb = detection_loss(p, a, LossWeights{});
  CHECK(lb.total == doctest::Approx(0.0).epsilon(1e-12));

  const GridPrediction g = detection_loss_grad(p, a, LossWeights{});
  for (double v : g.values) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("coordinate term: hand-evaluated 0.25") {
  GridPrediction p = make_pred(1, 1, 1, 0.0);
  GroundTruthObject o;
  o.class_id = 0;
  o.box = {0.5, 0.5, 0.4, 0.4};
  p.values[p.box_offset(0, 0) + 0] = 0.4;  // x error 0.1
  p.values[p.box_offset(0, 0) + 1] = 0.7;  // y error 0.2
  p.values[p.box_offset(0, 0) + 2] = 0.4;
  p.values[p.box_offset(0, 0) + 3] = 0.4;
  p.values[p.box_offset(0, 0) + 4] = 1.0;
  p.values[p.class_offset(0, 0)] = 1.0;

  const TargetAssignment a = assign_targets({o}, p, ConfidenceTarget::kOne);
  LossWeights w;
  w.lambda_coord = 5.0;
  const LossBreakdown lb = detection_loss(p, a, w);
  CHECK(std::abs(lb.coord - 0.25) < 1e-12);
  CHECK(lb.size == 0.0);
  CHECK(lb.conf_obj == 0.0);
  CHECK(lb.conf_noobj == 0.0);
  CHECK(lb.classification == 0.0);
  CHECK(std::abs(lb.total - 0.25) < 1e-12);
}

TEST_CASE("no-object confidence term: hand-evaluated 0.125") {
  const GridPrediction p = make_pred(1, 1, 2, 0.5);
  const TargetAssignment a = assign_targets({}, p);
  LossWeights w;
  w.lambda_conf_noobj = 0.5;
  const LossBreakdown lb = detection_loss(p, a, w);
  CHECK(std::abs(lb.conf_noobj - 0.125) < 1e-12);
  CHECK(std::abs(lb.total - 0.125) < 1e-12);
  CHECK(lb.coord == 0.0);
  CHECK(lb.size == 0.0);
  CHECK(lb.conf_obj == 0.0);
  CHECK(lb.classification == 0.0);
}

TEST_CASE("agrees with the standalone scalar oracle") {
  Rng rng(20240817);
  for (int t = 0; t < 1000; ++t) {
    const Scene s = random_scene(rng);
    LossWeights w;
    w.lambda_coord = rng.uniform(0.0, 8.0);
    w.lambda_conf_obj = rng.uniform(0.0, 2.0);
    w.lambda_conf_noobj = rng.uniform(0.0, 2.0);
    const ConfidenceTarget mode =
        t % 2 == 0 ? ConfidenceTarget::kIoU : ConfidenceTarget::kOne;

    const TargetAssignment a = assign_targets(s.truth, s.pred, mode);
    const LossBreakdown lb = detection_loss(s.pred, a, w);
    const OracleTerms oracle = oracle_loss(s.truth, s.pred, w, mode);
    INFO("instance ", t);
    CHECK(breakdown_term_gap(lb, oracle) < 1e-9);
  }
}

TEST_CASE("terms are nonnegative and total is their exact ordered sum") {
  Rng rng(55);
  for (int t = 0; t < 200; ++t) {
    const Scene s = random_scene(rng);
    const TargetAssignment a = assign_targets(s.truth, s.pred);
    const LossBreakdown lb = detection_loss(s.pred, a, LossWeights{});
    CHECK(lb.coord >= 0.0);
    CHECK(lb.size >= 0.0);
    CHECK(lb.conf_obj >= 0.0);
    CHECK(lb.conf_noobj >= 0.0);
    CHECK(lb.classification >= 0.0);
    CHECK(lb.total ==
          lb.coord + lb.size + lb.conf_obj + lb.conf_noobj + lb.classification);
  }
}

TEST_CASE("coordinate penalty grows with the x residual") {
  GridPrediction p = make_pred(1, 1, 1);
  GroundTruthObject o;
  o.box = {0.5, 0.5, 0.4, 0.4};
  const TargetAssignment a = assign_targets({o}, p);
  double prev = -1.0;
  for (double xhat : {0.5, 0.45, 0.4, 0.3, 0.1}) {
    p.values[p.box_offset(0, 0) + 0] = xhat;
    const LossBreakdown lb = detection_loss(p, a, LossWeights{});
    CHECK(lb.coord > prev);
    prev = lb.coord;
  }
}

TEST_CASE("gradient matches finite differences with a frozen assignment") {
  Rng rng(777);
  double worst = 0.0;
  for (int t = 0; t < 120; ++t) {
    Scene s = random_scene(rng);
    LossWeights w;
    w.lambda_coord = rng.uniform(0.5, 8.0);
    w.lambda_conf_obj = rng.uniform(0.1, 2.0);
    w.lambda_conf_noobj = rng.uniform(0.1, 2.0);
    const TargetAssignment a = assign_targets(
        s.truth, s.pred, t % 2 == 0 ? ConfidenceTarget::kIoU : ConfidenceTarget::kOne);
    const GridPrediction g = detection_loss_grad(s.pred, a, w);

    const double step = 1e-5;
    for (std::size_t i = 0; i < s.pred.values.size(); ++i) {
      const double keep = s.pred.values[i];
      s.pred.values[i] = keep + step;
      const double hi = detection_loss(s.pred, a, w).total;
      s.pred.values[i] = keep - step;
      const double lo = detection_loss(s.pred, a, w).total;
      s.pred.values[i] = keep;
      const double numeric = (hi - lo) / (2.0 * step);
      const double denom =
          std::max({std::abs(numeric), std::abs(g.values[i]), 1e-8});
      worst = std::max(worst, std::abs(numeric - g.values[i]) / denom);
    }
  }
  INFO("worst relative error ", worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("gradient is homogeneous in the weights") {
  Rng rng(31);
  const Scene s = random_scene(rng);
  const TargetAssignment a = assign_targets(s.truth, s.pred);
  LossWeights w;
  const GridPrediction g1 = detection_loss_grad(s.pred, a, w);
  w.lambda_coord *= 3.0;
  w.lambda_conf_obj *= 3.0;
  w.lambda_conf_noobj *= 3.0;
  const GridPrediction g3 = detection_loss_grad(s.pred, a, w);
  // Classification carries no lambda, so compare a no-class scene exactly.
  for (int cell = 0; cell < s.pred.cells(); ++cell)
    for (int b = 0; b < s.pred.boxes_per_cell; ++b)
      for (int k = 0; k < 5; ++k) {
        const std::size_t idx = s.pred.box_offset(cell, b) + k;
        CHECK(g3.values[idx] == doctest::Approx(3.0 * g1.values[idx]).epsilon(1e-12));
      }
}

TEST_CASE("equal confidence weights recover the single-weight composite") {
  Rng rng(67);
  for (int t = 0; t < 50; ++t) {
    const Scene s = random_scene(rng);
    const double lam = rng.uniform(0.1, 2.0);
    LossWeights w;
    w.lambda_conf_obj = lam;
    w.lambda_conf_noobj = lam;
    const TargetAssignment a = assign_targets(s.truth, s.pred);
    const LossBreakdown lb = detection_loss(s.pred, a, w);
    // Single-lambda composite: lam * sum over all pairs of the squared
    // confidence residual, with target 0 on no-object pairs.
    double composite = 0.0;
    for (const auto& o : a.objects) {
      const double d = o.conf - s.pred.box_conf(o.cell, o.box);
      composite += lam * d * d;
    }
    for (int cell = 0; cell < s.pred.cells(); ++cell)
      for (int b = 0; b < s.pred.boxes_per_cell; ++b)
        if (!a.is_obj(cell, b)) {
          const double c = s.pred.box_conf(cell, b);
          composite += lam * c * c;
        }
    CHECK(lb.conf_obj + lb.conf_noobj == doctest::Approx(composite).epsilon(1e-12));
  }
}

TEST_CASE("weight validation") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.lambda_coord = -1.0;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  w = LossWeights{};
  w.lambda_conf_noobj = std::nan("");
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
}
