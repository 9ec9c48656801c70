#include "feddet/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace feddet {

std::vector<Detection> decode(const GridPrediction& p, double conf_threshold,
                              double nms_iou) {
  if (!(conf_threshold >= 0.0 && conf_threshold <= 1.0))
    throw std::invalid_argument("conf_threshold must lie in [0,1]");
  const int S = p.grid_size;

  std::vector<Detection> cand;
  for (int cell = 0; cell < p.cells(); ++cell) {
    const int row = cell / S;
    const int col = cell % S;
    for (int b = 0; b < p.boxes_per_cell; ++b) {
      int best_c = 0;
      double best_p = p.class_score(cell, 0);
      for (int c = 1; c < p.num_classes; ++c)
        if (p.class_score(cell, c) > best_p) {  // ties keep the lowest id
          best_p = p.class_score(cell, c);
          best_c = c;
        }
      const double score = p.box_conf(cell, b) * best_p;
      if (score < conf_threshold) continue;
      Detection d;
      d.class_id = best_c;
      d.score = score;
      d.box.cx = (col + p.box_x(cell, b)) / S;
      d.box.cy = (row + p.box_y(cell, b)) / S;
      d.box.w = p.box_w(cell, b);
      d.box.h = p.box_h(cell, b);
      cand.push_back(d);
    }
  }

  // Candidates were built in ascending (cell, box) order, so a stable sort
  // by score leaves ties ordered by cell index.
  std::stable_sort(cand.begin(), cand.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });

  std::vector<Detection> kept;
  for (const Detection& d : cand) {
    bool suppressed = false;
    for (const Detection& k : kept)
      if (k.class_id == d.class_id && iou(k.box, d.box) > nms_iou) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

MatchResult match(const std::vector<Detection>& detections,
                  const std::vector<GroundTruthObject>& truths, double iou_threshold) {
  for (std::size_t i = 1; i < detections.size(); ++i)
    if (detections[i - 1].score < detections[i].score)
      throw std::invalid_argument("match: detections must be sorted by descending score");

  MatchResult out;
  std::vector<bool> truth_used(truths.size(), false);
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const Detection& d = detections[i];
    std::size_t best = truths.size();
    double best_iou = 0.0;
    for (std::size_t j = 0; j < truths.size(); ++j) {
      if (truth_used[j] || truths[j].class_id != d.class_id) continue;
      const double v = iou(d.box, truths[j].box);
      if (v >= iou_threshold && v > best_iou) {  // ties keep the lowest truth index
        best_iou = v;
        best = j;
      }
    }
    if (best < truths.size()) {
      truth_used[best] = true;
      out.pairs.emplace_back(i, best);
    } else {
      out.unmatched_detections.push_back(i);
    }
  }
  for (std::size_t j = 0; j < truths.size(); ++j)
    if (!truth_used[j]) out.unmatched_truths.push_back(j);
  return out;
}

Prf precision_recall_f1(std::size_t tp, std::size_t fp, std::size_t fn) {
  Prf out;
  const double tpd = static_cast<double>(tp);
  if (tp + fp > 0) out.precision = tpd / static_cast<double>(tp + fp);
  if (tp + fn > 0) out.recall = tpd / static_cast<double>(tp + fn);
  if (out.precision + out.recall > 0.0)
    out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  return out;
}

namespace {

constexpr int kSweepSteps = 101;  // thresholds 0.00 .. 1.00 step 0.01

double sweep_threshold(int t) { return static_cast<double>(t) / 100.0; }

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

// counts[t][c] over the whole eval set at confidence threshold t/100.
std::vector<std::vector<Counts>> sweep_counts(const std::vector<ImageEval>& evals,
                                              double iou_threshold, int num_classes) {
  std::vector<std::vector<Counts>> counts(kSweepSteps,
                                          std::vector<Counts>(num_classes));
  for (const ImageEval& ev : evals) {
    std::vector<std::size_t> truths_per_class(num_classes, 0);
    for (const auto& t : ev.truths) ++truths_per_class[t.class_id];

    for (int t = 0; t < kSweepSteps; ++t) {
      const double thr = sweep_threshold(t);
      std::vector<Detection> kept;
      for (const Detection& d : ev.detections)
        if (d.score >= thr) kept.push_back(d);
      const MatchResult m = match(kept, ev.truths, iou_threshold);

      std::vector<std::size_t> tp_per_class(num_classes, 0);
      for (const auto& [di, tj] : m.pairs) ++tp_per_class[kept[di].class_id];
      for (std::size_t di : m.unmatched_detections) ++counts[t][kept[di].class_id].fp;
      for (int c = 0; c < num_classes; ++c) {
        counts[t][c].tp += tp_per_class[c];
        counts[t][c].fn += truths_per_class[c] - tp_per_class[c];
      }
    }
  }
  return counts;
}

struct ClassFlags {
  std::vector<std::pair<double, bool>> ranked;  // (score, matched) per detection
  std::size_t truths = 0;
  std::size_t images = 0;  // images containing this class
};

std::vector<ClassFlags> collect_flags(const std::vector<ImageEval>& evals,
                                      double iou_threshold, int num_classes) {
  std::vector<ClassFlags> flags(num_classes);
  for (const ImageEval& ev : evals) {
    std::vector<bool> seen(num_classes, false);
    for (const auto& t : ev.truths) {
      ++flags[t.class_id].truths;
      if (!seen[t.class_id]) {
        seen[t.class_id] = true;
        ++flags[t.class_id].images;
      }
    }
    const MatchResult m = match(ev.detections, ev.truths, iou_threshold);
    std::vector<bool> is_tp(ev.detections.size(), false);
    for (const auto& [di, tj] : m.pairs) is_tp[di] = true;
    for (std::size_t i = 0; i < ev.detections.size(); ++i)
      flags[ev.detections[i].class_id].ranked.emplace_back(ev.detections[i].score,
                                                           is_tp[i]);
  }
  return flags;
}

// PR points at distinct-score boundaries of a ranked flag list.
std::vector<std::pair<double, double>> pr_points(
    std::vector<std::pair<double, bool>> ranked, std::size_t num_truths) {
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::pair<double, double>> points;  // (recall, precision)
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < ranked.size();) {
    std::size_t j = i;
    while (j < ranked.size() && ranked[j].first == ranked[i].first) {
      if (ranked[j].second)
        ++tp;
      else
        ++fp;
      ++j;
    }
    points.emplace_back(static_cast<double>(tp) / static_cast<double>(num_truths),
                        static_cast<double>(tp) / static_cast<double>(tp + fp));
    i = j;
  }
  return points;
}

// Max precision among points whose recall is >= r; 0 when none qualifies.
double envelope_at(const std::vector<std::pair<double, double>>& points, double r) {
  double best = 0.0;
  for (const auto& [recall, precision] : points)
    if (recall >= r) best = std::max(best, precision);
  return best;
}

}  // namespace

std::optional<double> average_precision(std::vector<std::pair<double, bool>> ranked,
                                        std::size_t num_truths, bool eleven_point) {
  if (num_truths == 0) return std::nullopt;
  const auto points = pr_points(std::move(ranked), num_truths);

  if (eleven_point) {
    double sum = 0.0;
    for (int k = 0; k <= 10; ++k)
      sum += envelope_at(points, static_cast<double>(k) / 10.0);
    return sum / 11.0;
  }

  double ap = 0.0, max_p = 0.0;
  for (std::size_t i = points.size(); i-- > 0;) {
    max_p = std::max(max_p, points[i].second);
    const double r_prev = i > 0 ? points[i - 1].first : 0.0;
    ap += (points[i].first - r_prev) * max_p;
  }
  return ap;
}

CurveBundle curves(const std::vector<ImageEval>& evals, double iou_threshold,
                   int num_classes) {
  if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
  CurveBundle out;
  for (CurveSeries* s : {&out.precision, &out.recall, &out.f1, &out.pr}) {
    s->thresholds.resize(kSweepSteps);
    for (int t = 0; t < kSweepSteps; ++t) s->thresholds[t] = sweep_threshold(t);
    s->per_class.assign(num_classes, std::vector<double>(kSweepSteps, 0.0));
    s->all.assign(kSweepSteps, 0.0);
  }

  const auto counts = sweep_counts(evals, iou_threshold, num_classes);
  for (int t = 0; t < kSweepSteps; ++t) {
    Counts pooled;
    for (int c = 0; c < num_classes; ++c) {
      const Counts& k = counts[t][c];
      const Prf prf = precision_recall_f1(k.tp, k.fp, k.fn);
      out.precision.per_class[c][t] = prf.precision;
      out.recall.per_class[c][t] = prf.recall;
      out.f1.per_class[c][t] = prf.f1;
      pooled.tp += k.tp;
      pooled.fp += k.fp;
      pooled.fn += k.fn;
    }
    const Prf micro = precision_recall_f1(pooled.tp, pooled.fp, pooled.fn);
    out.precision.all[t] = micro.precision;
    out.recall.all[t] = micro.recall;
    out.f1.all[t] = micro.f1;
  }

  const auto flags = collect_flags(evals, iou_threshold, num_classes);
  int defined = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (flags[c].truths == 0) continue;
    ++defined;
    const auto points = pr_points(flags[c].ranked, flags[c].truths);
    for (int t = 0; t < kSweepSteps; ++t) {
      const double p = envelope_at(points, sweep_threshold(t));
      out.pr.per_class[c][t] = p;
      out.pr.all[t] += p;
    }
  }
  if (defined > 0)
    for (double& v : out.pr.all) v /= defined;
  return out;
}

double map_at(const std::vector<ImageEval>& evals, int num_classes,
              double iou_threshold, bool eleven_point) {
  const auto flags = collect_flags(evals, iou_threshold, num_classes);
  double sum = 0.0;
  int defined = 0;
  for (const ClassFlags& f : flags) {
    if (f.truths == 0) continue;
    sum += *average_precision(f.ranked, f.truths, eleven_point);
    ++defined;
  }
  return defined > 0 ? sum / defined : 0.0;
}

MapTable map_table(const std::vector<ImageEval>& evals,
                   const std::vector<std::string>& class_names, bool eleven_point) {
  const int num_classes = static_cast<int>(class_names.size());
  if (num_classes < 1) throw std::invalid_argument("need at least one class");

  MapTable table;
  table.rows.resize(num_classes);

  // Box(P) and R are read off at the confidence threshold with the best
  // all-class (micro) F1; strict > keeps the lowest threshold on ties.
  const auto counts = sweep_counts(evals, 0.5, num_classes);
  int best_t = 0;
  double best_f1 = -1.0;
  for (int t = 0; t < kSweepSteps; ++t) {
    Counts pooled;
    for (int c = 0; c < num_classes; ++c) {
      pooled.tp += counts[t][c].tp;
      pooled.fp += counts[t][c].fp;
      pooled.fn += counts[t][c].fn;
    }
    const double f1 = precision_recall_f1(pooled.tp, pooled.fp, pooled.fn).f1;
    if (f1 > best_f1) {
      best_f1 = f1;
      best_t = t;
    }
  }
  table.best_f1_threshold = sweep_threshold(best_t);

  std::vector<std::vector<ClassFlags>> ladder_flags;
  for (int step = 0; step < 10; ++step)
    ladder_flags.push_back(collect_flags(evals, 0.50 + 0.05 * step, num_classes));

  int defined = 0;
  for (int c = 0; c < num_classes; ++c) {
    ClassAPRow& row = table.rows[c];
    row.name = class_names[c];
    row.images = ladder_flags[0][c].images;
    row.defined = ladder_flags[0][c].truths > 0;
    if (!row.defined) continue;
    ++defined;

    const Counts& k = counts[best_t][c];
    const Prf prf = precision_recall_f1(k.tp, k.fp, k.fn);
    row.box_p = prf.precision;
    row.recall = prf.recall;

    double ap_sum = 0.0;
    for (int step = 0; step < 10; ++step) {
      const double ap = *average_precision(ladder_flags[step][c].ranked,
                                           ladder_flags[step][c].truths, eleven_point);
      if (step == 0) row.map50 = ap;
      ap_sum += ap;
    }
    row.map50_95 = ap_sum / 10.0;

    table.all.box_p += row.box_p;
    table.all.recall += row.recall;
    table.all.map50 += row.map50;
    table.all.map50_95 += row.map50_95;
  }

  table.all.name = "all";
  table.all.images = evals.size();
  table.all.defined = defined > 0;
  if (defined > 0) {
    table.all.box_p /= defined;
    table.all.recall /= defined;
    table.all.map50 /= defined;
    table.all.map50_95 /= defined;
  }
  return table;
}

std::size_t ConfusionMatrix::total() const {
  std::size_t sum = 0;
  for (std::size_t v : counts) sum += v;
  return sum;
}

double ConfusionMatrix::accuracy() const {
  const std::size_t n = total();
  if (n == 0) return 0.0;
  std::size_t diag = 0;
  for (int c = 0; c <= num_classes; ++c) diag += at(c, c);
  return static_cast<double>(diag) / static_cast<double>(n);
}

ConfusionMatrix confusion(const std::vector<ImageEval>& evals, int num_classes,
                          double iou_threshold, double conf_threshold) {
  if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
  ConfusionMatrix m;
  m.num_classes = num_classes;
  m.counts.assign(static_cast<std::size_t>(num_classes + 1) * (num_classes + 1), 0);

  struct Pair {
    double v;
    std::size_t di, tj;
  };
  for (const ImageEval& ev : evals) {
    std::vector<Detection> kept;
    for (const Detection& d : ev.detections)
      if (d.score >= conf_threshold) kept.push_back(d);

    std::vector<Pair> pairs;
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t j = 0; j < ev.truths.size(); ++j) {
        const double v = iou(kept[i].box, ev.truths[j].box);
        if (v >= iou_threshold) pairs.push_back({v, i, j});
      }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
      if (a.v != b.v) return a.v > b.v;
      if (a.di != b.di) return a.di < b.di;
      return a.tj < b.tj;
    });

    std::vector<bool> det_used(kept.size(), false), truth_used(ev.truths.size(), false);
    for (const Pair& p : pairs) {
      if (det_used[p.di] || truth_used[p.tj]) continue;
      det_used[p.di] = true;
      truth_used[p.tj] = true;
      ++m.at(ev.truths[p.tj].class_id, kept[p.di].class_id);
    }
    for (std::size_t j = 0; j < ev.truths.size(); ++j)
      if (!truth_used[j]) ++m.at(ev.truths[j].class_id, num_classes);
    for (std::size_t i = 0; i < kept.size(); ++i)
      if (!det_used[i]) ++m.at(num_classes, kept[i].class_id);
  }
  return m;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void write_curve_csv(const std::filesystem::path& path, const CurveSeries& series) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << "threshold";
  for (std::size_t c = 0; c < series.per_class.size(); ++c) f << ",class_" << c;
  f << ",all\n";
  for (std::size_t t = 0; t < series.thresholds.size(); ++t) {
    char thr[16];
    std::snprintf(thr, sizeof thr, "%.2f", series.thresholds[t]);
    f << thr;
    for (const auto& column : series.per_class) f << ',' << fmt(column[t]);
    f << ',' << fmt(series.all[t]) << '\n';
  }
}

void write_ap_table_csv(const std::filesystem::path& path, const MapTable& table) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << "class,images,box_p,r,map50,map50_95\n";
  auto emit = [&](const ClassAPRow& row) {
    f << row.name << ',' << row.images;
    if (row.defined)
      f << ',' << fmt(row.box_p) << ',' << fmt(row.recall) << ',' << fmt(row.map50)
        << ',' << fmt(row.map50_95) << '\n';
    else
      f << ",,,,\n";  // no truths: metrics undefined
  };
  for (const auto& row : table.rows) emit(row);
  emit(table.all);
}

std::string format_ap_table(const MapTable& table) {
  char line[160];
  std::string out;
  std::snprintf(line, sizeof line, "%-12s %8s %8s %8s %8s %9s\n", "Class", "Images",
                "Box(P)", "R", "mAP50", "mAP50-95");
  out += line;
  auto emit = [&](const ClassAPRow& row) {
    if (row.defined)
      std::snprintf(line, sizeof line, "%-12s %8zu %8.3f %8.3f %8.3f %9.3f\n",
                    row.name.c_str(), row.images, row.box_p, row.recall, row.map50,
                    row.map50_95);
    else
      std::snprintf(line, sizeof line, "%-12s %8zu %8s %8s %8s %9s\n",
                    row.name.c_str(), row.images, "-", "-", "-", "-");
    out += line;
  };
  for (const auto& row : table.rows) emit(row);
  emit(table.all);
  return out;
}

void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& m,
                         const std::vector<std::string>& class_names) {
  if (static_cast<int>(class_names.size()) != m.num_classes)
    throw std::invalid_argument("class name count does not match the matrix");
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << "class";
  for (const auto& name : class_names) f << ',' << name;
  f << ",background\n";
  for (int r = 0; r <= m.num_classes; ++r) {
    f << (r < m.num_classes ? class_names[r] : "background");
    for (int c = 0; c <= m.num_classes; ++c) f << ',' << m.at(r, c);
    f << '\n';
  }
}

}  // namespace feddet
