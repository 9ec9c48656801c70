#include "feddet/experiment.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "feddet/dataio.hpp"
#include "feddet/federation.hpp"
#include "feddet/svg.hpp"
#include "feddet/trainer.hpp"
#include "feddet/yolo_loss.hpp"

namespace feddet {

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

// Evaluation loss is a fixed yardstick (default term weights, IoU
// confidence targets) so it does not move with training hyperparameters.
double eval_loss(const GridPrediction& p,
                 const std::vector<GroundTruthObject>& truths) {
  const TargetAssignment a = assign_targets(truths, p, ConfidenceTarget::kIoU);
  return detection_loss(p, a, LossWeights{}).total;
}

std::vector<std::string> default_class_names(int num_classes) {
  if (num_classes == 3) return {"glioma", "meningioma", "pituitary"};
  std::vector<std::string> names;
  for (int c = 0; c < num_classes; ++c) names.push_back("class_" + std::to_string(c));
  return names;
}

ValidationMetrics quick_validation(const ModelConfig& model, const ParamVector& params,
                                   const Dataset& test, const EvalConfig& eval) {
  std::vector<ImageEval> evals;
  evals.reserve(test.size());
  double loss_sum = 0.0;
  for (const Sample& s : test) {
    const GridPrediction p = forward(model, params, s.pixels);
    evals.push_back({decode(p, eval.conf_threshold, eval.nms_iou), s.objects});
    loss_sum += eval_loss(p, s.objects);
  }
  ValidationMetrics out;
  out.map50 = map_at(evals, model.num_classes, 0.5, eval.eleven_point);
  out.accuracy = confusion(evals, model.num_classes, eval.confusion_iou,
                           eval.confusion_conf)
                     .accuracy();
  out.mean_loss = test.empty() ? 0.0 : loss_sum / static_cast<double>(test.size());
  return out;
}

double round_mean_loss(const TrainResult& r) {
  double sum = 0.0;
  for (const auto& e : r.epochs) sum += e.mean_loss.total;
  return sum / static_cast<double>(r.epochs.size());
}

ordered_json final_block(const EvalOutcome& out) {
  ordered_json per_class = ordered_json::array();
  for (const ClassAPRow& row : out.table.rows) {
    per_class.push_back({{"name", row.name},
                         {"images", row.images},
                         {"box_p", row.box_p},
                         {"recall", row.recall},
                         {"map50", row.map50},
                         {"map50_95", row.map50_95},
                         {"defined", row.defined}});
  }
  ordered_json conf = ordered_json::array();
  for (int r = 0; r <= out.conf.num_classes; ++r) {
    ordered_json row = ordered_json::array();
    for (int c = 0; c <= out.conf.num_classes; ++c) row.push_back(out.conf.at(r, c));
    conf.push_back(std::move(row));
  }
  return ordered_json{{"map50", out.table.all.map50},
                      {"map50_95", out.table.all.map50_95},
                      {"accuracy", out.accuracy},
                      {"test_mean_loss", out.mean_loss},
                      {"best_f1_threshold", out.table.best_f1_threshold},
                      {"per_class", std::move(per_class)},
                      {"confusion", std::move(conf)}};
}

void write_metrics_dir(const fs::path& dir, const EvalOutcome& out,
                       const std::vector<std::string>& class_names) {
  fs::create_directories(dir);
  write_curve_csv(dir / "precision.csv", out.curve_bundle.precision);
  write_curve_csv(dir / "recall.csv", out.curve_bundle.recall);
  write_curve_csv(dir / "f1.csv", out.curve_bundle.f1);
  write_curve_csv(dir / "pr.csv", out.curve_bundle.pr);
  write_ap_table_csv(dir / "ap_table.csv", out.table);
  std::ofstream txt(dir / "ap_table.txt", std::ios::trunc);
  if (!txt) throw std::runtime_error("cannot write " + (dir / "ap_table.txt").string());
  txt << format_ap_table(out.table);
  write_confusion_csv(dir / "confusion.csv", out.conf, class_names);
}

void write_json_file(const fs::path& path, const ordered_json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << j.dump(2) << '\n';
}

ordered_json load_json_file(const fs::path& path, const char* what) {
  std::ifstream f(path);
  if (!f) throw ConfigError(std::string(what) + ": cannot open " + path.string());
  try {
    return ordered_json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string(what) + ": " + path.string() + ": " + e.what());
  }
}

}  // namespace

EvalOutcome evaluate_model(const ModelConfig& model, const ParamVector& params,
                           const Dataset& data, const EvalConfig& eval,
                           const std::vector<std::string>& class_names) {
  EvalOutcome out;
  out.evals.reserve(data.size());
  double loss_sum = 0.0;
  for (const Sample& s : data) {
    const GridPrediction p = forward(model, params, s.pixels);
    out.evals.push_back({decode(p, eval.conf_threshold, eval.nms_iou), s.objects});
    loss_sum += eval_loss(p, s.objects);
  }
  out.table = map_table(out.evals, class_names, eval.eleven_point);
  out.conf =
      confusion(out.evals, model.num_classes, eval.confusion_iou, eval.confusion_conf);
  out.curve_bundle = curves(out.evals, 0.5, model.num_classes);
  out.mean_loss = data.empty() ? 0.0 : loss_sum / static_cast<double>(data.size());
  out.accuracy = out.conf.accuracy();
  return out;
}

void run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir, int threads,
                    bool centralized) {
  cfg.validate();
  fs::create_directories(out_dir);

  Dataset raw = cfg.data.source == "synthetic"
                    ? generate_synthetic(cfg.data.count, cfg.data.image_size,
                                         cfg.data.class_mix, cfg.data_seed())
                    : load_directory(cfg.data.path, cfg.model.num_classes);

  const int target = cfg.model.input_height;
  Dataset resized;
  resized.reserve(raw.size());
  for (const Sample& s : raw) resized.push_back(preprocess(s, target, {}).front());

  auto [train_base, test] =
      split_train_test(resized, cfg.data.train_fraction, cfg.split_seed());
  if (train_base.empty() || test.empty())
    throw std::runtime_error("train/test split left one side empty");

  // Augmentations apply to the training half only, after the split, so an
  // augmented copy can never leak its source image into the test set.
  Dataset train;
  for (const Sample& s : train_base)
    for (Sample& t : preprocess(s, target, cfg.data.augment))
      train.push_back(std::move(t));

  EvalFn evalfn = [&](const ParamVector& p, int) {
    return quick_validation(cfg.model, p, test, cfg.eval);
  };

  std::vector<RoundReport> reports;
  CostLedger ledger;
  ParamVector final_params;

  if (!centralized) {
    FedConfig fc;
    fc.rounds = cfg.rounds;
    fc.clients = cfg.clients;
    fc.model = cfg.model;
    fc.train = cfg.train;
    fc.loss = cfg.loss;
    fc.eval_every = cfg.eval_every;
    fc.master_seed = cfg.federation_seed();
    fc.weighted_by_samples = cfg.weighted_by_samples;
    fc.on_failure = cfg.on_failure;

    FederationResult res =
        run_federation(fc, partition(train, cfg.partition), cfg.net, threads, evalfn);
    final_params = std::move(res.params);
    reports = std::move(res.reports);
    ledger = std::move(res.ledger);
  } else {
    // Pooled baseline: the same K * I epoch budget on the undivided train
    // set, with the round seeds a single-client federation would use.
    final_params = init_params(cfg.model);
    for (int round = 1; round <= cfg.rounds; ++round) {
      TrainConfig tc = cfg.train;
      tc.shuffle_seed = federation_round_seed(cfg.federation_seed(), round);
      TrainResult tr =
          train_local(cfg.model, std::move(final_params), train, tc, cfg.loss);
      final_params = std::move(tr.params);

      RoundReport rep;
      rep.round = round;
      rep.client_loss = {round_mean_loss(tr)};
      rep.mean_loss = rep.client_loss[0];
      rep.checksum = checkpoint_checksum(final_params, cfg.model);

      LedgerEntry e;
      e.round = round;
      e.client = 0;
      e.samples_processed =
          static_cast<std::size_t>(cfg.train.local_epochs) * train.size();
      e.compute_s = static_cast<double>(e.samples_processed) *
                    cfg.net.base.compute_s_per_sample;
      ledger.entries.push_back(e);
      ledger.round_seconds.push_back(e.compute_s);
      ledger.total_samples += e.samples_processed;
      ledger.total_seconds += e.compute_s;

      rep.sim_seconds = e.compute_s;
      rep.cum_sim_seconds = ledger.total_seconds;
      if (cfg.eval_every > 0 && round % cfg.eval_every == 0)
        rep.validation = evalfn(final_params, round);
      reports.push_back(std::move(rep));
    }
  }

  write_round_log(out_dir / "rounds.jsonl", reports, ledger);
  write_checkpoint_file(out_dir / "final_model.fdck", final_params, cfg.model);

  // Report on what was actually shipped: the f32-quantized checkpoint.
  auto [quantized, meta] = read_checkpoint_file(out_dir / "final_model.fdck");
  const EvalOutcome final_eval =
      evaluate_model(meta, quantized, test, cfg.eval, cfg.class_names);

  write_metrics_dir(out_dir / "metrics", final_eval, cfg.class_names);
  save_directory(out_dir / "test_data", test);

  ordered_json series = {{"round", ordered_json::array()},
                         {"mean_loss", ordered_json::array()},
                         {"map50", ordered_json::array()},
                         {"accuracy", ordered_json::array()},
                         {"val_loss", ordered_json::array()}};
  for (const RoundReport& rep : reports) {
    series["round"].push_back(rep.round);
    series["mean_loss"].push_back(rep.mean_loss);
    if (rep.validation) {
      series["map50"].push_back(rep.validation->map50);
      series["accuracy"].push_back(rep.validation->accuracy);
      series["val_loss"].push_back(rep.validation->mean_loss);
    } else {
      series["map50"].push_back(nullptr);
      series["accuracy"].push_back(nullptr);
      series["val_loss"].push_back(nullptr);
    }
  }

  ordered_json summary;
  summary["kind"] = centralized ? "centralized" : "federated";
  summary["seed"] = cfg.seed;
  summary["rounds"] = cfg.rounds;
  summary["clients"] = centralized ? 1 : cfg.clients;
  summary["local_epochs"] = cfg.train.local_epochs;
  summary["class_names"] = cfg.class_names;
  summary["model"] = {{"input_size", cfg.model.input_height},
                      {"grid_size", cfg.model.grid_size},
                      {"boxes_per_cell", cfg.model.boxes_per_cell},
                      {"num_classes", cfg.model.num_classes},
                      {"hidden_width", cfg.model.hidden_width},
                      {"param_count", param_count(cfg.model)}};
  summary["data"] = {{"train_samples", train.size()}, {"test_samples", test.size()}};
  summary["series"] = std::move(series);
  summary["final"] = final_block(final_eval);
  summary["cost"] = {{"total_sim_seconds", ledger.total_seconds},
                     {"total_bytes_up", ledger.total_bytes_up},
                     {"total_bytes_down", ledger.total_bytes_down},
                     {"total_samples", ledger.total_samples}};
  summary["checksum"] = checkpoint_checksum(quantized, meta);
  write_json_file(out_dir / "summary.json", summary);
}

void run_eval(const fs::path& checkpoint, const fs::path& data_dir,
              const fs::path& out_dir, const EvalConfig& eval,
              const std::vector<std::string>& class_names_or_empty) {
  auto [params, meta] = read_checkpoint_file(checkpoint);
  std::vector<std::string> class_names = class_names_or_empty;
  if (class_names.empty()) class_names = default_class_names(meta.num_classes);
  if (static_cast<int>(class_names.size()) != meta.num_classes)
    throw ConfigError("checkpoint has " + std::to_string(meta.num_classes) +
                      " classes but " + std::to_string(class_names.size()) +
                      " names were given");

  Dataset data = load_directory(data_dir, meta.num_classes);
  if (data.empty()) throw std::runtime_error("no samples in " + data_dir.string());
  for (Sample& s : data)
    if (s.height != meta.input_height || s.width != meta.input_width)
      s = preprocess(s, meta.input_height, {}).front();

  fs::create_directories(out_dir);
  const EvalOutcome out = evaluate_model(meta, params, data, eval, class_names);
  write_metrics_dir(out_dir / "metrics", out, class_names);

  ordered_json summary;
  summary["kind"] = "eval";
  summary["checkpoint"] = checkpoint.string();
  summary["class_names"] = class_names;
  summary["data"] = {{"test_samples", data.size()}};
  summary["final"] = final_block(out);
  write_json_file(out_dir / "summary.json", summary);
}

namespace {

void require_summary_schema(const ordered_json& j, const std::string& which) {
  auto need = [&](const ordered_json& obj, const char* key, const char* where) {
    if (!obj.contains(key))
      throw ConfigError(which + ": summary is missing " + where + "." + key);
  };
  need(j, "kind", "$");
  need(j, "class_names", "$");
  need(j, "series", "$");
  need(j, "final", "$");
  if (!j["series"].is_object()) throw ConfigError(which + ": series must be an object");
  need(j["series"], "round", "series");
  need(j["series"], "mean_loss", "series");
  need(j["series"], "accuracy", "series");
  need(j["final"], "map50", "final");
  need(j["final"], "accuracy", "final");
  need(j["final"], "confusion", "final");
  const std::size_t rounds = j["series"]["round"].size();
  if (j["series"]["mean_loss"].size() != rounds ||
      j["series"]["accuracy"].size() != rounds)
    throw ConfigError(which + ": series arrays disagree in length");
}

std::string cell(const ordered_json& series, const char* key, std::size_t r) {
  if (r >= series[key].size() || series[key][r].is_null()) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", series[key][r].get<double>());
  return buf;
}

std::string diff_cell(const std::string& a, const std::string& b) {
  if (a.empty() || b.empty()) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", std::stod(a) - std::stod(b));
  return buf;
}

void confusion_from_summary(const ordered_json& j, const std::string& which,
                            const fs::path& path) {
  const auto& cj = j["final"]["confusion"];
  const auto& names_json = j["class_names"];
  ConfusionMatrix m;
  m.num_classes = static_cast<int>(names_json.size());
  if (!cj.is_array() || cj.size() != static_cast<std::size_t>(m.num_classes + 1))
    throw ConfigError(which + ": confusion matrix shape mismatch");
  for (const auto& row : cj) {
    if (!row.is_array() || row.size() != static_cast<std::size_t>(m.num_classes + 1))
      throw ConfigError(which + ": confusion matrix shape mismatch");
    for (const auto& v : row) m.counts.push_back(v.get<std::size_t>());
  }
  std::vector<std::string> names;
  for (const auto& n : names_json) names.push_back(n.get<std::string>());
  write_confusion_csv(path, m, names);
}

std::vector<std::pair<double, double>> series_points(const ordered_json& series,
                                                     const char* key) {
  std::vector<std::pair<double, double>> pts;
  for (std::size_t r = 0; r < series[key].size(); ++r)
    if (!series[key][r].is_null())
      pts.emplace_back(series["round"][r].get<double>(),
                       series[key][r].get<double>());
  return pts;
}

}  // namespace

void run_compare(const fs::path& first_summary, const fs::path& second_summary,
                 const fs::path& out_dir) {
  const ordered_json fl = load_json_file(first_summary, "first summary");
  const ordered_json ml = load_json_file(second_summary, "second summary");
  require_summary_schema(fl, "first summary");
  require_summary_schema(ml, "second summary");

  fs::create_directories(out_dir);

  const std::size_t rounds =
      std::max(fl["series"]["round"].size(), ml["series"]["round"].size());
  std::ofstream csv(out_dir / "compare.csv", std::ios::trunc);
  if (!csv)
    throw std::runtime_error("cannot write " + (out_dir / "compare.csv").string());
  csv << "round,fl_accuracy,ml_accuracy,accuracy_diff,fl_loss,ml_loss,loss_diff\n";
  for (std::size_t r = 0; r < rounds; ++r) {
    const std::string fa = cell(fl["series"], "accuracy", r);
    const std::string ma = cell(ml["series"], "accuracy", r);
    const std::string flo = cell(fl["series"], "mean_loss", r);
    const std::string mlo = cell(ml["series"], "mean_loss", r);
    csv << (r + 1) << ',' << fa << ',' << ma << ',' << diff_cell(fa, ma) << ',' << flo
        << ',' << mlo << ',' << diff_cell(flo, mlo) << '\n';
  }

  write_line_chart(out_dir / "accuracy.svg", "Validation accuracy by round", "round",
                   "accuracy",
                   {{"FL", "#1f77b4", series_points(fl["series"], "accuracy")},
                    {"ML", "#d62728", series_points(ml["series"], "accuracy")}});
  write_line_chart(out_dir / "loss.svg", "Mean training loss by round", "round", "loss",
                   {{"FL", "#1f77b4", series_points(fl["series"], "mean_loss")},
                    {"ML", "#d62728", series_points(ml["series"], "mean_loss")}});

  confusion_from_summary(fl, "first summary", out_dir / "fl_confusion.csv");
  confusion_from_summary(ml, "second summary", out_dir / "ml_confusion.csv");
}

}  // namespace feddet
