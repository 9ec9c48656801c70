#include "feddet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace feddet {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::string& where,
                    const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items())
    if (allowed.find(key) == allowed.end())
      throw ConfigError(where + ": unknown key \"" + key + "\"");
}

void expect_object(const json& v, const std::string& where) {
  if (!v.is_object()) throw ConfigError(where + ": expected an object");
}

double get_number(const json& obj, const std::string& where, const char* key,
                  double fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(where + "." + key + ": expected a number");
  return v.get<double>();
}

int get_int(const json& obj, const std::string& where, const char* key, int fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer())
    throw ConfigError(where + "." + key + ": expected an integer");
  return v.get<int>();
}

bool get_bool(const json& obj, const std::string& where, const char* key,
              bool fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_boolean()) throw ConfigError(where + "." + key + ": expected a boolean");
  return v.get<bool>();
}

std::string get_string(const json& obj, const std::string& where, const char* key,
                       const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_string()) throw ConfigError(where + "." + key + ": expected a string");
  return v.get<std::string>();
}

// Bandwidths are bytes/second; the string "inf" means unconstrained.
double get_bandwidth(const json& obj, const std::string& where, const char* key,
                     double fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (v.is_string()) {
    if (v.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
    throw ConfigError(where + "." + key + ": expected a number or \"inf\"");
  }
  if (!v.is_number()) throw ConfigError(where + "." + key + ": expected a number or \"inf\"");
  return v.get<double>();
}

ClientLink parse_link(const json& obj, const std::string& where, const ClientLink& base) {
  expect_object(obj, where);
  reject_unknown(obj, where,
                 {"downlink_Bps", "uplink_Bps", "latency_s", "compute_s_per_sample"});
  ClientLink link = base;
  link.downlink_Bps = get_bandwidth(obj, where, "downlink_Bps", base.downlink_Bps);
  link.uplink_Bps = get_bandwidth(obj, where, "uplink_Bps", base.uplink_Bps);
  link.latency_s = get_number(obj, where, "latency_s", base.latency_s);
  link.compute_s_per_sample =
      get_number(obj, where, "compute_s_per_sample", base.compute_s_per_sample);
  return link;
}

Augment parse_augment(const std::string& name, const std::string& where) {
  if (name == "rot90") return Augment::kRot90;
  if (name == "rot180") return Augment::kRot180;
  if (name == "rot270") return Augment::kRot270;
  if (name == "fliph") return Augment::kFlipH;
  if (name == "flipv") return Augment::kFlipV;
  throw ConfigError(where + ": unknown augmentation \"" + name + "\"");
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    if (data.source != "synthetic" && data.source != "directory")
      throw std::invalid_argument("data.source must be \"synthetic\" or \"directory\"");
    if (data.source == "synthetic") {
      if (data.count < 2) throw std::invalid_argument("data.count must be >= 2");
      if (data.image_size < 16)
        throw std::invalid_argument("data.image_size must be >= 16");
    } else if (data.path.empty()) {
      throw std::invalid_argument("data.path is required for a directory source");
    }
    if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0))
      throw std::invalid_argument("data.train_fraction must lie in (0, 1)");
    if (data.target_size < 0)
      throw std::invalid_argument("data.target_size must be positive");

    model.validate();
    train.validate();
    if (!(train.learning_rate > 0.0))
      throw std::invalid_argument("train.learning_rate must be > 0");
    loss.validate();

    if (rounds < 1) throw std::invalid_argument("rounds must be >= 1");
    if (clients < 1) throw std::invalid_argument("clients must be >= 1");
    if (eval_every < 0 || eval_every > rounds)
      throw std::invalid_argument("eval_every must lie in [0, rounds]");
    partition.validate();
    if (partition.num_clients != clients)
      throw std::invalid_argument("partition client count must match clients");
    net.validate();

    if (!(eval.conf_threshold >= 0.0 && eval.conf_threshold <= 1.0))
      throw std::invalid_argument("eval.conf_threshold must lie in [0,1]");
    if (!(eval.nms_iou >= 0.0 && eval.nms_iou <= 1.0))
      throw std::invalid_argument("eval.nms_iou must lie in [0,1]");
    if (!(eval.confusion_iou >= 0.0 && eval.confusion_iou <= 1.0))
      throw std::invalid_argument("eval.confusion_iou must lie in [0,1]");
    if (!(eval.confusion_conf >= 0.0 && eval.confusion_conf <= 1.0))
      throw std::invalid_argument("eval.confusion_conf must lie in [0,1]");
    if (static_cast<int>(class_names.size()) != model.num_classes)
      throw std::invalid_argument("class_names must have one entry per class");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::string& origin) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  expect_object(root, origin);
  reject_unknown(root, origin,
                 {"seed", "output_dir", "data", "model", "train", "loss", "federation",
                  "partition", "net", "eval", "class_names"});

  ExperimentConfig cfg;
  if (root.contains("seed")) {
    const json& v = root.at("seed");
    if (!v.is_number_unsigned() && !v.is_number_integer())
      throw ConfigError(origin + ".seed: expected an integer");
    cfg.seed = v.get<std::uint64_t>();
  } else {
    throw ConfigError(origin + ": \"seed\" is required; runs must be reproducible");
  }
  cfg.output_dir = get_string(root, origin, "output_dir", cfg.output_dir);

  if (root.contains("data")) {
    const json& d = root.at("data");
    const std::string where = origin + ".data";
    expect_object(d, where);
    reject_unknown(d, where,
                   {"source", "count", "image_size", "class_mix", "path", "target_size",
                    "augment", "train_fraction"});
    cfg.data.source = get_string(d, where, "source", cfg.data.source);
    cfg.data.count = get_int(d, where, "count", cfg.data.count);
    cfg.data.image_size = get_int(d, where, "image_size", cfg.data.image_size);
    cfg.data.path = get_string(d, where, "path", cfg.data.path);
    cfg.data.target_size = get_int(d, where, "target_size", cfg.data.target_size);
    cfg.data.train_fraction =
        get_number(d, where, "train_fraction", cfg.data.train_fraction);
    if (d.contains("class_mix")) {
      const json& mix = d.at("class_mix");
      if (!mix.is_array() || mix.size() != 3)
        throw ConfigError(where + ".class_mix: expected an array of 3 numbers");
      for (int i = 0; i < 3; ++i) {
        if (!mix[i].is_number())
          throw ConfigError(where + ".class_mix: expected an array of 3 numbers");
        cfg.data.class_mix[i] = mix[i].get<double>();
      }
    }
    if (d.contains("augment")) {
      const json& aug = d.at("augment");
      if (!aug.is_array()) throw ConfigError(where + ".augment: expected an array");
      for (const auto& a : aug) {
        if (!a.is_string()) throw ConfigError(where + ".augment: expected strings");
        cfg.data.augment.push_back(parse_augment(a.get<std::string>(), where + ".augment"));
      }
    }
  }

  if (root.contains("model")) {
    const json& m = root.at("model");
    const std::string where = origin + ".model";
    expect_object(m, where);
    reject_unknown(m, where,
                   {"grid_size", "boxes_per_cell", "num_classes", "hidden_width"});
    cfg.model.grid_size = get_int(m, where, "grid_size", cfg.model.grid_size);
    cfg.model.boxes_per_cell =
        get_int(m, where, "boxes_per_cell", cfg.model.boxes_per_cell);
    cfg.model.num_classes = get_int(m, where, "num_classes", cfg.model.num_classes);
    cfg.model.hidden_width = get_int(m, where, "hidden_width", cfg.model.hidden_width);
  }

  if (root.contains("train")) {
    const json& t = root.at("train");
    const std::string where = origin + ".train";
    expect_object(t, where);
    reject_unknown(t, where,
                   {"learning_rate", "local_epochs", "batch_size", "confidence_target"});
    cfg.train.learning_rate =
        get_number(t, where, "learning_rate", cfg.train.learning_rate);
    cfg.train.local_epochs = get_int(t, where, "local_epochs", cfg.train.local_epochs);
    cfg.train.batch_size = get_int(t, where, "batch_size", cfg.train.batch_size);
    const std::string target = get_string(t, where, "confidence_target", "iou");
    if (target == "iou")
      cfg.train.confidence_target = ConfidenceTarget::kIoU;
    else if (target == "one")
      cfg.train.confidence_target = ConfidenceTarget::kOne;
    else
      throw ConfigError(where + ".confidence_target: expected \"iou\" or \"one\"");
  }

  if (root.contains("loss")) {
    const json& l = root.at("loss");
    const std::string where = origin + ".loss";
    expect_object(l, where);
    reject_unknown(l, where, {"lambda_coord", "lambda_conf_obj", "lambda_conf_noobj"});
    cfg.loss.lambda_coord = get_number(l, where, "lambda_coord", cfg.loss.lambda_coord);
    cfg.loss.lambda_conf_obj =
        get_number(l, where, "lambda_conf_obj", cfg.loss.lambda_conf_obj);
    cfg.loss.lambda_conf_noobj =
        get_number(l, where, "lambda_conf_noobj", cfg.loss.lambda_conf_noobj);
  }

  if (root.contains("federation")) {
    const json& f = root.at("federation");
    const std::string where = origin + ".federation";
    expect_object(f, where);
    reject_unknown(f, where,
                   {"rounds", "clients", "eval_every", "weighted_by_samples", "on_failure"});
    cfg.rounds = get_int(f, where, "rounds", cfg.rounds);
    cfg.clients = get_int(f, where, "clients", cfg.clients);
    cfg.eval_every = get_int(f, where, "eval_every", cfg.eval_every);
    cfg.weighted_by_samples =
        get_bool(f, where, "weighted_by_samples", cfg.weighted_by_samples);
    const std::string policy = get_string(f, where, "on_failure", "abort");
    if (policy == "abort")
      cfg.on_failure = FailurePolicy::kAbort;
    else if (policy == "drop")
      cfg.on_failure = FailurePolicy::kDropClient;
    else
      throw ConfigError(where + ".on_failure: expected \"abort\" or \"drop\"");
  }

  if (root.contains("partition")) {
    const json& p = root.at("partition");
    const std::string where = origin + ".partition";
    expect_object(p, where);
    reject_unknown(p, where, {"mode", "alpha"});
    const std::string mode = get_string(p, where, "mode", "iid");
    if (mode == "iid")
      cfg.partition.mode = PartitionSpec::Mode::kIid;
    else if (mode == "dirichlet")
      cfg.partition.mode = PartitionSpec::Mode::kDirichlet;
    else
      throw ConfigError(where + ".mode: expected \"iid\" or \"dirichlet\"");
    cfg.partition.alpha = get_number(p, where, "alpha", cfg.partition.alpha);
  }

  if (root.contains("net")) {
    const json& n = root.at("net");
    const std::string where = origin + ".net";
    expect_object(n, where);
    reject_unknown(n, where, {"downlink_Bps", "uplink_Bps", "latency_s",
                              "compute_s_per_sample", "per_client"});
    json base = n;
    base.erase("per_client");
    cfg.net.base = parse_link(base, where, ClientLink{});
    if (n.contains("per_client")) {
      const json& pc = n.at("per_client");
      if (!pc.is_array()) throw ConfigError(where + ".per_client: expected an array");
      for (std::size_t i = 0; i < pc.size(); ++i)
        cfg.net.per_client.push_back(
            parse_link(pc[i], where + ".per_client[" + std::to_string(i) + "]",
                       cfg.net.base));
    }
  }

  if (root.contains("eval")) {
    const json& e = root.at("eval");
    const std::string where = origin + ".eval";
    expect_object(e, where);
    reject_unknown(e, where, {"conf_threshold", "nms_iou", "confusion_iou",
                              "confusion_conf", "eleven_point"});
    cfg.eval.conf_threshold =
        get_number(e, where, "conf_threshold", cfg.eval.conf_threshold);
    cfg.eval.nms_iou = get_number(e, where, "nms_iou", cfg.eval.nms_iou);
    cfg.eval.confusion_iou =
        get_number(e, where, "confusion_iou", cfg.eval.confusion_iou);
    cfg.eval.confusion_conf =
        get_number(e, where, "confusion_conf", cfg.eval.confusion_conf);
    cfg.eval.eleven_point = get_bool(e, where, "eleven_point", cfg.eval.eleven_point);
  }

  if (root.contains("class_names")) {
    const json& names = root.at("class_names");
    if (!names.is_array()) throw ConfigError(origin + ".class_names: expected an array");
    for (const auto& name : names) {
      if (!name.is_string())
        throw ConfigError(origin + ".class_names: expected strings");
      cfg.class_names.push_back(name.get<std::string>());
    }
  }
  if (cfg.class_names.empty()) {
    if (cfg.model.num_classes == 3)
      cfg.class_names = {"glioma", "meningioma", "pituitary"};
    else
      for (int c = 0; c < cfg.model.num_classes; ++c)
        cfg.class_names.push_back("class_" + std::to_string(c));
  }

  // The detector consumes whatever resolution the data stage emits.
  const int input = cfg.data.target_size > 0 ? cfg.data.target_size
                                             : cfg.data.image_size;
  cfg.model.input_height = input;
  cfg.model.input_width = input;
  cfg.model.seed = cfg.model_seed();
  cfg.partition.num_clients = cfg.clients;
  cfg.partition.seed = cfg.partition_seed();

  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_experiment_config(buf.str(), path.string());
}

}  // namespace feddet
