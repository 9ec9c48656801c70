#include "feddet/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "feddet/rng.hpp"

namespace feddet {

void FedConfig::validate() const {
  if (rounds < 1) throw std::invalid_argument("rounds must be >= 1");
  if (clients < 1) throw std::invalid_argument("clients must be >= 1");
  if (eval_every < 0 || eval_every > rounds)
    throw std::invalid_argument("eval_every must lie in [0, rounds]");
  model.validate();
  train.validate();
  loss.validate();
}

ParamVector fedavg(const std::vector<ParamVector>& updates) {
  return fedavg_weighted(updates, std::vector<double>(updates.size(), 1.0));
}

ParamVector fedavg_weighted(const std::vector<ParamVector>& updates,
                            const std::vector<double>& weights) {
  if (updates.empty()) throw std::invalid_argument("fedavg: empty update list");
  if (weights.size() != updates.size())
    throw std::invalid_argument("fedavg: weight count mismatch");

  const std::size_t m = updates[0].size();
  double weight_sum = 0.0;
  for (std::size_t n = 0; n < updates.size(); ++n) {
    if (updates[n].size() != m)
      throw std::invalid_argument("fedavg: update length mismatch at client " +
                                  std::to_string(n));
    if (!(weights[n] >= 0.0))
      throw std::invalid_argument("fedavg: negative weight");
    weight_sum += weights[n];
    for (const double v : updates[n])
      if (!std::isfinite(v))
        throw std::invalid_argument("fedavg: non-finite element from client " +
                                    std::to_string(n));
  }
  if (!(weight_sum > 0.0)) throw std::invalid_argument("fedavg: zero total weight");

  // Mean in baseline-offset form: u0 + sum_n w_n*(u_n - u0) / W, accumulated
  // in ascending client order. Identical updates make every difference zero,
  // so N copies of v aggregate to v bit-exactly, which the plain sum/N form
  // cannot guarantee when N is not a power of two.
  ParamVector acc(m, 0.0);
  for (std::size_t n = 1; n < updates.size(); ++n) {
    const double w = weights[n];
    if (w == 0.0) continue;
    for (std::size_t i = 0; i < m; ++i)
      acc[i] += w * (updates[n][i] - updates[0][i]);
  }
  const double inv = 1.0 / weight_sum;
  ParamVector mean(m);
  for (std::size_t i = 0; i < m; ++i) mean[i] = updates[0][i] + acc[i] * inv;
  return mean;
}

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348464Cu;  // per-round shuffle seeds

struct ClientOutcome {
  TrainResult result;
  bool failed = false;
  bool non_finite = false;
  std::string error;
};

double round_mean_loss(const TrainResult& r) {
  double sum = 0.0;
  for (const auto& e : r.epochs) sum += e.mean_loss.total;
  return sum / static_cast<double>(r.epochs.size());
}

}  // namespace

std::uint64_t federation_round_seed(std::uint64_t master_seed, int round) {
  return derive_seed(master_seed, kShuffleStream, static_cast<std::uint64_t>(round));
}

FederationResult run_federation(const FedConfig& cfg,
                                const std::vector<Dataset>& client_data,
                                const NetProfile& net, int threads,
                                const EvalFn& eval, const RepartitionFn& repartition) {
  cfg.validate();
  net.validate();
  if (client_data.size() != static_cast<std::size_t>(cfg.clients))
    throw std::invalid_argument("expected exactly " + std::to_string(cfg.clients) +
                                " client datasets");
  for (std::size_t n = 0; n < client_data.size(); ++n)
    if (client_data[n].empty())
      throw std::invalid_argument("client " + std::to_string(n) + " has no data");

  const std::size_t ckpt_bytes = checkpoint_size(cfg.model);

  FederationResult out;
  out.params = init_params(cfg.model);

  std::vector<Dataset> data = client_data;

  for (int round = 1; round <= cfg.rounds; ++round) {
    if (repartition) {
      data = repartition(round);
      if (data.size() != static_cast<std::size_t>(cfg.clients))
        throw std::runtime_error("repartition hook returned wrong client count");
    }

    // Same derived seed for every client: identical datasets then yield
    // identical updates, and a single-client run matches centralized SGD.
    TrainConfig round_train = cfg.train;
    round_train.shuffle_seed = federation_round_seed(cfg.master_seed, round);

    std::vector<ClientOutcome> outcomes(cfg.clients);
    auto train_one = [&](int n) {
      try {
        outcomes[n].result =
            train_local(cfg.model, out.params, data[n], round_train, cfg.loss);
      } catch (const NonFiniteError& e) {
        outcomes[n].failed = true;
        outcomes[n].non_finite = true;
        outcomes[n].error = e.what();
      } catch (const std::exception& e) {
        outcomes[n].failed = true;
        outcomes[n].error = e.what();
      }
    };

    if (threads <= 1 || cfg.clients == 1) {
      for (int n = 0; n < cfg.clients; ++n) train_one(n);
    } else {
      std::atomic<int> next{0};
      const int workers = std::min(threads, cfg.clients);
      std::vector<std::thread> pool;
      pool.reserve(workers);
      for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
          for (int n = next.fetch_add(1); n < cfg.clients; n = next.fetch_add(1))
            train_one(n);
        });
      for (auto& t : pool) t.join();
    }

    RoundReport report;
    report.round = round;

    std::vector<ParamVector> updates;
    std::vector<double> weights;
    updates.reserve(cfg.clients);
    for (int n = 0; n < cfg.clients; ++n) {
      if (outcomes[n].failed) {
        if (cfg.on_failure == FailurePolicy::kAbort) {
          const std::string msg = "client " + std::to_string(n) + " failed in round " +
                                  std::to_string(round) + ": " + outcomes[n].error;
          if (outcomes[n].non_finite) throw NonFiniteError(msg);
          throw std::runtime_error(msg);
        }
        report.dropped_clients.push_back(n);
        report.client_loss.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      updates.push_back(std::move(outcomes[n].result.params));
      weights.push_back(cfg.weighted_by_samples
                            ? static_cast<double>(data[n].size())
                            : 1.0);
      report.client_loss.push_back(round_mean_loss(outcomes[n].result));
    }
    if (updates.empty())
      throw std::runtime_error("all clients failed in round " + std::to_string(round));

    out.params = fedavg_weighted(updates, weights);

    double loss_sum = 0.0;
    int loss_count = 0;
    for (double l : report.client_loss)
      if (std::isfinite(l)) {
        loss_sum += l;
        ++loss_count;
      }
    report.mean_loss = loss_count > 0 ? loss_sum / loss_count : 0.0;
    report.checksum = checkpoint_checksum(out.params, cfg.model);

    // Cost accounting. Downloads happen for every client; uploads only for
    // the ones that finished.
    std::vector<std::size_t> sizes(cfg.clients);
    for (int n = 0; n < cfg.clients; ++n) sizes[n] = data[n].size();

    double slowest = 0.0;
    for (int n = 0; n < cfg.clients; ++n) {
      const ClientLink& link = net.link(n);
      LedgerEntry e;
      e.round = round;
      e.client = n;
      e.samples_processed =
          static_cast<std::size_t>(cfg.train.local_epochs) * sizes[n];
      e.compute_s = static_cast<double>(e.samples_processed) * link.compute_s_per_sample;
      const bool uploaded = !outcomes[n].failed;
      e.bytes_down = ckpt_bytes;
      e.bytes_up = uploaded ? ckpt_bytes : 0;
      e.transfer_s = link.latency_s +
                     static_cast<double>(e.bytes_down) / link.downlink_Bps +
                     link.latency_s +
                     static_cast<double>(e.bytes_up) / link.uplink_Bps;
      slowest = std::max(slowest, e.compute_s + e.transfer_s);
      report.bytes_up += e.bytes_up;
      report.bytes_down += e.bytes_down;
      out.ledger.total_samples += e.samples_processed;
      out.ledger.total_bytes_up += e.bytes_up;
      out.ledger.total_bytes_down += e.bytes_down;
      out.ledger.entries.push_back(e);
    }
    out.ledger.round_seconds.push_back(slowest);
    out.ledger.total_seconds += slowest;

    report.sim_seconds = slowest;
    report.cum_sim_seconds = out.ledger.total_seconds;

    if (cfg.eval_every > 0 && eval && round % cfg.eval_every == 0)
      report.validation = eval(out.params, round);

    out.reports.push_back(std::move(report));
  }

  return out;
}

// --- checkpoint encoding ---

namespace {

constexpr char kMagic[4] = {'F', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderSize = 32;

void put_u16(std::vector<std::uint8_t>& b, std::size_t off, std::uint16_t v) {
  b[off] = static_cast<std::uint8_t>(v & 0xff);
  b[off + 1] = static_cast<std::uint8_t>(v >> 8);
}

void put_u32(std::vector<std::uint8_t>& b, std::size_t off, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[off + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

void put_u64(std::vector<std::uint8_t>& b, std::size_t off, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b[off + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[off + i];
  return v;
}

std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[off + i];
  return v;
}

std::uint16_t to_u16_field(int v, const char* name) {
  if (v < 0 || v > 0xffff)
    throw std::invalid_argument(std::string(name) + " does not fit the checkpoint header");
  return static_cast<std::uint16_t>(v);
}

}  // namespace

std::size_t checkpoint_size(const ModelConfig& cfg) {
  return kHeaderSize + 4 * param_count(cfg);
}

std::vector<std::uint8_t> serialize_checkpoint(const ParamVector& params,
                                               const ModelConfig& meta) {
  const std::size_t m = param_count(meta);
  if (params.size() != m)
    throw std::invalid_argument("params length does not match model config");

  std::vector<std::uint8_t> bytes(kHeaderSize + 4 * m, 0);
  std::memcpy(bytes.data(), kMagic, 4);
  put_u32(bytes, 4, kVersion);
  put_u16(bytes, 8, to_u16_field(meta.input_height, "input_height"));
  put_u16(bytes, 10, to_u16_field(meta.input_width, "input_width"));
  put_u16(bytes, 12, to_u16_field(meta.grid_size, "grid_size"));
  put_u16(bytes, 14, to_u16_field(meta.boxes_per_cell, "boxes_per_cell"));
  put_u16(bytes, 16, to_u16_field(meta.num_classes, "num_classes"));
  put_u16(bytes, 18, to_u16_field(meta.hidden_width, "hidden_width"));
  put_u64(bytes, 20, m);
  put_u32(bytes, 28, 0);

  for (std::size_t i = 0; i < m; ++i) {
    if (!std::isfinite(params[i]))
      throw std::invalid_argument("cannot serialize non-finite parameter");
    const float f = static_cast<float>(params[i]);
    std::uint32_t raw;
    std::memcpy(&raw, &f, 4);
    put_u32(bytes, kHeaderSize + 4 * i, raw);
  }
  return bytes;
}

std::pair<ParamVector, ModelConfig> deserialize_checkpoint(
    std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize)
    throw std::runtime_error("checkpoint truncated: missing header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw std::runtime_error("checkpoint magic mismatch");
  if (get_u32(bytes, 4) != kVersion)
    throw std::runtime_error("unsupported checkpoint version");

  ModelConfig cfg;
  cfg.input_height = get_u16(bytes, 8);
  cfg.input_width = get_u16(bytes, 10);
  cfg.grid_size = get_u16(bytes, 12);
  cfg.boxes_per_cell = get_u16(bytes, 14);
  cfg.num_classes = get_u16(bytes, 16);
  cfg.hidden_width = get_u16(bytes, 18);
  cfg.seed = 0;
  cfg.validate();

  const std::uint64_t m = get_u64(bytes, 20);
  if (m != param_count(cfg))
    throw std::runtime_error("checkpoint parameter count disagrees with header dims");
  if (bytes.size() != kHeaderSize + 4 * m)
    throw std::runtime_error("checkpoint payload size mismatch");

  ParamVector params(m);
  for (std::uint64_t i = 0; i < m; ++i) {
    const std::uint32_t raw = get_u32(bytes, kHeaderSize + 4 * i);
    float f;
    std::memcpy(&f, &raw, 4);
    params[i] = static_cast<double>(f);
  }
  return {std::move(params), cfg};
}

void write_checkpoint_file(const std::filesystem::path& path,
                           const ParamVector& params, const ModelConfig& meta) {
  const auto bytes = serialize_checkpoint(params, meta);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("short write to " + path.string());
}

std::pair<ParamVector, ModelConfig> read_checkpoint_file(
    const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string checkpoint_checksum(const ParamVector& params, const ModelConfig& meta) {
  const auto bytes = serialize_checkpoint(params, meta);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return std::string(buf);
}

void write_round_log(const std::filesystem::path& path,
                     const std::vector<RoundReport>& reports,
                     const CostLedger& ledger) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");

  const std::size_t clients =
      reports.empty() ? 0 : ledger.entries.size() / reports.size();

  for (std::size_t r = 0; r < reports.size(); ++r) {
    const RoundReport& rep = reports[r];
    nlohmann::ordered_json j;
    j["round"] = rep.round;
    j["mean_loss"] = rep.mean_loss;
    nlohmann::ordered_json losses = nlohmann::ordered_json::array();
    for (double l : rep.client_loss)
      losses.push_back(std::isfinite(l) ? nlohmann::ordered_json(l)
                                        : nlohmann::ordered_json(nullptr));
    j["client_loss"] = std::move(losses);
    j["checksum"] = rep.checksum;
    j["bytes_down"] = rep.bytes_down;
    j["bytes_up"] = rep.bytes_up;
    j["sim_seconds"] = rep.sim_seconds;
    j["cum_sim_seconds"] = rep.cum_sim_seconds;
    if (!rep.dropped_clients.empty()) j["dropped_clients"] = rep.dropped_clients;
    if (rep.validation) {
      j["validation"] = {{"map50", rep.validation->map50},
                         {"accuracy", rep.validation->accuracy},
                         {"loss", rep.validation->mean_loss}};
    }
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    for (std::size_t n = 0; n < clients; ++n) {
      const LedgerEntry& e = ledger.entries[r * clients + n];
      entries.push_back({{"client", e.client},
                         {"samples", e.samples_processed},
                         {"compute_s", e.compute_s},
                         {"transfer_s", e.transfer_s},
                         {"bytes_down", e.bytes_down},
                         {"bytes_up", e.bytes_up}});
    }
    j["clients"] = std::move(entries);
    f << j.dump() << '\n';
  }
}

}  // namespace feddet
