#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace feddet {

// Link and compute characteristics of one client. Bandwidths are bytes per
// second (infinity = unconstrained); latency is one-way seconds.
struct ClientLink {
  double downlink_Bps = 10e6;
  double uplink_Bps = 10e6;
  double latency_s = 0.05;
  double compute_s_per_sample = 0.0;

  void validate() const;
};

// Cost profile for the whole federation: a base link plus optional
// per-client overrides (index into per_client when present).
struct NetProfile {
  ClientLink base;
  std::vector<ClientLink> per_client;

  const ClientLink& link(int client) const {
    if (client >= 0 && static_cast<std::size_t>(client) < per_client.size())
      return per_client[client];
    return base;
  }
  void validate() const;
};

// Simulated duration of one synchronous round: every client starts its
// download when the round opens, and the round closes when the slowest
// client has uploaded. Per client:
//   latency + bytes/downlink + I*samples*cost + latency + bytes/uplink
double round_time(const NetProfile& profile, std::size_t checkpoint_bytes,
                  const std::vector<std::size_t>& client_samples, int local_epochs);

// Per-round, per-client accounting produced by a federated run.
struct LedgerEntry {
  int round = 0;   // 1-based
  int client = 0;  // 0-based
  double compute_s = 0.0;
  double transfer_s = 0.0;  // both latencies plus both transfer legs
  std::size_t samples_processed = 0;
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
};

struct CostLedger {
  std::vector<LedgerEntry> entries;    // round-major, client-minor
  std::vector<double> round_seconds;   // one per round
  std::size_t total_samples = 0;
  std::uint64_t total_bytes_up = 0;
  std::uint64_t total_bytes_down = 0;
  double total_seconds = 0.0;
};

struct LedgerCheck {
  bool ok = true;
  std::vector<std::string> issues;
};

// Verifies the accounting identities of a completed run: every (round,
// client) entry processed exactly local_epochs * |D_client| samples, totals
// are consistent, and each round's simulated time equals the slowest
// client's download + compute + upload. Diagnostics name the offending
// round/client.
LedgerCheck ledger_check(const CostLedger& ledger, int rounds, int local_epochs,
                         const std::vector<std::size_t>& client_sizes);

}  // namespace feddet
