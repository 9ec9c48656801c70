#include "feddet/netsim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace feddet {

void ClientLink::validate() const {
  if (!(downlink_Bps > 0.0) || !(uplink_Bps > 0.0))
    throw std::invalid_argument("bandwidths must be > 0 (infinity allowed)");
  if (!(latency_s >= 0.0) || std::isnan(latency_s))
    throw std::invalid_argument("latency must be >= 0");
  if (!(compute_s_per_sample >= 0.0) || std::isnan(compute_s_per_sample))
    throw std::invalid_argument("compute cost must be >= 0");
}

void NetProfile::validate() const {
  base.validate();
  for (const auto& l : per_client) l.validate();
}

namespace {

double transfer_seconds(const ClientLink& l, std::size_t bytes) {
  // bytes / inf == 0, so an infinite-bandwidth sentinel costs nothing.
  return l.latency_s + static_cast<double>(bytes) / l.downlink_Bps + l.latency_s +
         static_cast<double>(bytes) / l.uplink_Bps;
}

}  // namespace

double round_time(const NetProfile& profile, std::size_t checkpoint_bytes,
                  const std::vector<std::size_t>& client_samples, int local_epochs) {
  profile.validate();
  if (local_epochs < 1) throw std::invalid_argument("local_epochs must be >= 1");

  double worst = 0.0;
  for (std::size_t n = 0; n < client_samples.size(); ++n) {
    const ClientLink& l = profile.link(static_cast<int>(n));
    const double compute = static_cast<double>(local_epochs) *
                           static_cast<double>(client_samples[n]) *
                           l.compute_s_per_sample;
    worst = std::max(worst, transfer_seconds(l, checkpoint_bytes) + compute);
  }
  return worst;
}

LedgerCheck ledger_check(const CostLedger& ledger, int rounds, int local_epochs,
                         const std::vector<std::size_t>& client_sizes) {
  LedgerCheck check;
  auto fail = [&check](std::string msg) {
    check.ok = false;
    check.issues.push_back(std::move(msg));
  };

  const std::size_t clients = client_sizes.size();
  if (ledger.entries.size() != static_cast<std::size_t>(rounds) * clients) {
    fail("ledger holds " + std::to_string(ledger.entries.size()) +
         " entries, expected rounds*clients = " +
         std::to_string(static_cast<std::size_t>(rounds) * clients));
    return check;
  }
  if (ledger.round_seconds.size() != static_cast<std::size_t>(rounds))
    fail("ledger holds " + std::to_string(ledger.round_seconds.size()) +
         " round durations, expected " + std::to_string(rounds));

  std::size_t samples_sum = 0;
  std::uint64_t up_sum = 0, down_sum = 0;

  for (int r = 0; r < rounds; ++r) {
    double slowest = 0.0;
    for (std::size_t n = 0; n < clients; ++n) {
      const LedgerEntry& e = ledger.entries[static_cast<std::size_t>(r) * clients + n];
      if (e.round != r + 1 || e.client != static_cast<int>(n)) {
        fail("entry order broken at round " + std::to_string(r + 1) + ", client " +
             std::to_string(n));
        continue;
      }
      const std::size_t expected =
          static_cast<std::size_t>(local_epochs) * client_sizes[n];
      if (e.samples_processed != expected)
        fail("round " + std::to_string(e.round) + ", client " + std::to_string(n) +
             ": samples_processed " + std::to_string(e.samples_processed) +
             " != I*|D| = " + std::to_string(expected));
      samples_sum += e.samples_processed;
      up_sum += e.bytes_up;
      down_sum += e.bytes_down;
      slowest = std::max(slowest, e.compute_s + e.transfer_s);
    }
    if (static_cast<std::size_t>(r) < ledger.round_seconds.size() &&
        ledger.round_seconds[r] != slowest)
      fail("round " + std::to_string(r + 1) + ": simulated time " +
           std::to_string(ledger.round_seconds[r]) +
           " != max over clients of download+compute+upload = " +
           std::to_string(slowest));
  }

  std::size_t expected_total = 0;
  for (std::size_t sz : client_sizes)
    expected_total += static_cast<std::size_t>(local_epochs) * sz;
  expected_total *= static_cast<std::size_t>(rounds);

  if (samples_sum != expected_total)
    fail("total samples " + std::to_string(samples_sum) + " != K * sum(I*|D_n|) = " +
         std::to_string(expected_total));
  if (ledger.total_samples != samples_sum)
    fail("ledger total_samples does not match the sum of its entries");
  if (ledger.total_bytes_up != up_sum || ledger.total_bytes_down != down_sum)
    fail("ledger byte totals do not match the sum of its entries");

  return check;
}

}  // namespace feddet
