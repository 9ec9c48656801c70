#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>
#include <vector>

#include "feddet/netsim.hpp"

using namespace feddet;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

NetProfile zero_transfer_profile(double cost_per_sample) {
  NetProfile p;
  p.base.downlink_Bps = kInf;
  p.base.uplink_Bps = kInf;
  p.base.latency_s = 0.0;
  p.base.compute_s_per_sample = cost_per_sample;
  return p;
}

CostLedger make_ledger(const NetProfile& net, int rounds, int local_epochs,
                       const std::vector<std::size_t>& sizes,
                       std::size_t checkpoint_bytes) {
  CostLedger ledger;
  for (int r = 1; r <= rounds; ++r) {
    for (std::size_t c = 0; c < sizes.size(); ++c) {
      const ClientLink& link = net.link(static_cast<int>(c));
      LedgerEntry e;
      e.round = r;
      e.client = static_cast<int>(c);
      e.samples_processed = static_cast<std::size_t>(local_epochs) * sizes[c];
      e.compute_s = static_cast<double>(e.samples_processed) *
                    link.compute_s_per_sample;
      const double down =
          checkpoint_bytes == 0 ? 0.0 : checkpoint_bytes / link.downlink_Bps;
      const double up =
          checkpoint_bytes == 0 ? 0.0 : checkpoint_bytes / link.uplink_Bps;
      e.transfer_s = link.latency_s + down + link.latency_s + up;
      e.bytes_down = checkpoint_bytes;
      e.bytes_up = checkpoint_bytes;
      ledger.entries.push_back(e);
      ledger.total_samples += e.samples_processed;
      ledger.total_bytes_up += e.bytes_up;
      ledger.total_bytes_down += e.bytes_down;
    }
    double slowest = 0.0;
    for (std::size_t c = 0; c < sizes.size(); ++c) {
      const LedgerEntry& e =
          ledger.entries[(static_cast<std::size_t>(r) - 1) * sizes.size() + c];
      slowest = std::max(slowest, e.compute_s + e.transfer_s);
    }
    ledger.round_seconds.push_back(slowest);
    ledger.total_seconds += slowest;
  }
  return ledger;
}

}  // namespace

TEST_CASE("profile validation") {
  NetProfile p;
  CHECK_NOTHROW(p.validate());
  p.base.downlink_Bps = 0.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = NetProfile{};
  p.base.latency_s = -0.1;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = NetProfile{};
  p.base.compute_s_per_sample = -1.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = NetProfile{};
  p.base.uplink_Bps = kInf;  // sentinel allowed
  CHECK_NOTHROW(p.validate());
  p.per_client.push_back(ClientLink{});
  p.per_client[0].uplink_Bps = -5.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("hand-evaluated round time: 1.4 seconds") {
  NetProfile p;
  p.base.downlink_Bps = 10000.0;
  p.base.uplink_Bps = 10000.0;
  p.base.latency_s = 0.1;
  p.base.compute_s_per_sample = 1.0;
  // 1 client, 1 sample, 1 epoch: 0.1 + 0.1 + 1 + 0.1 + 0.1
  const double t = round_time(p, 1000, {1}, 1);
  CHECK(std::abs(t - 1.4) < 1e-12);
}

TEST_CASE("transfer terms vanish with zero latency and infinite bandwidth") {
  const NetProfile p = zero_transfer_profile(0.5);
  const double t = round_time(p, 123456, {4, 10, 7}, 2);
  CHECK(t == 0.5 * 2 * 10);  // slowest client dominates
}

TEST_CASE("doubling every client's samples doubles a zero-transfer round") {
  const NetProfile p = zero_transfer_profile(0.25);
  const std::vector<std::size_t> sizes{3, 8, 5};
  std::vector<std::size_t> doubled;
  for (std::size_t s : sizes) doubled.push_back(2 * s);
  const double t1 = round_time(p, 0, sizes, 3);
  const double t2 = round_time(p, 0, doubled, 3);
  CHECK(t2 == doctest::Approx(2.0 * t1).epsilon(1e-15));
}

TEST_CASE("round time is monotone in every cost knob") {
  NetProfile base;
  base.base.downlink_Bps = 1e6;
  base.base.uplink_Bps = 2e6;
  base.base.latency_s = 0.02;
  base.base.compute_s_per_sample = 0.001;
  const std::vector<std::size_t> sizes{10, 20};
  const double t0 = round_time(base, 50000, sizes, 2);

  NetProfile slower = base;
  slower.base.latency_s *= 2;
  CHECK(round_time(slower, 50000, sizes, 2) > t0);

  CHECK(round_time(base, 100000, sizes, 2) > t0);
  CHECK(round_time(base, 50000, sizes, 4) > t0);
  CHECK(round_time(base, 50000, {10, 40}, 2) > t0);

  NetProfile faster = base;
  faster.base.downlink_Bps *= 4;
  faster.base.uplink_Bps *= 4;
  CHECK(round_time(faster, 50000, sizes, 2) < t0);
}

TEST_CASE("per-client overrides take effect") {
  NetProfile p = zero_transfer_profile(1.0);
  p.per_client.resize(2, p.base);
  p.per_client[1].compute_s_per_sample = 10.0;
  const double t = round_time(p, 0, {5, 5}, 1);
  CHECK(t == 50.0);
}

TEST_CASE("ledger accounting identity: K=3, N=2, I=2, sizes (10,20)") {
  NetProfile p;
  const std::vector<std::size_t> sizes{10, 20};
  const CostLedger ledger = make_ledger(p, 3, 2, sizes, 1000);
  CHECK(ledger.total_samples == 180);  // 3 * (20 + 40)
  const LedgerCheck check = ledger_check(ledger, 3, 2, sizes);
  const std::string first_issue = check.issues.empty() ? "" : check.issues.front();
  INFO("first issue: ", first_issue);
  CHECK(check.ok);
}

TEST_CASE("unit ledger: K=1, N=1, I=1, one sample") {
  const CostLedger ledger = make_ledger(NetProfile{}, 1, 1, {1}, 100);
  CHECK(ledger.total_samples == 1);
  CHECK(ledger_check(ledger, 1, 1, {1}).ok);
}

TEST_CASE("tampered ledger entries are caught and named") {
  const std::vector<std::size_t> sizes{4, 6};
  CostLedger ledger = make_ledger(NetProfile{}, 2, 3, sizes, 500);

  SUBCASE("sample count off by one") {
    ledger.entries[3].samples_processed += 1;  // round 2, client 1
    const LedgerCheck check = ledger_check(ledger, 2, 3, sizes);
    CHECK_FALSE(check.ok);
    REQUIRE_FALSE(check.issues.empty());
    CHECK(check.issues[0].find("round 2") != std::string::npos);
    CHECK(check.issues[0].find("client 1") != std::string::npos);
  }

  SUBCASE("round time below the slowest client") {
    ledger.round_seconds[0] *= 0.5;
    const LedgerCheck check = ledger_check(ledger, 2, 3, sizes);
    CHECK_FALSE(check.ok);
    REQUIRE_FALSE(check.issues.empty());
    CHECK(check.issues[0].find("round 1") != std::string::npos);
  }

  SUBCASE("total drifts from the entries") {
    ledger.total_samples += 5;
    CHECK_FALSE(ledger_check(ledger, 2, 3, sizes).ok);
  }

  SUBCASE("missing entry") {
    ledger.entries.pop_back();
    CHECK_FALSE(ledger_check(ledger, 2, 3, sizes).ok);
  }
}
