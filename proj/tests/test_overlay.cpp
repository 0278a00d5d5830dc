#include <doctest.h>

#include <random>

#include "h2o/cluster.hpp"
#include "h2o/overlay.hpp"
#include "h2o/sha1.hpp"

using namespace h2o;
using namespace h2o::overlay;

namespace {

ClusterConfig ring_only_cfg(uint64_t seed = 1) {
  ClusterConfig cfg;
  cfg.seed = seed;
  cfg.monitor.publish_interval_ms = 0;  // overlay-focused scenarios
  cfg.latency_min_ms = 1;
  cfg.latency_max_ms = 3;
  cfg.ping_interval_ms = 200;
  return cfg;
}

// Independent oracle: linear scan of the sorted live ids with wraparound.
Address sorted_ring_oracle(const std::map<NodeId, Address>& ids, NodeId k) {
  auto it = ids.lower_bound(k);
  if (it == ids.end()) it = ids.begin();
  return it->second;
}

}  // namespace

TEST_CASE("sha1 matches the standard test vectors") {
  CHECK(sha1_hex("abc") == "a9993e364706816aba3e25717850c26c9cd0d89d");
  CHECK(sha1_hex("") == "da39a3ee5e6b4b0d3255bfef95601890afd80709");
  CHECK(sha1_hex("The quick brown fox jumps over the lazy dog") ==
        "2fd4e1c67a2d28fced849ee1bb76e7391b93eb12");
  CHECK(sha1_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
        "84983e441c3bd26ebaae4aa1f95129e5e54670f1");
  CHECK(sha1_hex(std::string(1000, 'a')) ==
        "291e9a6c66994949b57ba5e650361e98fc36b1ba");
}

TEST_CASE("node_id takes the top m bits of the address hash") {
  // sha1("n1") = 40b3eab6..., sha1("n2") = 40243476... (external tool)
  CHECK(node_id("n1", 32) == 0x40b3eab6u);
  CHECK(node_id("n2", 32) == 0x40243476u);
  CHECK(node_id("n1", 16) == 0x40b3u);
  CHECK(node_id("n1", 32) == node_id("n1", 32));
  CHECK(node_id("n1", 32) != node_id("n2", 32));
  // m=6: id is the top 6 bits of the first byte
  CHECK(node_id("x4", 6) == 10);
  CHECK(node_id("x75", 6) == 20);
  CHECK(node_id("x12", 6) == 30);
}

TEST_CASE("ring interval membership handles wraparound") {
  CHECK(in_oc(25, 20, 30));
  CHECK(in_oc(30, 20, 30));
  CHECK(!in_oc(20, 20, 30));
  CHECK(in_oc(5, 60, 10));  // wraps
  CHECK(in_oc(62, 60, 10));
  CHECK(!in_oc(40, 60, 10));
  CHECK(in_oc(7, 7, 7));    // degenerate: full circle
  CHECK(in_oo(25, 20, 30));
  CHECK(!in_oo(30, 20, 30));
  CHECK(!in_oo(7, 7, 7));
  CHECK(in_oo(9, 7, 7));
}

TEST_CASE("find_successor on the spec ring {10,20,30} with m=6") {
  ClusterConfig cfg = ring_only_cfg();
  cfg.m_bits = 6;
  cluster::SimHarness h(cfg);
  h.start_node("x4", std::nullopt);          // id 10
  h.start_node("x75", Address("x4"));        // id 20
  h.start_node("x12", Address("x4"));        // id 30
  h.run_for(cfg.ping_interval_ms * 9 * 3);   // stabilize

  std::map<NodeId, Address> ids = {{10, "x4"}, {20, "x75"}, {30, "x12"}};
  for (const auto& [k, want] : std::vector<std::pair<NodeId, Address>>{
           {25, "x12"},  // id 30
           {60, "x4"},   // wraparound -> id 10
           {10, "x4"},
           {11, "x75"},
           {0, "x4"}}) {
    CHECK(sorted_ring_oracle(ids, k) == want);  // oracle sanity
    for (const auto& a : h.live()) {
      std::optional<Result<Address>> got;
      h.instance(a)->ring().find_successor(k, [&](Result<Address> r) { got = r; });
      h.settle(5000);
      REQUIRE(got.has_value());
      REQUIRE(got->ok());
      CHECK(got->value() == want);
    }
  }
}

TEST_CASE("first node forms a singleton ring") {
  cluster::SimHarness h(ring_only_cfg());
  h.start_node("n1", std::nullopt);
  auto* inst = h.instance("n1");
  REQUIRE(inst != nullptr);
  CHECK(inst->ring().alone());
  const auto& ring = inst->ring().ring();
  REQUIRE(ring.successors.size() == 1);
  CHECK(ring.successors[0].addr == "n1");

  std::optional<Result<Address>> got;
  inst->ring().find_successor(12345, [&](Result<Address> r) { got = r; });
  h.settle(1000);
  REQUIRE(got.has_value());
  CHECK(got->value() == "n1");
}

TEST_CASE("two nodes stabilize into each other's successor") {
  cluster::SimHarness h(ring_only_cfg());
  h.start_node("n1", std::nullopt);
  h.start_node("n2", Address("n1"));
  h.run_for(h.config().ping_interval_ms * 10);

  auto* a = h.instance("n1");
  auto* b = h.instance("n2");
  CHECK(a->ring().successor().addr == "n2");
  CHECK(b->ring().successor().addr == "n1");
  REQUIRE(a->ring().ring().predecessor.has_value());
  CHECK(a->ring().ring().predecessor->addr == "n2");
  REQUIRE(b->ring().ring().predecessor.has_value());
  CHECK(b->ring().ring().predecessor->addr == "n1");
}

TEST_CASE("join through an unreachable bootstrap fails") {
  cluster::SimHarness h(ring_only_cfg());
  h.start_node("n1", Address("ghost"));
  h.settle(30000);
  bool saw_failure = false;
  for (const auto& e : h.events()) {
    if (e.value("ev", "") == "boot_failed") saw_failure = true;
  }
  CHECK(saw_failure);
}

TEST_CASE("ten nodes converge to the sorted-ring oracle") {
  ClusterConfig cfg = ring_only_cfg(42);
  cluster::SimHarness h(cfg);
  std::vector<Address> addrs;
  for (int i = 1; i <= 10; ++i) addrs.push_back("n" + std::to_string(i));
  h.start_node(addrs[0], std::nullopt);
  for (size_t i = 1; i < addrs.size(); ++i) {
    h.start_node(addrs[i], addrs[0], false);
    h.run_for(cfg.ping_interval_ms / 2);  // staggered joins
  }
  // convergence bound: 3 x ring size rounds after churn stops
  h.run_for(3 * 10 * cfg.ping_interval_ms);
  CHECK(h.check_assert(json{{"kind", "ring_converged"}, {"keys", 100}}).ok());
}

TEST_CASE("crashed predecessor triggers exactly one upcall from its successor") {
  ClusterConfig cfg = ring_only_cfg(7);
  cluster::SimHarness h(cfg);
  h.start_node("n1", std::nullopt);
  h.start_node("n2", Address("n1"));
  h.start_node("n3", Address("n1"));
  h.run_for(cfg.ping_interval_ms * 12);
  CHECK(h.check_assert(json{{"kind", "ring_converged"}, {"keys", 16}}).ok());

  // expected detector: the crashed node's ring successor
  std::map<NodeId, Address> ids;
  for (const auto& a : h.live()) ids[node_id(a, cfg.m_bits)] = a;
  const NodeId crash_id = node_id("n2", cfg.m_bits);
  auto it = ids.find(crash_id);
  REQUIRE(it != ids.end());
  auto next = std::next(it) == ids.end() ? ids.begin() : std::next(it);
  const Address expected_detector = next->second;

  const uint64_t crash_time = h.now();
  h.crash("n2");
  h.run_for(cfg.ping_interval_ms * (cfg.ping_timeout_count + 3));

  int upcalls = 0;
  for (const auto& e : h.events()) {
    if (e.value("ev", "") == "upcall" && e.value("failed", "") == "n2") {
      ++upcalls;
      CHECK(e.value("detected_by", "") == expected_detector);
      // within ping_timeout_count rounds (+1 for the probe in flight)
      CHECK(e.value("t", uint64_t(0)) <=
            crash_time + (cfg.ping_timeout_count + 1) * cfg.ping_interval_ms +
                cfg.latency_max_ms * 4);
    }
  }
  CHECK(upcalls == 1);

  // ring heals around the gap
  h.run_for(cfg.ping_interval_ms * 10);
  CHECK(h.check_assert(json{{"kind", "ring_converged"}, {"keys", 16}}).ok());
}

TEST_CASE("upcall sequences are deterministic under a fixed seed") {
  auto run = [](uint64_t seed) {
    ClusterConfig cfg = ring_only_cfg(seed);
    cluster::SimHarness h(cfg);
    h.start_node("n1", std::nullopt);
    for (int i = 2; i <= 5; ++i) h.start_node("n" + std::to_string(i), Address("n1"), false);
    h.run_for(cfg.ping_interval_ms * 20);
    h.crash("n3");
    h.run_for(cfg.ping_interval_ms * 8);
    h.crash("n5");
    h.run_for(cfg.ping_interval_ms * 8);
    std::string out;
    for (const auto& e : h.events()) {
      if (e.value("ev", "") == "upcall") out += e.dump() + "\n";
    }
    return out;
  };
  const std::string a = run(99);
  const std::string b = run(99);
  CHECK(a == b);
  CHECK(!a.empty());
}

TEST_CASE("graceful leave splices the ring without an upcall") {
  ClusterConfig cfg = ring_only_cfg(5);
  cluster::SimHarness h(cfg);
  h.start_node("n1", std::nullopt);
  h.start_node("n2", Address("n1"));
  h.start_node("n3", Address("n1"));
  h.run_for(cfg.ping_interval_ms * 12);

  auto left = h.leave("n2");
  REQUIRE(left.ok());
  h.run_for(cfg.ping_interval_ms * (cfg.ping_timeout_count + 4));
  CHECK(h.check_assert(json{{"kind", "no_upcalls"}}).ok());
  CHECK(h.check_assert(json{{"kind", "ring_converged"}, {"keys", 16}}).ok());
  CHECK(h.live() == std::vector<Address>{"n1", "n3"});
}

TEST_CASE("lookups with finger tables enabled still match the oracle") {
  ClusterConfig cfg = ring_only_cfg(11);
  cfg.use_fingers = true;
  cluster::SimHarness h(cfg);
  h.start_node("n1", std::nullopt);
  for (int i = 2; i <= 8; ++i) {
    h.start_node("n" + std::to_string(i), Address("n1"), false);
    h.run_for(cfg.ping_interval_ms);
  }
  h.run_for(3 * 8 * cfg.ping_interval_ms);
  CHECK(h.check_assert(json{{"kind", "ring_converged"}, {"keys", 64}}).ok());
}
