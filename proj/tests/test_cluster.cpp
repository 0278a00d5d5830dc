#include <doctest.h>

#include <fstream>
#include <sstream>

#include "h2o/cluster.hpp"

using namespace h2o;
using namespace h2o::cluster;
using node::json;

namespace {

ClusterConfig fast_cfg(uint64_t seed = 1) {
  ClusterConfig cfg;
  cfg.seed = seed;
  cfg.ping_interval_ms = 200;
  cfg.monitor.publish_interval_ms = 500;
  cfg.latency_min_ms = 1;
  cfg.latency_max_ms = 3;
  cfg.lock_wait_ms = 1500;
  cfg.prepare_timeout_ms = 600;
  return cfg;
}

void boot_cluster(SimHarness& h, int n) {
  h.start_node("n1", std::nullopt);
  for (int i = 2; i <= n; ++i) {
    h.start_node("n" + std::to_string(i), Address("n1"));
  }
  // a couple of monitor rounds so every instance has published scores
  h.run_for(3 * h.config().monitor.publish_interval_ms);
  h.settle();
}

}  // namespace

TEST_CASE("single node: create, insert, select round-trip") {
  SimHarness h(fast_cfg());
  boot_cluster(h, 1);

  auto created = h.sql("n1", "CREATE TABLE X (a_id INT, name TEXT)");
  REQUIRE(created.ok());

  auto ins = h.sql("n1", "INSERT INTO X VALUES (1, 'a')");
  REQUIRE(ins.ok());
  CHECK(ins.value().value("affected", 0) == 1);

  auto rows = h.sql("n1", "SELECT * FROM X");
  REQUIRE(rows.ok());
  CHECK(rows.value().at("rows") == json::array({json::array({1, "a"})}));
  CHECK(rows.value().at("columns") == json::array({"X.a_id", "X.name"}));
}

TEST_CASE("bootstrap creates the monitor table automatically") {
  SimHarness h(fast_cfg());
  boot_cluster(h, 1);
  auto rows = h.sql("n1", "SELECT * FROM _MONITOR");
  REQUIRE(rows.ok());
  // one publish interval has passed in boot_cluster, so n1 has a row
  CHECK(rows.value().at("rows").size() == 1);
}

TEST_CASE("three nodes: replicated table, remote reads, convergence") {
  SimHarness h(fast_cfg(3));
  boot_cluster(h, 3);

  REQUIRE(h.sql("n1", "CREATE TABLE X (a_id INT, name TEXT) REPLICATION 2").ok());
  REQUIRE(h.sql("n1", "INSERT INTO X VALUES (1, 'a')").ok());
  REQUIRE(h.sql("n2", "INSERT INTO X VALUES (2, 'b')").ok());
  REQUIRE(h.sql("n3", "INSERT INTO X VALUES (3, 'c')").ok());
  h.settle();

  // location independence: same result from every entry point
  const json expect = json::array(
      {json::array({1, "a"}), json::array({2, "b"}), json::array({3, "c"})});
  for (const auto& a : h.live()) {
    auto rows = h.sql(a, "SELECT * FROM X");
    REQUIRE(rows.ok());
    CHECK(rows.value().at("rows") == expect);
  }

  CHECK(h.check_assert(json{{"kind", "replica_count"}, {"table", "X"}, {"expect", 2}}).ok());
  CHECK(h.check_assert(json{{"kind", "replicas_identical"}, {"table", "X"}}).ok());
  CHECK(h.check_assert(json{{"kind", "all_converged"}}).ok());
}

TEST_CASE("update and delete flow through 2PC") {
  SimHarness h(fast_cfg(4));
  boot_cluster(h, 2);
  REQUIRE(h.sql("n1", "CREATE TABLE t (k INT, v TEXT) REPLICATION 2").ok());
  REQUIRE(h.sql("n1", "INSERT INTO t VALUES (1, 'x')").ok());
  REQUIRE(h.sql("n1", "INSERT INTO t VALUES (2, 'y')").ok());

  auto upd = h.sql("n2", "UPDATE t SET v = 'z' WHERE t.k = 2");
  REQUIRE(upd.ok());
  CHECK(upd.value().value("affected", 0) == 1);

  auto del = h.sql("n2", "DELETE FROM t WHERE t.k = 1");
  REQUIRE(del.ok());
  CHECK(del.value().value("affected", 0) == 1);

  auto rows = h.sql("n1", "SELECT * FROM t");
  REQUIRE(rows.ok());
  CHECK(rows.value().at("rows") == json::array({json::array({2, "z"})}));
  h.settle();
  CHECK(h.check_assert(json{{"kind", "all_converged"}}).ok());
}

TEST_CASE("errors: unknown table, duplicate create, syntax") {
  SimHarness h(fast_cfg(5));
  boot_cluster(h, 2);
  CHECK(h.sql("n1", "SELECT * FROM nope").code() == Err::NoSuchTable);
  CHECK(h.sql("n1", "DELETE FROM nope").code() == Err::NoSuchTable);
  REQUIRE(h.sql("n1", "CREATE TABLE d (a INT)").ok());
  CHECK(h.sql("n2", "CREATE TABLE d (a INT)").code() == Err::TableExists);
  CHECK(h.sql("n1", "SELEC * FROM d").code() == Err::SyntaxError);
}

TEST_CASE("drop table removes data and catalog entry") {
  SimHarness h(fast_cfg(6));
  boot_cluster(h, 2);
  REQUIRE(h.sql("n1", "CREATE TABLE gone (a INT) REPLICATION 2").ok());
  REQUIRE(h.sql("n1", "INSERT INTO gone VALUES (9)").ok());
  REQUIRE(h.sql("n2", "DROP TABLE gone").ok());
  h.settle();
  CHECK(h.sql("n1", "SELECT * FROM gone").code() == Err::NoSuchTable);
  CHECK(h.check_assert(json{{"kind", "catalog_has"}, {"table", "gone"}, {"expect", false}}).ok());
  // recreate after drop works
  REQUIRE(h.sql("n1", "CREATE TABLE gone (a INT)").ok());
}

TEST_CASE("reads block behind a write lock and see the committed value") {
  SimHarness h(fast_cfg(7));
  boot_cluster(h, 2);
  REQUIRE(h.sql("n1", "CREATE TABLE w (a INT) REPLICATION 2").ok());
  REQUIRE(h.sql("n1", "INSERT INTO w VALUES (1)").ok());
  h.settle();
  // the serializability scenarios in the acceptance suite stress this
  // properly; here we just check a read after a write sees the write
  REQUIRE(h.sql("n2", "UPDATE w SET a = 5").ok());
  auto rows = h.sql("n2", "SELECT * FROM w");
  REQUIRE(rows.ok());
  CHECK(rows.value().at("rows") == json::array({json::array({5})}));
}

TEST_CASE("deterministic event logs: same script, same seed, same bytes") {
  auto run_once = [](uint64_t seed) {
    SimHarness h(fast_cfg(seed));
    boot_cluster(h, 3);
    (void)h.sql("n1", "CREATE TABLE X (a INT) REPLICATION 2");
    (void)h.sql("n2", "INSERT INTO X VALUES (1)");
    (void)h.sql("n3", "INSERT INTO X VALUES (2)");
    (void)h.sql("n1", "SELECT * FROM X");
    h.crash("n3");
    h.run_for(3000);
    h.settle();
    return h.event_log_text();
  };
  const std::string a = run_once(11);
  const std::string b = run_once(11);
  CHECK(a == b);
  CHECK(!a.empty());
  const std::string c = run_once(12);
  CHECK(a != c);  // different seed, different schedule
}

TEST_CASE("script runner: smoke script with self-checking asserts") {
  std::string script_text = R"SCRIPT(
{"at":0,"op":"start_node","node":"n1"}
{"at":500,"op":"start_node","node":"n2","bootstrap":"n1"}
{"at":3000,"op":"sql","node":"n1","text":"CREATE TABLE X (a_id INT, name TEXT) REPLICATION 2"}
{"at":3500,"op":"sql","node":"n1","text":"INSERT INTO X VALUES (1, 'one')"}
{"at":4000,"op":"sql","node":"n2","text":"SELECT * FROM X","expect_rows":[[1,"one"]]}
{"at":4500,"op":"assert","kind":"replica_count","table":"X","expect":2}
{"at":4600,"op":"assert","kind":"all_converged"}
)SCRIPT";
  std::istringstream in(script_text);
  auto script = parse_script(in);
  REQUIRE(script.ok());
  SimHarness h(fast_cfg(21));
  CHECK(h.run_script(script.value()).ok());
}

TEST_CASE("script runner: expectation failures are reported") {
  std::string script_text = R"SCRIPT(
{"at":0,"op":"start_node","node":"n1"}
{"at":2000,"op":"sql","node":"n1","text":"SELECT * FROM missing","expect_rows":[[1]]}
)SCRIPT";
  std::istringstream in(script_text);
  auto script = parse_script(in);
  REQUIRE(script.ok());
  SimHarness h(fast_cfg(22));
  CHECK(!h.run_script(script.value()).ok());
}

TEST_CASE("status snapshot reports membership, catalog, and replicas") {
  SimHarness h(fast_cfg(23));
  boot_cluster(h, 3);
  REQUIRE(h.sql("n1", "CREATE TABLE s (a INT) REPLICATION 2").ok());
  h.settle();
  auto st = h.status("n2");
  REQUIRE(st.ok());
  CHECK(st.value().at("ring").size() == 3);
  CHECK(st.value().at("catalog").contains("s"));
  CHECK(st.value().at("catalog").contains("_MONITOR"));
  CHECK(st.value().at("tables").at("s").at("replicas").size() == 2);
}
