#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "h2o/storage.hpp"

using namespace h2o;
using namespace h2o::storage;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() /
               ("h2o_storage_test_" + tag + "_" + std::to_string(++counter));
  fs::remove_all(p);
  return p;
}

TableSchema xy_schema() {
  return TableSchema{"X",
                     {sql::ColumnDef{"a_id", sql::ColType::Int},
                      sql::ColumnDef{"name", sql::ColType::Text}}};
}

LogEntry entry(uint64_t seq, const std::string& stmt) {
  return LogEntry{seq, "t:" + std::to_string(seq), stmt};
}

// Independent oracle: replay statements onto plain vectors, then filter.
// Mirrors the row-id rule (monotonic insert counter) without touching
// ReplicaStore internals.
struct OracleTable {
  std::map<int64_t, std::vector<sql::Value>> rows;
  int64_t next_id = 1;

  void apply(const std::string& text) {
    auto stmt = sql::parse(text);
    REQUIRE(stmt.ok());
    if (const auto* ins = std::get_if<sql::Insert>(&stmt.value())) {
      rows[next_id++] = ins->values;
    } else if (const auto* del = std::get_if<sql::Delete>(&stmt.value())) {
      std::vector<int64_t> hit;
      for (auto& [id, vals] : rows) {
        if (matches(vals, del->where)) hit.push_back(id);
      }
      for (auto id : hit) rows.erase(id);
    } else if (const auto* up = std::get_if<sql::Update>(&stmt.value())) {
      for (auto& [id, vals] : rows) {
        if (!matches(vals, up->where)) continue;
        if (up->assignments[0].first == "a_id") vals[0] = up->assignments[0].second;
        else vals[1] = up->assignments[0].second;
      }
    }
  }

  static bool matches(const std::vector<sql::Value>& vals,
                      const std::optional<sql::Predicate>& where) {
    if (!where) return true;
    for (const auto& a : where->atoms) {
      const sql::Value& lhs = a.lhs.column == "a_id" ? vals[0] : vals[1];
      int cmp;
      if (std::holds_alternative<int64_t>(lhs)) {
        int64_t l = std::get<int64_t>(lhs), r = std::get<int64_t>(*a.rhs_value);
        cmp = l < r ? -1 : (l > r ? 1 : 0);
      } else {
        cmp = std::get<std::string>(lhs).compare(std::get<std::string>(*a.rhs_value));
        cmp = cmp < 0 ? -1 : (cmp > 0 ? 1 : 0);
      }
      bool ok = false;
      switch (a.op) {
        case sql::CmpOp::Eq: ok = cmp == 0; break;
        case sql::CmpOp::Lt: ok = cmp < 0; break;
        case sql::CmpOp::Gt: ok = cmp > 0; break;
        case sql::CmpOp::Le: ok = cmp <= 0; break;
        case sql::CmpOp::Ge: ok = cmp >= 0; break;
        case sql::CmpOp::Ne: ok = cmp != 0; break;
      }
      if (!ok) return false;
    }
    return true;
  }
};

}  // namespace

TEST_CASE("insert then scan returns one row") {
  auto store = ReplicaStore::create(fresh_dir("ins"), xy_schema());
  REQUIRE(store.ok());
  auto& s = store.value();
  auto r = s.apply_committed(entry(1, "INSERT INTO X VALUES (1, 'a')"));
  REQUIRE(r.ok());
  CHECK(r.value() == 1);
  auto rows = s.scan(std::nullopt);
  REQUIRE(rows.ok());
  REQUIRE(rows.value().size() == 1);
  CHECK(rows.value()[0].id == 1);
  CHECK(std::get<int64_t>(rows.value()[0].values[0]) == 1);
  ReplicaStore::destroy(s.dir());
}

TEST_CASE("re-applying an entry is idempotent") {
  auto store = ReplicaStore::create(fresh_dir("idem"), xy_schema());
  REQUIRE(store.ok());
  auto& s = store.value();
  REQUIRE(s.apply_committed(entry(1, "INSERT INTO X VALUES (1, 'a')")).ok());
  const std::string before = s.fingerprint();
  auto again = s.apply_committed(entry(1, "INSERT INTO X VALUES (1, 'a')"));
  REQUIRE(again.ok());
  CHECK(again.value() == 0);
  CHECK(s.fingerprint() == before);
  ReplicaStore::destroy(s.dir());
}

TEST_CASE("sequence gaps are rejected") {
  auto store = ReplicaStore::create(fresh_dir("gap"), xy_schema());
  REQUIRE(store.ok());
  auto& s = store.value();
  REQUIRE(s.apply_committed(entry(1, "INSERT INTO X VALUES (1, 'a')")).ok());
  auto r = s.apply_committed(entry(3, "INSERT INTO X VALUES (3, 'c')"));
  CHECK(r.code() == Err::SequenceGap);
  CHECK(s.applied_seq() == 1);
  ReplicaStore::destroy(s.dir());
}

TEST_CASE("scan with predicate picks matching rows in id order") {
  auto store = ReplicaStore::create(fresh_dir("scan"), xy_schema());
  REQUIRE(store.ok());
  auto& s = store.value();
  REQUIRE(s.apply_committed(entry(1, "INSERT INTO X VALUES (1, 'a')")).ok());
  REQUIRE(s.apply_committed(entry(2, "INSERT INTO X VALUES (2, 'b')")).ok());
  REQUIRE(s.apply_committed(entry(3, "INSERT INTO X VALUES (3, 'c')")).ok());

  auto stmt = sql::parse("SELECT * FROM X WHERE X.a_id = 2");
  REQUIRE(stmt.ok());
  auto rows = s.scan(std::get<sql::Select>(stmt.value()).where);
  REQUIRE(rows.ok());
  REQUIRE(rows.value().size() == 1);
  CHECK(std::get<std::string>(rows.value()[0].values[1]) == "b");

  CHECK(s.scan(std::nullopt).value().size() == 3);
  ReplicaStore::destroy(s.dir());
}

TEST_CASE("scan on empty store returns nothing") {
  auto store = ReplicaStore::create(fresh_dir("empty"), xy_schema());
  REQUIRE(store.ok());
  CHECK(store.value().scan(std::nullopt).value().empty());
  ReplicaStore::destroy(store.value().dir());
}

TEST_CASE("unknown predicate column is a bind error") {
  auto store = ReplicaStore::create(fresh_dir("bind"), xy_schema());
  REQUIRE(store.ok());
  sql::Predicate p;
  sql::Atom a;
  a.lhs = sql::ColumnRef{"X", "nope"};
  a.op = sql::CmpOp::Eq;
  a.rhs_value = sql::Value{int64_t(1)};
  p.atoms.push_back(a);
  REQUIRE(store.value().apply_committed(entry(1, "INSERT INTO X VALUES (1, 'a')")).ok());
  CHECK(store.value().scan(p).code() == Err::BindError);
  ReplicaStore::destroy(store.value().dir());
}

TEST_CASE("scan equals replay-then-filter oracle on random histories") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    auto store = ReplicaStore::create(fresh_dir("oracle"), xy_schema());
    REQUIRE(store.ok());
    auto& s = store.value();
    OracleTable oracle;
    uint64_t seq = 0;
    for (int i = 0; i < 40; ++i) {
      std::string stmt;
      const int pick = int(rng() % 10);
      if (pick < 6) {
        stmt = "INSERT INTO X VALUES (" + std::to_string(int64_t(rng() % 10)) + ", '" +
               std::string(1, char('a' + rng() % 4)) + "')";
      } else if (pick < 8) {
        stmt = "UPDATE X SET name = '" + std::string(1, char('a' + rng() % 4)) +
               "' WHERE X.a_id = " + std::to_string(int64_t(rng() % 10));
      } else {
        stmt = "DELETE FROM X WHERE X.a_id = " + std::to_string(int64_t(rng() % 10));
      }
      REQUIRE(s.apply_committed(entry(++seq, stmt)).ok());
      oracle.apply(stmt);
    }
    // full-scan comparison
    auto rows = s.scan(std::nullopt);
    REQUIRE(rows.ok());
    REQUIRE(rows.value().size() == oracle.rows.size());
    size_t i = 0;
    for (const auto& [id, vals] : oracle.rows) {
      CHECK(rows.value()[i].id == id);
      CHECK(rows.value()[i].values == vals);
      ++i;
    }
    // filtered comparison
    auto stmt = sql::parse("SELECT * FROM X WHERE X.a_id >= 5");
    auto filtered = s.scan(std::get<sql::Select>(stmt.value()).where);
    REQUIRE(filtered.ok());
    size_t expect = 0;
    for (const auto& [id, vals] : oracle.rows) {
      if (std::get<int64_t>(vals[0]) >= 5) ++expect;
    }
    CHECK(filtered.value().size() == expect);
    ReplicaStore::destroy(s.dir());
  }
}

TEST_CASE("recover rebuilds the exact live state") {
  const fs::path dir = fresh_dir("recover");
  std::string live_fp;
  {
    auto store = ReplicaStore::create(dir, xy_schema());
    REQUIRE(store.ok());
    auto& s = store.value();
    uint64_t seq = 0;
    for (int i = 0; i < 10; ++i) {
      std::string stmt = i % 3 == 2
                             ? "DELETE FROM X WHERE X.a_id = " + std::to_string(i - 1)
                             : "INSERT INTO X VALUES (" + std::to_string(i) + ", 'r')";
      REQUIRE(s.apply_committed(entry(++seq, stmt)).ok());
    }
    live_fp = s.fingerprint();
  }
  auto back = ReplicaStore::recover(dir);
  REQUIRE(back.ok());
  CHECK(back.value().fingerprint() == live_fp);
  CHECK(back.value().applied_seq() == 10);
  ReplicaStore::destroy(dir);
}

TEST_CASE("recover of an empty log yields an empty table") {
  const fs::path dir = fresh_dir("recover_empty");
  {
    auto store = ReplicaStore::create(dir, xy_schema());
    REQUIRE(store.ok());
  }
  auto back = ReplicaStore::recover(dir);
  REQUIRE(back.ok());
  CHECK(back.value().applied_seq() == 0);
  CHECK(back.value().row_count() == 0);
  ReplicaStore::destroy(dir);
}

TEST_CASE("a torn final log line is truncated and ignored") {
  const fs::path dir = fresh_dir("torn");
  {
    auto store = ReplicaStore::create(dir, xy_schema());
    REQUIRE(store.ok());
    auto& s = store.value();
    REQUIRE(s.apply_committed(entry(1, "INSERT INTO X VALUES (1, 'a')")).ok());
    REQUIRE(s.apply_committed(entry(2, "INSERT INTO X VALUES (2, 'b')")).ok());
  }
  {
    std::ofstream out(dir / "log.jsonl", std::ios::app | std::ios::binary);
    out << R"({"seq":3,"txn":"t:3","stmt":"INSERT INTO X VA)";  // no newline
  }
  auto back = ReplicaStore::recover(dir);
  REQUIRE(back.ok());
  CHECK(back.value().applied_seq() == 2);
  CHECK(back.value().row_count() == 2);

  // truncation leaves a cleanly appendable log
  auto more = back.value().apply_committed(entry(3, "INSERT INTO X VALUES (3, 'c')"));
  REQUIRE(more.ok());
  auto again = ReplicaStore::recover(dir);
  REQUIRE(again.ok());
  CHECK(again.value().applied_seq() == 3);
  ReplicaStore::destroy(dir);
}

TEST_CASE("missing schema file is a recovery error") {
  const fs::path dir = fresh_dir("noschema");
  fs::create_directories(dir);
  CHECK(ReplicaStore::recover(dir).code() == Err::RecoveryError);
  ReplicaStore::destroy(dir);
}

TEST_CASE("mid-log gap is a recovery error, not silently skipped") {
  const fs::path dir = fresh_dir("midgap");
  {
    auto store = ReplicaStore::create(dir, xy_schema());
    REQUIRE(store.ok());
    REQUIRE(store.value().apply_committed(entry(1, "INSERT INTO X VALUES (1, 'a')")).ok());
  }
  {
    std::ofstream out(dir / "log.jsonl", std::ios::app | std::ios::binary);
    out << LogEntry{3, "t:3", "INSERT INTO X VALUES (3, 'c')"}.to_json().dump() << "\n";
    out << LogEntry{4, "t:4", "INSERT INTO X VALUES (4, 'd')"}.to_json().dump() << "\n";
  }
  CHECK(ReplicaStore::recover(dir).code() == Err::RecoveryError);
  ReplicaStore::destroy(dir);
}

TEST_CASE("install from a copied log reproduces the source byte-for-byte") {
  const fs::path src_dir = fresh_dir("copy_src");
  auto src = ReplicaStore::create(src_dir, xy_schema());
  REQUIRE(src.ok());
  uint64_t seq = 0;
  for (int i = 0; i < 12; ++i) {
    REQUIRE(src.value()
                .apply_committed(entry(++seq, "INSERT INTO X VALUES (" +
                                                  std::to_string(i) + ", 'v')"))
                .ok());
  }
  const fs::path dst_dir = fresh_dir("copy_dst");
  auto dst = ReplicaStore::install(dst_dir, src.value().schema(), src.value().log());
  REQUIRE(dst.ok());
  CHECK(dst.value().fingerprint() == src.value().fingerprint());

  std::ifstream a(src_dir / "log.jsonl"), b(dst_dir / "log.jsonl");
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  ReplicaStore::destroy(src_dir);
  ReplicaStore::destroy(dst_dir);
}

TEST_CASE("bind checks reject malformed writes") {
  auto store = ReplicaStore::create(fresh_dir("bindchk"), xy_schema());
  REQUIRE(store.ok());
  auto& s = store.value();
  auto bad_count = sql::parse("INSERT INTO X VALUES (1)");
  REQUIRE(bad_count.ok());
  CHECK(s.bind_check(bad_count.value()).code == Err::BindError);

  auto bad_type = sql::parse("INSERT INTO X VALUES ('one', 'a')");
  REQUIRE(bad_type.ok());
  CHECK(s.bind_check(bad_type.value()).code == Err::BindError);

  auto bad_col = sql::parse("UPDATE X SET zz = 1");
  REQUIRE(bad_col.ok());
  CHECK(s.bind_check(bad_col.value()).code == Err::BindError);

  auto wrong_table = sql::parse("INSERT INTO Y VALUES (1, 'a')");
  REQUIRE(wrong_table.ok());
  CHECK(s.bind_check(wrong_table.value()).code == Err::BindError);
  ReplicaStore::destroy(s.dir());
}
