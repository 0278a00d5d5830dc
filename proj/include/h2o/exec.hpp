#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "h2o/monitor.hpp"
#include "h2o/runtime.hpp"
#include "h2o/sql.hpp"
#include "h2o/storage.hpp"
#include "h2o/systable.hpp"
#include "h2o/tablemgr.hpp"

namespace h2o::exec {

using node::Envelope;
using node::json;
using node::NodeCtx;

// Planner inputs for one referenced table, as returned in TM_LOCK_REPLY.
struct TableInfo {
  std::vector<Address> replicas;
  int64_t row_count = 0;
  std::map<Address, uint64_t> routed;
};

struct Candidate {
  Address addr;
  double locality = 0;
  double score = 0;
  double combined = 0;
  json to_json() const {
    return json{{"addr", addr}, {"locality", locality}, {"score", score},
                {"combined", combined}};
  }
};

struct QueryPlan {
  Address executor;
  std::map<std::string, Address> table_sources;
  std::vector<std::string> lock_set;  // lexicographic table order
  std::vector<Candidate> candidates;

  json to_json() const;
  static QueryPlan from_json(const json& j);
};

// Pure executor choice: candidates are every live replica holder plus the
// caller; combined(c) = alpha*locality(c) + (1-alpha)*score(c); argmax with
// ties broken by higher locality, then smallest address. Table size is
// estimated as row_count * 64 bytes.
QueryPlan plan_select(const sql::Select& stmt, const Address& caller,
                      const std::map<std::string, TableInfo>& info,
                      const std::map<Address, double>& scores, double alpha);

// Deterministic local evaluation over materialized tables: per-table filters
// first, then a hash join on the first equality join atom, remaining join
// atoms as a post-filter. Output ordered by (left row id, right row id).
struct TableData {
  storage::TableSchema schema;
  std::vector<storage::Row> rows;
};
Result<json> evaluate(const sql::Select& stmt,
                      const std::map<std::string, TableData>& tables);

// Per-instance query coordinator and executor: runs the resolve -> lock ->
// plan -> ship -> release flow for reads, and the lock -> 2PC flow for
// writes, with bounded retries on retryable failures.
class Engine {
 public:
  Engine(NodeCtx& ctx, systable::SysTableSvc& st, tablemgr::ManagerHost& mgr,
         tablemgr::ReplicaHost& stores,
         std::function<std::map<Address, double>()> scores);

  bool handle(const Envelope& env);  // SQL_EXEC, EXEC_SHIP

  // Internal transactions (monitor publish, bootstrap DDL). Statements must
  // be a single SELECT or writes against one table.
  void submit_local(std::vector<sql::Statement> stmts,
                    std::function<void(Result<json>)> cb);

  void set_draining(bool d) { draining_ = d; }
  size_t active() const { return active_; }

 private:
  struct Txn {
    TxnId id;
    std::vector<sql::Statement> stmts;
    bool explain = false;
    int attempt = 0;
    std::optional<Envelope> client;  // reply target when external
    std::function<void(Result<json>)> cb;
    std::vector<std::string> tables;             // lock set, sorted
    std::map<std::string, systable::CatalogEntry> cat;
    std::map<std::string, TableInfo> info;
    std::vector<std::pair<std::string, Address>> locked;  // (table, tm addr)
    std::map<std::string, Address> routed;                // read sources used
    tablemgr::LockMode mode = tablemgr::LockMode::Read;
  };
  using TxnPtr = std::shared_ptr<Txn>;

  void handle_sql(const Envelope& env);
  void handle_ship(const Envelope& env);

  void run(TxnPtr t);
  void retry_or_fail(TxnPtr t, Status why);
  void resolve_tables(TxnPtr t, std::function<void(Status)> done);
  void lock_tables(TxnPtr t, std::function<void(Status)> done);
  void finalize(TxnPtr t, Status outcome, json result);
  void release_locks(TxnPtr t);

  void run_select(TxnPtr t);
  void execute_plan(TxnPtr t, const QueryPlan& plan,
                    std::function<void(Result<json>)> done);
  void execute_local(const sql::Select& stmt, const QueryPlan& plan,
                     std::function<void(Result<json>)> done);
  void run_write(TxnPtr t);
  void run_create(TxnPtr t);
  void run_drop(TxnPtr t);

  TxnId next_txn_id();
  uint64_t request_timeout() const;

  NodeCtx& ctx_;
  systable::SysTableSvc& st_;
  tablemgr::ManagerHost& mgr_;
  tablemgr::ReplicaHost& stores_;
  std::function<std::map<Address, double>()> scores_;
  std::map<std::string, systable::CatalogEntry> cache_;  // catalog hints
  uint64_t txn_counter_ = 0;
  size_t active_ = 0;
  bool draining_ = false;
};

}  // namespace h2o::exec
