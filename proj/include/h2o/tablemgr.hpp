#pragma once

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "h2o/runtime.hpp"
#include "h2o/storage.hpp"
#include "h2o/systable.hpp"

namespace h2o::tablemgr {

using node::Envelope;
using node::json;
using node::NodeCtx;

enum class LockMode { Read, Write };

const char* lock_mode_name(LockMode m);
LockMode lock_mode_from(const std::string& s);

// Table-level lock with FIFO wait queue. Compatibility: any number of READ
// holders, or exactly one WRITE holder and nothing else. Never persisted.
class LockTable {
 public:
  struct Grant {
    TxnId txn;
    LockMode mode;
  };

  // True: granted immediately (including a READ->WRITE upgrade for a sole
  // holder). False: queued FIFO behind earlier waiters.
  bool acquire(const TxnId& txn, LockMode mode);

  // Removes the holder (idempotent) and drains the longest compatible prefix
  // of the queue.
  std::vector<Grant> release(const TxnId& txn);

  // Withdraws a queued request (lock wait timeout); the removal may unblock
  // later waiters.
  std::vector<Grant> withdraw(const TxnId& txn);

  bool holds(const TxnId& txn) const { return holders_.count(txn) > 0; }
  std::optional<LockMode> holder_mode(const TxnId& txn) const;
  const std::map<TxnId, LockMode>& holders() const { return holders_; }
  size_t wait_count() const { return queue_.size(); }
  bool idle() const { return holders_.empty() && queue_.empty(); }
  bool write_held() const;

 private:
  struct Waiter {
    TxnId txn;
    LockMode mode;
  };
  bool compatible(LockMode mode) const;
  std::vector<Grant> drain();

  std::map<TxnId, LockMode> holders_;
  std::deque<Waiter> queue_;
};

struct AccessStats {
  uint64_t reads = 0;
  uint64_t writes = 0;
  std::map<Address, uint64_t> routed;  // reads routed per replica
  double ewma_ms = 0;                  // response-time EWMA, alpha = 0.2
  bool ewma_set = false;

  void record_response(double ms) {
    ewma_ms = ewma_set ? 0.2 * ms + 0.8 * ewma_ms : ms;
    ewma_set = true;
  }
  json to_json() const;
  static AccessStats from_json(const json& j);
};

// Deterministic read routing: highest availability score, ties broken by
// fewest routed reads, then lexicographically smallest address.
Address choose_read_replica(const std::vector<Address>& replicas,
                            const std::map<Address, uint64_t>& routed,
                            const std::map<Address, double>& scores);

// Persisted Table Manager state. The lock table is volatile by construction
// and lives outside this struct.
struct TmState {
  std::string table;
  std::vector<Address> replicas;
  int target_rf = 2;
  uint64_t commit_seq = 0;
  std::vector<Address> meta;  // holders of this persisted state
  AccessStats stats;
  uint64_t epoch = 1;

  json to_json() const;
  static Result<TmState> from_json(const json& j);
};

// Replica-side storage host: owns this instance's ReplicaStores and the 2PC
// participant logic (validate/vote, durable apply), plus repair copy streams
// and executor row fetches.
class ReplicaHost {
 public:
  explicit ReplicaHost(NodeCtx& ctx);

  bool handle(const Envelope& env);

  storage::ReplicaStore* get(const std::string& table);
  const std::map<std::string, storage::ReplicaStore>& all() const { return stores_; }
  Status create(const storage::TableSchema& schema);
  void drop(const std::string& table);
  void recover_all();  // boot-time: load every persisted table replica

 private:
  void handle_prepare(const Envelope& env);
  void handle_commit(const Envelope& env);
  void handle_copy_req(const Envelope& env);
  void handle_copy_data(const Envelope& env);
  void handle_fetch(const Envelope& env);
  void handle_repl_status(const Envelope& env);
  std::filesystem::path table_dir(const std::string& table) const;

  NodeCtx& ctx_;
  std::map<std::string, storage::ReplicaStore> stores_;
  std::map<std::string, uint64_t> seen_epoch_;  // stale-manager fencing
};

// All Table Managers hosted on one instance: strict table-level 2PL,
// two-phase commit across data replicas, autonomic replication repair,
// migration, and recovery from persisted copies.
class ManagerHost {
 public:
  using ScoresFn = std::function<std::map<Address, double>()>;
  using SuccessorsFn = std::function<std::vector<Address>()>;

  ManagerHost(NodeCtx& ctx, systable::SysTableSvc& st, ReplicaHost& stores,
              ScoresFn scores, SuccessorsFn successors);

  bool handle(const Envelope& env);

  // DDL entry point on the creating instance.
  void create_table(const storage::TableSchema& schema, int target_rf,
                    std::function<void(Result<uint64_t>)> cb);

  // Failure / membership events.
  void on_node_failed(const Address& failed);
  void alive_again(const Address& a) { known_dead_.erase(a); }
  void repair_scan();  // periodic: restore replication factors

  // Graceful leave support.
  void on_node_leaving(const Address& node, std::function<void(Status)> done);
  void migrate_all(std::function<void(Status)> done);
  void set_draining(bool d) { draining_ = d; }

  bool idle() const;
  json status_json() const;
  bool manages(const std::string& table) const { return tms_.count(table) > 0; }
  const TmState* state_of(const std::string& table) const;

 private:
  struct Tm {
    TmState st;
    LockTable locks;
    int64_t row_count = 0;
    std::map<TxnId, uint64_t> grant_time;
    std::map<TxnId, uint64_t> wait_timers;           // queued txn -> timer id
    std::map<TxnId, Envelope> wait_reqs;             // queued txn -> lock request
    std::map<TxnId, std::function<void(bool)>> wait_cbs;  // internal waiters
    std::set<TxnId> prepared;                        // txns inside 2PC
    bool repairing = false;
    bool dropping = false;
  };

  void handle_lock(const Envelope& env);
  void handle_release(const Envelope& env);
  void handle_update(const Envelope& env);
  void handle_drop(const Envelope& env);
  void handle_status(const Envelope& env);
  void handle_recover(const Envelope& env);
  void handle_migrate(const Envelope& env);
  void handle_meta_sync(const Envelope& env);

  void grant_reply(Tm& tm, const TxnId& txn, bool granted, Err err = Err::None);
  void deliver_grants(Tm& tm, const std::vector<LockTable::Grant>& grants);
  void acquire_internal(const std::string& table, const TxnId& txn, LockMode mode,
                        std::function<void(bool)> cb);
  void release_internal(const std::string& table, const TxnId& txn);

  void run_two_phase(Tm& tm, const TxnId& txn, std::vector<storage::LogEntry> entries,
                     std::function<void(Result<json>)> done);
  void persist(const Tm& tm);
  void meta_sync(Tm& tm);
  void refresh_meta(Tm& tm);
  void remove_replica_and_repair(const std::string& table, const Address& dead);
  void start_repair(const std::string& table, std::optional<Address> exclude,
                    std::function<void(Status)> done);
  void copy_to(Tm& tm, const Address& dest, std::optional<Address> avoid_source,
               std::function<void(Status)> done);
  void finish_recover(const std::string& table, TmState st,
                      std::function<void(Status)> done);
  std::vector<Address> recruit_candidates(const Tm& tm, std::optional<Address> exclude) const;
  TxnId internal_txn(const char* tag);

  NodeCtx& ctx_;
  systable::SysTableSvc& st_;
  ReplicaHost& stores_;
  ScoresFn scores_;
  SuccessorsFn successors_;
  std::map<std::string, Tm> tms_;
  std::map<std::string, json> tm_meta_store_;  // replicated TM state copies
  std::set<Address> known_dead_;
  uint64_t txn_counter_ = 0;
  bool draining_ = false;
};

}  // namespace h2o::tablemgr
