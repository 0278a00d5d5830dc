#pragma once

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "h2o/overlay.hpp"
#include "h2o/runtime.hpp"

namespace h2o::systable {

using node::Envelope;
using node::json;
using node::NodeCtx;

// Well-known ring key the System Table pointer record lives under.
inline const char* kPointerKey = "SYSTEM_TABLE";

struct CatalogEntry {
  std::string table;
  Address tm;                        // live Table Manager location
  std::vector<Address> tm_meta;      // holders of the TM's persisted state
  uint64_t version = 1;              // bumped on every change

  json to_json() const;
  static CatalogEntry from_json(const json& j);
  bool operator==(const CatalogEntry&) const = default;
};

struct SystemTableState {
  std::map<std::string, CatalogEntry> entries;
  uint64_t version = 0;
  uint64_t epoch = 1;  // incremented on every re-instantiation

  json to_json() const;
  static SystemTableState from_json(const json& j);
};

struct PointerRecord {
  Address keeper;
  uint64_t epoch = 1;

  json to_json() const { return json{{"keeper", keeper}, {"epoch", epoch}}; }
  static PointerRecord from_json(const json& j) {
    return PointerRecord{j.at("keeper").get<std::string>(), j.at("epoch").get<uint64_t>()};
  }
};

// The authoritative catalog service plus the client-side discovery helpers.
// Any instance may be keeper, meta replica, pointer holder, or none of those;
// roles shift with failures and graceful departures.
class SysTableSvc {
 public:
  SysTableSvc(NodeCtx& ctx, overlay::RingNode& ring);

  bool handle(const Envelope& env);

  // -- bootstrap ----------------------------------------------------------
  // First instance in the cluster: creates an empty catalog and installs the
  // pointer record at the ring owner (itself, at that point).
  void become_first_keeper(std::function<void(Status)> done);

  // -- client operations (usable from any instance) ------------------------
  void locate(std::function<void(Result<Address>)> cb);
  void lookup(const std::string& table, std::function<void(Result<CatalogEntry>)> cb);
  void list_all(std::function<void(Result<std::map<std::string, CatalogEntry>>)> cb);
  void register_table(const CatalogEntry& e, std::function<void(Result<uint64_t>)> cb);
  // mode "set" upserts the entry, "remove" deletes it.
  void update_entry(const std::string& mode, const CatalogEntry& e,
                    std::function<void(Status)> cb);

  // -- failure / departure ------------------------------------------------
  // Detector-side entry point: decides whether the keeper itself died (and
  // drives its re-instantiation) and forwards NODE_FAILED to the keeper.
  void on_upcall(const Address& failed);

  // Keeper hand-off during graceful leave. Target is told to take over.
  void leave_handoff(std::function<void(Status)> done);

  // Pointer-record replication on ring topology changes.
  void on_topology_change();

  // A rejoined incarnation must be eligible for failure handling again.
  void alive_again(const Address& a) { handled_failures_.erase(a); }

  bool is_keeper() const { return keeper_; }
  const SystemTableState& state() const { return st_; }
  bool has_pointer() const { return ptr_.has_value(); }
  uint64_t busy() const { return mutations_in_flight_ + (recovering_ ? 1 : 0); }

 private:
  struct Mutation {
    std::string mode;  // "register" | "set" | "remove"
    CatalogEntry entry;
    Envelope req;  // replied to after sync completes
  };

  void handle_ptr_get(const Envelope& env);
  void handle_ptr_put(const Envelope& env);
  void handle_xfer_meta(const Envelope& env);
  void handle_lookup(const Envelope& env);
  void handle_mutation(const Envelope& env);
  void handle_sync(const Envelope& env);
  void handle_recover(const Envelope& env);
  void handle_takeover(const Envelope& env);
  void handle_node_failed(const Envelope& env);

  void pump_mutations();
  void sync_and_reply(std::function<void(Status)> done);
  void refresh_meta_set(bool force_sync);
  std::vector<Address> desired_meta() const;
  void persist();
  void install_pointer(const PointerRecord& rec, std::function<void(Status)> done);
  void promote_self(const Address& failed_keeper, std::function<void(Status)> done);
  void fanout_node_failed(const Address& failed);
  void recover_keeper(const Address& failed);

  NodeCtx& ctx_;
  overlay::RingNode& ring_;

  bool keeper_ = false;
  bool replica_ = false;  // holds a synced copy
  SystemTableState st_;
  std::vector<Address> meta_;  // current meta replica set (keeper view)
  std::optional<PointerRecord> ptr_;
  std::optional<Address> keeper_cache_;  // client-side hint

  std::deque<Mutation> pending_;
  uint64_t mutations_in_flight_ = 0;
  bool recovering_ = false;
  std::set<Address> handled_failures_;
};

}  // namespace h2o::systable
