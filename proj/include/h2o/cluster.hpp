#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "h2o/node.hpp"

namespace h2o::cluster {

using node::json;

struct ScriptOp {
  uint64_t at = 0;
  std::string op;  // start_node | sql | crash | leave | partition | heal |
                   // set_resources | assert
  json args;
};

using Script = std::vector<ScriptOp>;

// JSON lines, one op per line: {"at":1000,"op":"sql","node":"n1","text":"..."}.
Result<Script> parse_script(std::istream& in);

// Whole-cluster deterministic simulation: every instance is a serial mailbox
// driven by one scheduler; identical (config, script) pairs produce
// byte-identical event logs.
class SimHarness {
 public:
  explicit SimHarness(ClusterConfig cfg);
  ~SimHarness();

  SimHarness(const SimHarness&) = delete;
  SimHarness& operator=(const SimHarness&) = delete;

  // -- direct control for tests -------------------------------------------
  void start_node(const Address& a, std::optional<Address> bootstrap,
                  bool wait_booted = true);
  void crash(const Address& a);
  Result<json> leave(const Address& a);
  Result<json> sql(const Address& node, const std::string& text);
  // Fire-and-forget submission; the reply (if any) lands in the event flow.
  uint64_t sql_async(const Address& node, const std::string& text);
  Result<json> status(const Address& node);
  void set_resources(const Address& a, const json& sample);
  void partition(const std::vector<std::vector<Address>>& groups);
  void heal();

  void run_for(uint64_t ms);
  // Pumps until every live instance is idle and no deliveries are pending,
  // or until `bound_ms` of simulated time passes. True when idle.
  bool settle(uint64_t bound_ms = 30000);
  uint64_t now() const { return net_.now(); }

  node::Instance* instance(const Address& a);
  std::vector<Address> live() const;
  const std::vector<json>& events() const { return events_; }
  std::string event_log_text() const;
  const ClusterConfig& config() const { return cfg_; }
  std::filesystem::path node_dir(const Address& a) const { return root_ / a; }
  std::filesystem::path root() const { return root_; }

  // -- script mode ----------------------------------------------------------
  // Executes ops at their logical times; failed expectations or assert ops
  // return the first failure.
  Status run_script(const Script& script);
  Status check_assert(const json& args);

 private:
  class NodeTransport;
  friend class NodeTransport;

  struct NodeRec {
    std::unique_ptr<NodeTransport> transport;
    std::unique_ptr<node::Instance> inst;
    uint64_t incarnation = 0;
    bool dead = false;
  };

  struct TimerRec {
    Address owner;
    uint64_t incarnation = 0;
    std::function<void()> fn;
  };

  void pump_one();
  void advance_to(uint64_t t);
  bool all_idle() const;
  void push_event(json ev);
  uint64_t submit_client(const Address& node, const std::string& type, json body);
  Result<json> await_reply(uint64_t rid, uint64_t max_wait_ms);
  void remove_node(const Address& a);
  Address keeper_node() const;
  Result<json> tm_state_for(const std::string& table) const;

  ClusterConfig cfg_;
  wire::SimNet net_;
  std::map<Address, NodeRec> nodes_;
  std::map<uint64_t, TimerRec> timers_;
  uint64_t timer_seq_ = 0;
  std::vector<json> events_;
  uint64_t event_seq_ = 0;
  std::map<uint64_t, json> client_replies_;
  uint64_t client_rid_ = 0;
  std::filesystem::path root_;
  bool owns_root_ = false;
  uint64_t upcall_count_ = 0;
};

}  // namespace h2o::cluster
