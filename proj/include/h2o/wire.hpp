#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <queue>
#include <random>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "h2o/common.hpp"

namespace h2o::wire {

using json = nlohmann::json;

// A typed, framed message exchanged between database instances.
struct Envelope {
  int version = 1;
  std::string msg_type;
  Address from;
  Address to;
  uint64_t rid = 0;  // strictly increasing per sender within a process lifetime
  json body = json::object();

  bool operator==(const Envelope& o) const {
    return version == o.version && msg_type == o.msg_type && from == o.from &&
           to == o.to && rid == o.rid && body == o.body;
  }
};

// True iff `t` is one of the protocol message types understood by the system.
bool known_msg_type(const std::string& t);

// Reply-shaped types: correlated to a pending request by body["re"].
bool is_reply_type(const std::string& t);

// Canonical payload text: UTF-8 JSON, keys sorted, no insignificant whitespace.
std::string canonical_payload(const Envelope& env);

// [len: u32 big-endian][payload: canonical JSON]. Pure; equal inputs give
// byte-equal frames.
Result<std::vector<uint8_t>> encode_frame(const Envelope& env);

struct Decoded {
  Envelope env;
  size_t consumed = 0;  // exactly 4 + N bytes
};

Result<Decoded> decode_frame(std::span<const uint8_t> bytes);

// ---------------------------------------------------------------------------
// Deterministic simulated transport. Single-threaded: all transitions happen
// inside send()/schedule()/step() calls issued by one driver.

struct SimConfig {
  uint64_t seed = 1;
  uint32_t latency_min_ms = 1;
  uint32_t latency_max_ms = 5;
};

struct Delivery {
  Envelope env;
};

struct TimerFire {
  uint64_t timer_id = 0;
};

using SimEvent = std::variant<Delivery, TimerFire>;

class SimNet {
 public:
  explicit SimNet(SimConfig cfg);

  void register_node(const Address& a);
  // Clients sit outside the partition model: they reach every group.
  void register_client(const Address& a);
  void unregister_node(const Address& a);
  bool is_registered(const Address& a) const;

  // Nodes in different groups cannot exchange messages. Nodes not named in
  // any group keep their previous group assignment.
  void set_partitions(const std::vector<std::vector<Address>>& groups);
  void heal();

  // Enqueues a delivery at clock + latency drawn deterministically from the
  // seeded PRNG, unless a partition separates the endpoints or the
  // destination is unknown (silent drop; sender sees a timeout later).
  void send(Envelope env);

  // Schedules a timer event; returns its id. Cancellation is the caller's
  // concern (stale fires carry the id, the owner ignores unknown ids).
  uint64_t schedule(uint64_t delay_ms, uint64_t timer_id);

  // Advances the clock to the earliest pending event and returns every event
  // at that instant in enqueue order. Empty queue: returns {} and leaves the
  // clock unchanged.
  std::vector<SimEvent> step();

  // Moves the clock forward to t with nothing scheduled in between. Callers
  // must drain earlier events first.
  void advance_to(uint64_t t) { clock_ = std::max(clock_, t); }

  uint64_t now() const { return clock_; }
  size_t pending() const { return queue_.size(); }
  size_t pending_deliveries() const { return pending_deliveries_; }
  uint64_t next_event_at() const;  // UINT64_MAX when empty

  // Optional hook observing dropped messages (partition / unknown node).
  std::function<void(const Envelope&, const char* reason)> on_drop;

 private:
  struct Item {
    uint64_t at = 0;
    uint64_t seq = 0;
    SimEvent ev;
  };
  struct ItemOrder {
    bool operator()(const Item& a, const Item& b) const {
      if (a.at != b.at) return a.at > b.at;
      return a.seq > b.seq;
    }
  };

  uint64_t draw_latency();

  SimConfig cfg_;
  uint64_t clock_ = 0;
  uint64_t next_seq_ = 0;
  size_t pending_deliveries_ = 0;
  std::mt19937_64 rng_;
  std::priority_queue<Item, std::vector<Item>, ItemOrder> queue_;
  std::map<Address, int> group_;  // partition group per node, default 0
  std::set<Address> clients_;     // wildcard endpoints
};

}  // namespace h2o::wire
