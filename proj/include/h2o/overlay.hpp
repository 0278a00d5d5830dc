#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "h2o/runtime.hpp"

namespace h2o::overlay {

using node::Envelope;
using node::json;
using node::NodeCtx;

// Ring identifier: top m bits of the SHA-1 of the address string, arithmetic
// modulo 2^m.
using NodeId = uint64_t;

NodeId node_id(const Address& addr, int m_bits);

// Ring interval membership with wraparound. For a == b the (a, b] interval
// covers the whole ring and (a, b) covers everything but a.
bool in_oc(NodeId x, NodeId a, NodeId b);  // x ∈ (a, b]
bool in_oo(NodeId x, NodeId a, NodeId b);  // x ∈ (a, b)

struct PeerRef {
  NodeId id = 0;
  Address addr;
  bool operator==(const PeerRef&) const = default;
  json to_json() const { return json{{"id", id}, {"addr", addr}}; }
  static PeerRef from_json(const json& j) {
    return PeerRef{j.at("id").get<NodeId>(), j.at("addr").get<std::string>()};
  }
};

struct FailureUpcall {
  Address failed;
  Address detected_by;
  uint64_t at = 0;
};

struct RingState {
  PeerRef self;
  std::vector<PeerRef> successors;  // ordered by ring distance from self
  std::optional<PeerRef> predecessor;
  std::map<int, PeerRef> fingers;  // bit index -> peer, only when enabled
};

// One Chord participant. Drives bootstrap, key lookup, ring maintenance, and
// failure-detection up-calls into the database layer.
class RingNode {
 public:
  using UpcallFn = std::function<void(const FailureUpcall&)>;

  RingNode(NodeCtx& ctx, UpcallFn upcall);

  // First node (no bootstrap) forms a singleton ring; otherwise resolves the
  // successor through the bootstrap node and lets stabilization integrate us.
  void start(std::optional<Address> bootstrap, std::function<void(Status)> done);

  bool handle(const Envelope& env);  // true when the message was consumed

  // Resolves the live node owning key k (first clockwise, inclusive).
  void find_successor(NodeId k, std::function<void(Result<Address>)> cb);

  // One round: verify successor, notify, refresh successor list, ping
  // predecessor, advance one finger. Invoked by the per-node timer.
  void stabilize_step();

  // Graceful departure: splices neighbors without triggering an upcall.
  void leave(std::function<void()> done);

  // A message from `a` proves liveness; clears failure bookkeeping so a
  // rejoining incarnation can be detected again.
  void saw_peer(const Address& a);

  const RingState& ring() const { return ring_; }
  PeerRef successor() const;
  bool alone() const;
  // True if this node currently owns key k (k ∈ (predecessor, self]).
  bool owns_key(NodeId k) const;

  // Invoked after the successor or predecessor changes (pointer-record
  // replication piggybacks on this).
  std::function<void()> on_topology_change;

 private:
  void handle_find_succ(const Envelope& env);
  void handle_notify(const Envelope& env);
  void handle_get_pred(const Envelope& env);
  void handle_ring_leave(const Envelope& env);
  void adopt_successor(const PeerRef& p);
  void drop_successor();
  void declare_pred_dead();
  Address route_next(NodeId k) const;
  json succ_list_json() const;
  void set_successors_from(const PeerRef& head, const json& their_list);

  NodeCtx& ctx_;
  UpcallFn upcall_;
  RingState ring_;
  int succ_misses_ = 0;
  int pred_misses_ = 0;
  std::set<Address> declared_dead_;
  int next_finger_ = 0;
  bool started_ = false;
};

}  // namespace h2o::overlay
