#include "h2o/overlay.hpp"

#include <algorithm>

#include "h2o/sha1.hpp"

namespace h2o::overlay {

NodeId node_id(const Address& addr, int m_bits) {
  const auto digest = sha1(addr);
  uint64_t top = 0;
  for (int i = 0; i < 8; ++i) top = (top << 8) | digest[size_t(i)];
  // top m bits of the 160-bit digest
  return m_bits >= 64 ? top : (top >> (64 - m_bits));
}

bool in_oc(NodeId x, NodeId a, NodeId b) {
  if (a == b) return true;  // full circle
  if (a < b) return x > a && x <= b;
  return x > a || x <= b;  // wraps
}

bool in_oo(NodeId x, NodeId a, NodeId b) {
  if (a == b) return x != a;
  if (a < b) return x > a && x < b;
  return x > a || x < b;
}

namespace {
constexpr int kMaxHops = 512;
}

RingNode::RingNode(NodeCtx& ctx, UpcallFn upcall)
    : ctx_(ctx), upcall_(std::move(upcall)) {
  ring_.self = PeerRef{node_id(ctx_.self(), ctx_.cfg().m_bits), ctx_.self()};
}

PeerRef RingNode::successor() const {
  return ring_.successors.empty() ? ring_.self : ring_.successors.front();
}

bool RingNode::alone() const {
  return ring_.successors.empty() || successor().addr == ring_.self.addr;
}

bool RingNode::owns_key(NodeId k) const {
  if (!ring_.predecessor || ring_.predecessor->addr == ring_.self.addr) return true;
  return in_oc(k, ring_.predecessor->id, ring_.self.id);
}

void RingNode::start(std::optional<Address> bootstrap, std::function<void(Status)> done) {
  started_ = true;
  if (!bootstrap) {
    ring_.successors = {ring_.self};
    ring_.predecessor.reset();
    done(Status::good());
    return;
  }
  // Ask the bootstrap node who succeeds our id, then announce ourselves.
  json body{{"key", ring_.self.id},
            {"origin", ctx_.self()},
            {"hops", kMaxHops}};
  ctx_.request(*bootstrap, "FIND_SUCC", body, 4 * ctx_.cfg().ping_interval_ms,
               [this, done](Result<json> r) {
                 if (!r.ok()) {
                   done(Status::error(Err::JoinFailed, r.status().message));
                   return;
                 }
                 PeerRef succ = PeerRef::from_json(r.value().at("peer"));
                 if (succ.addr == ctx_.self()) {
                   // Bootstrap believes we already own the range (stale view
                   // of a restarted node). Fall back to the responder itself.
                   succ = PeerRef{node_id(r.value().at("from").get<std::string>(),
                                          ctx_.cfg().m_bits),
                                  r.value().at("from").get<std::string>()};
                 }
                 ring_.successors = {succ};
                 ring_.predecessor.reset();
                 ctx_.send(succ.addr, "NOTIFY", json{{"peer", ring_.self.to_json()}});
                 if (on_topology_change) on_topology_change();
                 done(Status::good());
               });
}

Address RingNode::route_next(NodeId k) const {
  // Closest preceding node among fingers and successors, falling back to the
  // plain successor (linear routing when fingers are disabled).
  PeerRef best = successor();
  if (ctx_.cfg().use_fingers) {
    auto consider = [&](const PeerRef& p) {
      if (p.addr == ctx_.self() || declared_dead_.count(p.addr)) return;
      if (in_oo(p.id, ring_.self.id, k) &&
          (best.addr == ctx_.self() || in_oo(best.id, ring_.self.id, p.id) ||
           !in_oo(best.id, ring_.self.id, k))) {
        best = p;
      }
    };
    for (const auto& [i, p] : ring_.fingers) consider(p);
    for (const auto& p : ring_.successors) consider(p);
  }
  return best.addr;
}

void RingNode::handle_find_succ(const Envelope& env) {
  const NodeId k = env.body.at("key").get<NodeId>();
  const Address origin = env.body.at("origin").get<std::string>();
  // forwarded queries carry the origin's request id in "orid"
  const uint64_t origin_rid =
      env.body.contains("orid") ? env.body.at("orid").get<uint64_t>() : env.rid;
  int hops = env.body.value("hops", kMaxHops);

  const PeerRef succ = successor();
  if (alone() || in_oc(k, ring_.self.id, succ.id)) {
    const PeerRef& owner = alone() ? ring_.self : succ;
    ctx_.send(origin, "FIND_SUCC_REPLY",
              json{{"re", origin_rid}, {"peer", owner.to_json()}, {"from", ctx_.self()}});
    return;
  }
  if (--hops <= 0) return;  // give up; the origin times out and retries
  json fwd = env.body;
  fwd["hops"] = hops;
  fwd["orid"] = origin_rid;
  ctx_.send(route_next(k), "FIND_SUCC", fwd);
}

void RingNode::find_successor(NodeId k, std::function<void(Result<Address>)> cb) {
  const PeerRef succ = successor();
  if (alone()) {
    cb(Address(ring_.self.addr));
    return;
  }
  if (in_oc(k, ring_.self.id, succ.id)) {
    cb(Address(succ.addr));
    return;
  }
  json body{{"key", k}, {"origin", ctx_.self()}, {"hops", kMaxHops}};
  ctx_.request(route_next(k), "FIND_SUCC", body, 4 * ctx_.cfg().ping_interval_ms,
               [cb](Result<json> r) {
                 if (!r.ok()) {
                   cb(Status::error(Err::LookupTimeout, "find_successor timed out"));
                   return;
                 }
                 cb(PeerRef::from_json(r.value().at("peer")).addr);
               });
}

void RingNode::handle_notify(const Envelope& env) {
  const PeerRef cand = PeerRef::from_json(env.body.at("peer"));
  if (cand.addr == ctx_.self()) return;
  const bool take = !ring_.predecessor || ring_.predecessor->addr == ctx_.self() ||
                    in_oo(cand.id, ring_.predecessor->id, ring_.self.id) ||
                    declared_dead_.count(ring_.predecessor->addr) > 0;
  if (take) {
    const bool changed = !ring_.predecessor || ring_.predecessor->addr != cand.addr;
    ring_.predecessor = cand;
    pred_misses_ = 0;
    if (changed && on_topology_change) on_topology_change();
  }
  // A singleton also adopts the notifier as its successor to close the ring.
  if (alone() && cand.addr != ctx_.self()) adopt_successor(cand);
}

json RingNode::succ_list_json() const {
  json out = json::array();
  for (const auto& p : ring_.successors) out.push_back(p.to_json());
  return out;
}

void RingNode::handle_get_pred(const Envelope& env) {
  json body{{"succs", succ_list_json()}};
  if (ring_.predecessor) body["pred"] = ring_.predecessor->to_json();
  ctx_.reply_to_as(env, "GET_PRED_REPLY", body);
}

void RingNode::handle_ring_leave(const Envelope& env) {
  const Address leaver = env.from;
  declared_dead_.erase(leaver);
  if (env.body.contains("new_pred")) {
    const PeerRef np = PeerRef::from_json(env.body.at("new_pred"));
    if (ring_.predecessor && ring_.predecessor->addr == leaver) {
      ring_.predecessor = (np.addr == ctx_.self()) ? std::optional<PeerRef>{} : np;
      pred_misses_ = 0;
      if (on_topology_change) on_topology_change();
    }
  }
  if (env.body.contains("new_succ")) {
    const PeerRef ns = PeerRef::from_json(env.body.at("new_succ"));
    std::erase_if(ring_.successors, [&](const PeerRef& p) { return p.addr == leaver; });
    if (ring_.successors.empty() || ring_.successors.front().addr != ns.addr) {
      if (ns.addr != ctx_.self()) adopt_successor(ns);
      else if (ring_.successors.empty()) ring_.successors = {ring_.self};
    }
  } else {
    std::erase_if(ring_.successors, [&](const PeerRef& p) { return p.addr == leaver; });
    if (ring_.successors.empty()) ring_.successors = {ring_.self};
  }
}

bool RingNode::handle(const Envelope& env) {
  if (env.msg_type == "FIND_SUCC") {
    handle_find_succ(env);
  } else if (env.msg_type == "NOTIFY") {
    handle_notify(env);
  } else if (env.msg_type == "GET_PRED") {
    handle_get_pred(env);
  } else if (env.msg_type == "PING") {
    ctx_.reply_to_as(env, "PONG", json::object());
  } else if (env.msg_type == "RING_LEAVE") {
    handle_ring_leave(env);
  } else {
    return false;
  }
  return true;
}

void RingNode::adopt_successor(const PeerRef& p) {
  if (p.addr == ctx_.self()) return;
  std::vector<PeerRef> next = {p};
  for (const auto& s : ring_.successors) {
    if (s.addr != p.addr && s.addr != ctx_.self() &&
        size_t(next.size()) < size_t(ctx_.cfg().meta_replicas) + 1) {
      next.push_back(s);
    }
  }
  const bool changed = ring_.successors.empty() || ring_.successors.front().addr != p.addr;
  ring_.successors = std::move(next);
  succ_misses_ = 0;
  if (changed && on_topology_change) on_topology_change();
}

void RingNode::drop_successor() {
  if (ring_.successors.empty()) return;
  ring_.successors.erase(ring_.successors.begin());
  if (ring_.successors.empty()) ring_.successors = {ring_.self};
  succ_misses_ = 0;
  if (on_topology_change) on_topology_change();
}

void RingNode::declare_pred_dead() {
  const PeerRef dead = *ring_.predecessor;
  ring_.predecessor.reset();
  pred_misses_ = 0;
  if (declared_dead_.insert(dead.addr).second) {
    // We are the failed node's ring successor: exactly one up-call per
    // crashed incarnation comes from here.
    ctx_.log_event(json{{"ev", "upcall"},
                        {"failed", dead.addr},
                        {"detected_by", ctx_.self()}});
    upcall_(FailureUpcall{dead.addr, ctx_.self(), ctx_.now()});
  }
  if (on_topology_change) on_topology_change();
}

void RingNode::set_successors_from(const PeerRef& head, const json& their_list) {
  std::vector<PeerRef> next = {head};
  for (const auto& pj : their_list) {
    PeerRef p = PeerRef::from_json(pj);
    if (p.addr == ctx_.self() || p.addr == head.addr) continue;
    if (declared_dead_.count(p.addr)) continue;
    if (next.size() >= size_t(ctx_.cfg().meta_replicas) + 1) break;
    next.push_back(p);
  }
  if (next != ring_.successors) {
    const bool head_changed =
        ring_.successors.empty() || ring_.successors.front().addr != head.addr;
    ring_.successors = std::move(next);
    if (on_topology_change && head_changed) on_topology_change();
  }
}

void RingNode::stabilize_step() {
  if (!started_) return;
  const uint64_t probe_timeout = std::max<uint64_t>(1, ctx_.cfg().ping_interval_ms - 1);

  // Verify successor: ask it for its predecessor and successor list.
  if (!alone()) {
    const PeerRef succ = successor();
    ctx_.request(
        succ.addr, "GET_PRED", json::object(), probe_timeout,
        [this, succ](Result<json> r) {
          if (!r.ok()) {
            if (++succ_misses_ >= ctx_.cfg().ping_timeout_count) drop_successor();
            return;
          }
          succ_misses_ = 0;
          if (succ.addr != successor().addr) return;  // raced with a change
          if (r.value().contains("pred")) {
            const PeerRef x = PeerRef::from_json(r.value().at("pred"));
            if (x.addr != ctx_.self() && !declared_dead_.count(x.addr) &&
                in_oo(x.id, ring_.self.id, succ.id)) {
              adopt_successor(x);
              ctx_.send(x.addr, "NOTIFY", json{{"peer", ring_.self.to_json()}});
              return;
            }
          }
          set_successors_from(succ, r.value().value("succs", json::array()));
          ctx_.send(succ.addr, "NOTIFY", json{{"peer", ring_.self.to_json()}});
        });
  }

  // Ping predecessor; silence for ping_timeout_count rounds declares it dead.
  if (ring_.predecessor && ring_.predecessor->addr != ctx_.self()) {
    const Address pred = ring_.predecessor->addr;
    ctx_.request(pred, "PING", json::object(), probe_timeout,
                 [this, pred](Result<json> r) {
                   if (!ring_.predecessor || ring_.predecessor->addr != pred) return;
                   if (r.ok()) {
                     pred_misses_ = 0;
                     return;
                   }
                   if (++pred_misses_ >= ctx_.cfg().ping_timeout_count) declare_pred_dead();
                 });
  }

  // Refresh one finger per round.
  if (ctx_.cfg().use_fingers && !alone()) {
    const int m = ctx_.cfg().m_bits;
    next_finger_ = (next_finger_ + 1) % m;
    const int bit = next_finger_;
    const NodeId target =
        (ring_.self.id + (NodeId(1) << bit)) & ((m >= 64 ? ~NodeId(0) : (NodeId(1) << m) - 1));
    find_successor(target, [this, bit](Result<Address> r) {
      if (!r.ok()) return;
      ring_.fingers[bit] =
          PeerRef{node_id(r.value(), ctx_.cfg().m_bits), r.value()};
    });
  }
}

void RingNode::saw_peer(const Address& a) { declared_dead_.erase(a); }

void RingNode::leave(std::function<void()> done) {
  const PeerRef succ = successor();
  if (ring_.predecessor && ring_.predecessor->addr != ctx_.self() && !alone()) {
    ctx_.send(ring_.predecessor->addr, "RING_LEAVE",
              json{{"new_succ", succ.to_json()}});
  }
  if (!alone()) {
    json body{{"new_succ", succ.to_json()}};
    if (ring_.predecessor) body["new_pred"] = ring_.predecessor->to_json();
    ctx_.send(succ.addr, "RING_LEAVE", body);
  }
  done();
}

}  // namespace h2o::overlay
