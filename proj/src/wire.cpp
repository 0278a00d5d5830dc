#include "h2o/wire.hpp"

#include <algorithm>
#include <set>

namespace h2o::wire {

namespace {

// The closed set of protocol message types. Requests that have no dedicated
// reply type are answered with a generic REPLY correlated by body["re"].
const std::set<std::string>& msg_types() {
  static const std::set<std::string> kTypes = {
      // overlay
      "FIND_SUCC", "FIND_SUCC_REPLY", "NOTIFY", "GET_PRED", "GET_PRED_REPLY",
      "PING", "PONG", "XFER_META", "RING_LEAVE",
      // system table
      "ST_REGISTER", "ST_UPDATE", "ST_LOOKUP", "ST_LOOKUP_REPLY", "ST_SYNC",
      "ST_PTR_GET", "ST_PTR_PUT", "ST_RECOVER", "ST_TAKEOVER",
      // failure propagation
      "NODE_FAILED", "NODE_LEAVING",
      // table manager
      "TM_LOCK", "TM_LOCK_REPLY", "TM_RELEASE", "TM_UPDATE", "TM_UPDATE_REPLY",
      "TM_PREPARE", "TM_VOTE", "TM_COMMIT", "TM_COMMIT_ACK", "TM_ABORT", "TM_COPY_REQ",
      "TM_COPY_DATA", "TM_COPY_DONE", "TM_META_SYNC", "TM_MIGRATE",
      "TM_RECOVER", "TM_DROP", "TM_STATUS", "TM_REPL_STATUS",
      // executor
      "SQL_EXEC", "SQL_RESULT", "EXEC_SHIP", "EXEC_FETCH",
      // cluster control
      "STATUS", "LEAVE", "KILL",
      // generic correlated response
      "REPLY",
  };
  return kTypes;
}

}  // namespace

bool known_msg_type(const std::string& t) { return msg_types().count(t) > 0; }

bool is_reply_type(const std::string& t) {
  static const std::set<std::string> kReplies = {
      "REPLY",         "FIND_SUCC_REPLY", "GET_PRED_REPLY", "PONG",
      "ST_LOOKUP_REPLY", "TM_LOCK_REPLY", "TM_VOTE",        "TM_COMMIT_ACK",
      "TM_UPDATE_REPLY", "TM_COPY_DONE",  "SQL_RESULT",
  };
  return kReplies.count(t) > 0;
}

std::string canonical_payload(const Envelope& env) {
  // nlohmann objects are key-sorted; dump() emits no insignificant whitespace.
  json j;
  j["v"] = env.version;
  j["type"] = env.msg_type;
  j["from"] = env.from;
  j["to"] = env.to;
  j["rid"] = env.rid;
  j["body"] = env.body;
  return j.dump();
}

Result<std::vector<uint8_t>> encode_frame(const Envelope& env) {
  if (!env.body.is_object()) {
    return Status::error(Err::EncodingError, "envelope body must be a JSON object");
  }
  const std::string payload = canonical_payload(env);
  std::vector<uint8_t> out;
  out.reserve(4 + payload.size());
  const uint32_t n = static_cast<uint32_t>(payload.size());
  out.push_back(static_cast<uint8_t>(n >> 24));
  out.push_back(static_cast<uint8_t>(n >> 16));
  out.push_back(static_cast<uint8_t>(n >> 8));
  out.push_back(static_cast<uint8_t>(n));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Result<Decoded> decode_frame(std::span<const uint8_t> bytes) {
  if (bytes.size() < 4) return Status::error(Err::NeedMoreBytes);
  const uint32_t n = (uint32_t(bytes[0]) << 24) | (uint32_t(bytes[1]) << 16) |
                     (uint32_t(bytes[2]) << 8) | uint32_t(bytes[3]);
  if (bytes.size() < 4 + size_t(n)) return Status::error(Err::NeedMoreBytes);

  json j = json::parse(bytes.begin() + 4, bytes.begin() + 4 + n,
                       /*cb=*/nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) {
    return Status::error(Err::ProtocolError, "malformed payload");
  }
  if (!j.contains("v") || !j["v"].is_number_integer()) {
    return Status::error(Err::ProtocolError, "missing version");
  }
  if (j["v"].get<int>() != 1) {
    return Status::error(Err::UnsupportedVersion,
                         "version " + std::to_string(j["v"].get<int>()));
  }
  for (const char* f : {"type", "from", "to"}) {
    if (!j.contains(f) || !j[f].is_string()) {
      return Status::error(Err::ProtocolError, std::string("missing field ") + f);
    }
  }
  if (!j.contains("rid") || !j["rid"].is_number_unsigned()) {
    return Status::error(Err::ProtocolError, "missing rid");
  }
  if (!j.contains("body") || !j["body"].is_object()) {
    return Status::error(Err::ProtocolError, "missing body");
  }

  Decoded d;
  d.env.version = 1;
  d.env.msg_type = j["type"].get<std::string>();
  d.env.from = j["from"].get<std::string>();
  d.env.to = j["to"].get<std::string>();
  d.env.rid = j["rid"].get<uint64_t>();
  d.env.body = j["body"];
  d.consumed = 4 + size_t(n);
  if (!known_msg_type(d.env.msg_type)) {
    return Status::error(Err::ProtocolError, "unknown msg_type " + d.env.msg_type);
  }
  if (d.env.from.empty() || d.env.to.empty()) {
    return Status::error(Err::ProtocolError, "empty address");
  }
  return d;
}

// ---------------------------------------------------------------------------

SimNet::SimNet(SimConfig cfg) : cfg_(cfg), rng_(cfg.seed) {}

void SimNet::register_node(const Address& a) { group_.emplace(a, 0); }

void SimNet::register_client(const Address& a) {
  group_.emplace(a, 0);
  clients_.insert(a);
}

void SimNet::unregister_node(const Address& a) {
  group_.erase(a);
  clients_.erase(a);
}

bool SimNet::is_registered(const Address& a) const { return group_.count(a) > 0; }

void SimNet::set_partitions(const std::vector<std::vector<Address>>& groups) {
  int g = 1;
  for (const auto& members : groups) {
    for (const auto& a : members) {
      auto it = group_.find(a);
      if (it != group_.end()) it->second = g;
    }
    ++g;
  }
}

void SimNet::heal() {
  for (auto& [a, g] : group_) g = 0;
}

uint64_t SimNet::draw_latency() {
  const uint64_t lo = cfg_.latency_min_ms;
  const uint64_t hi = std::max<uint64_t>(cfg_.latency_max_ms, lo);
  // Modulo draw keeps the sequence platform-independent.
  return lo + (hi > lo ? rng_() % (hi - lo + 1) : 0);
}

void SimNet::send(Envelope env) {
  auto from = group_.find(env.from);
  auto to = group_.find(env.to);
  if (to == group_.end()) {
    if (on_drop) on_drop(env, "unknown_dest");
    return;
  }
  const bool wildcard = clients_.count(env.from) > 0 || clients_.count(env.to) > 0;
  if (!wildcard && from != group_.end() && from->second != to->second) {
    if (on_drop) on_drop(env, "partition");
    return;
  }
  const uint64_t at = clock_ + draw_latency();
  queue_.push(Item{at, next_seq_++, Delivery{std::move(env)}});
  ++pending_deliveries_;
}

uint64_t SimNet::schedule(uint64_t delay_ms, uint64_t timer_id) {
  queue_.push(Item{clock_ + delay_ms, next_seq_++, TimerFire{timer_id}});
  return timer_id;
}

std::vector<SimEvent> SimNet::step() {
  std::vector<SimEvent> out;
  if (queue_.empty()) return out;
  const uint64_t t = queue_.top().at;
  clock_ = t;
  while (!queue_.empty() && queue_.top().at == t) {
    if (std::holds_alternative<Delivery>(queue_.top().ev)) --pending_deliveries_;
    out.push_back(queue_.top().ev);
    queue_.pop();
  }
  return out;
}

uint64_t SimNet::next_event_at() const {
  return queue_.empty() ? UINT64_MAX : queue_.top().at;
}

}  // namespace h2o::wire
