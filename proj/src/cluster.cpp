#include "h2o/cluster.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <sstream>

#include "h2o/monitor.hpp"

namespace h2o::cluster {

using node::Envelope;

Result<Script> parse_script(std::istream& in) {
  Script out;
  std::string line;
  size_t lineno = 0;
  uint64_t prev_at = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("op")) {
      return Status::error(Err::ValidationError,
                           "script line " + std::to_string(lineno) + " malformed");
    }
    ScriptOp op;
    op.at = j.value("at", prev_at);
    if (op.at < prev_at) {
      return Status::error(Err::ValidationError,
                           "script line " + std::to_string(lineno) +
                               ": timestamps must be non-decreasing");
    }
    prev_at = op.at;
    op.op = j.at("op").get<std::string>();
    op.args = j;
    out.push_back(std::move(op));
  }
  return out;
}

// ---------------------------------------------------------------------------

class SimHarness::NodeTransport : public node::Transport {
 public:
  NodeTransport(SimHarness& h, Address self, uint64_t incarnation)
      : h_(h), self_(std::move(self)), incarnation_(incarnation) {}

  void transmit(Envelope env) override { h_.net_.send(std::move(env)); }
  uint64_t now() const override { return h_.net_.now(); }

  uint64_t schedule(uint64_t delay_ms, std::function<void()> fn) override {
    const uint64_t id = ++h_.timer_seq_;
    h_.timers_[id] = TimerRec{self_, incarnation_, std::move(fn)};
    h_.net_.schedule(delay_ms, id);
    return id;
  }

  void cancel(uint64_t id) override { h_.timers_.erase(id); }

  void log_event(json ev) override { h_.push_event(std::move(ev)); }

 private:
  SimHarness& h_;
  Address self_;
  uint64_t incarnation_;
};

SimHarness::SimHarness(ClusterConfig cfg)
    : cfg_(cfg),
      net_(wire::SimConfig{cfg.seed, cfg.latency_min_ms, cfg.latency_max_ms}) {
  if (cfg_.data_root.empty()) {
    static int counter = 0;
    root_ = std::filesystem::temp_directory_path() /
            ("h2o_sim_" + std::to_string(::getpid()) + "_" + std::to_string(++counter));
    owns_root_ = true;
  } else {
    root_ = cfg_.data_root;
  }
  std::filesystem::create_directories(root_);
  net_.on_drop = [this](const Envelope& env, const char* reason) {
    push_event(json{{"ev", "drop"}, {"from", env.from}, {"to", env.to},
                    {"type", env.msg_type}, {"reason", reason}});
  };
}

SimHarness::~SimHarness() {
  nodes_.clear();
  if (owns_root_) {
    std::error_code ec;
    std::filesystem::remove_all(root_, ec);
  }
}

void SimHarness::push_event(json ev) {
  ev["t"] = net_.now();
  ev["seq"] = ++event_seq_;
  if (ev.value("ev", "") == "upcall") ++upcall_count_;
  events_.push_back(std::move(ev));
}

std::string SimHarness::event_log_text() const {
  std::string out;
  for (const auto& e : events_) {
    out += e.dump();
    out += "\n";
  }
  return out;
}

node::Instance* SimHarness::instance(const Address& a) {
  auto it = nodes_.find(a);
  if (it == nodes_.end() || it->second.dead) return nullptr;
  return it->second.inst.get();
}

std::vector<Address> SimHarness::live() const {
  std::vector<Address> out;
  for (const auto& [a, rec] : nodes_) {
    if (!rec.dead && !rec.inst->stopped()) out.push_back(a);
  }
  return out;
}

void SimHarness::pump_one() {
  auto evs = net_.step();
  for (auto& ev : evs) {
    if (auto* d = std::get_if<wire::Delivery>(&ev)) {
      Envelope& env = d->env;
      // replies to synthetic clients land in the reply table
      if (env.to.rfind("client", 0) == 0) {
        if (env.body.contains("re")) {
          client_replies_[env.body.at("re").get<uint64_t>()] = env.body;
        }
        continue;
      }
      auto it = nodes_.find(env.to);
      if (it == nodes_.end() || it->second.dead || it->second.inst->stopped()) {
        continue;  // crashed or departed: the message vanishes
      }
      push_event(json{{"ev", "deliver"}, {"from", env.from}, {"to", env.to},
                      {"type", env.msg_type}, {"rid", env.rid}});
      it->second.inst->handle(std::move(env));
    } else if (auto* t = std::get_if<wire::TimerFire>(&ev)) {
      auto it = timers_.find(t->timer_id);
      if (it == timers_.end()) continue;
      auto rec_it = nodes_.find(it->second.owner);
      if (rec_it == nodes_.end() || rec_it->second.dead ||
          rec_it->second.incarnation != it->second.incarnation) {
        timers_.erase(it);
        continue;
      }
      auto fn = std::move(it->second.fn);
      timers_.erase(it);
      fn();
    }
  }
}

void SimHarness::advance_to(uint64_t t) {
  while (net_.pending() > 0 && net_.next_event_at() <= t) pump_one();
  net_.advance_to(t);
}

void SimHarness::run_for(uint64_t ms) { advance_to(net_.now() + ms); }

bool SimHarness::all_idle() const {
  if (net_.pending_deliveries() > 0) return false;
  for (const auto& [a, rec] : nodes_) {
    if (rec.dead || rec.inst->stopped()) continue;
    if (!rec.inst->idle()) return false;
  }
  return true;
}

bool SimHarness::settle(uint64_t bound_ms) {
  const uint64_t limit = net_.now() + bound_ms;
  while (!all_idle()) {
    if (net_.pending() == 0 || net_.next_event_at() > limit) return all_idle();
    pump_one();
  }
  return true;
}

// ---------------------------------------------------------------------------
// node lifecycle

void SimHarness::start_node(const Address& a, std::optional<Address> bootstrap,
                            bool wait_booted) {
  auto& rec = nodes_[a];
  rec.incarnation++;
  rec.dead = false;
  rec.transport = std::make_unique<NodeTransport>(*this, a, rec.incarnation);
  const uint64_t seed = cfg_.seed ^ fnv1a64(a) ^ (rec.incarnation << 32);
  rec.inst = std::make_unique<node::Instance>(*rec.transport, cfg_, a, node_dir(a), seed);
  net_.register_node(a);
  push_event(json{{"ev", "start_node"}, {"node", a}});
  auto* inst = rec.inst.get();
  inst->boot(bootstrap, [this, a](Status st) {
    push_event(json{{"ev", "boot_done"}, {"node", a}, {"ok", st.ok()}});
  });
  if (wait_booted) {
    while (!inst->ready() && net_.pending() > 0) pump_one();
  }
}

void SimHarness::remove_node(const Address& a) {
  auto it = nodes_.find(a);
  if (it == nodes_.end()) return;
  it->second.dead = true;
  it->second.inst.reset();
  it->second.transport.reset();
  std::erase_if(timers_, [&](const auto& kv) { return kv.second.owner == a; });
}

void SimHarness::crash(const Address& a) {
  push_event(json{{"ev", "crash"}, {"node", a}});
  remove_node(a);
}

void SimHarness::set_resources(const Address& a, const json& sample) {
  auto* inst = instance(a);
  if (!inst) return;
  monitor::ResourceSample s;
  s.instance = a;
  s.cpu_idle = sample.value("cpu_idle", 0.5);
  s.mem_free = sample.value("mem_free", int64_t(1) << 29);
  s.mem_total = sample.value("mem_total", int64_t(1) << 30);
  s.disk_free = sample.value("disk_free", int64_t(1) << 35);
  s.disk_total = sample.value("disk_total", int64_t(1) << 36);
  inst->set_scripted_sample(s);
  push_event(json{{"ev", "set_resources"}, {"node", a}});
}

void SimHarness::partition(const std::vector<std::vector<Address>>& groups) {
  net_.set_partitions(groups);
  push_event(json{{"ev", "partition"}});
}

void SimHarness::heal() {
  net_.heal();
  push_event(json{{"ev", "heal"}});
}

// ---------------------------------------------------------------------------
// synthetic clients

uint64_t SimHarness::submit_client(const Address& node, const std::string& type,
                                   json body) {
  const uint64_t rid = ++client_rid_;
  const Address client = "client";
  net_.register_client(client);
  Envelope env;
  env.msg_type = type;
  env.from = client;
  env.to = node;
  env.rid = rid;
  env.body = std::move(body);
  net_.send(std::move(env));
  return rid;
}

Result<json> SimHarness::await_reply(uint64_t rid, uint64_t max_wait_ms) {
  const uint64_t limit = net_.now() + max_wait_ms;
  while (!client_replies_.count(rid)) {
    if (net_.pending() == 0 || net_.next_event_at() > limit) {
      return Status::error(Err::Timeout, "no reply from cluster");
    }
    pump_one();
  }
  json body = std::move(client_replies_.at(rid));
  client_replies_.erase(rid);
  if (node::is_err_body(body)) return node::status_from(body);
  return body;
}

Result<json> SimHarness::sql(const Address& addr, const std::string& text) {
  const uint64_t rid = submit_client(addr, "SQL_EXEC", json{{"text", text}});
  return await_reply(rid, 60000);
}

uint64_t SimHarness::sql_async(const Address& addr, const std::string& text) {
  return submit_client(addr, "SQL_EXEC", json{{"text", text}});
}

Result<json> SimHarness::status(const Address& addr) {
  const uint64_t rid = submit_client(addr, "STATUS", json::object());
  return await_reply(rid, 60000);
}

Result<json> SimHarness::leave(const Address& addr) {
  const uint64_t rid = submit_client(addr, "LEAVE", json::object());
  auto r = await_reply(rid, 120000);
  push_event(json{{"ev", "leave_complete"}, {"node", addr}, {"ok", r.ok()}});
  return r;
}

// ---------------------------------------------------------------------------
// assertions

Address SimHarness::keeper_node() const {
  for (const auto& [a, rec] : nodes_) {
    if (rec.dead || rec.inst->stopped()) continue;
    if (rec.inst->systable().is_keeper()) return a;
  }
  return {};
}

Result<json> SimHarness::tm_state_for(const std::string& table) const {
  const Address keeper = keeper_node();
  if (keeper.empty()) return Status::error(Err::CatalogLost, "no keeper");
  const auto& entries = nodes_.at(keeper).inst->systable().state().entries;
  auto it = entries.find(table);
  if (it == entries.end()) return Status::error(Err::NoSuchTable, table);
  auto nit = nodes_.find(it->second.tm);
  if (nit == nodes_.end() || nit->second.dead) {
    return Status::error(Err::ManagerLost, "tm host dead: " + it->second.tm);
  }
  const auto* st = nit->second.inst->mgr().state_of(table);
  if (!st) return Status::error(Err::WrongManager, "catalog stale for " + table);
  return json{{"tm", it->second.tm},
              {"replicas", st->replicas},
              {"commit_seq", st->commit_seq},
              {"target_rf", st->target_rf},
              {"under_replicated", int(st->replicas.size()) < st->target_rf}};
}

Status SimHarness::check_assert(const json& args) {
  const std::string kind = args.at("kind").get<std::string>();
  auto fail = [&](const std::string& msg) {
    return Status::error(Err::ValidationError, "assert " + kind + ": " + msg);
  };

  if (kind == "replica_count") {
    auto st = tm_state_for(args.at("table").get<std::string>());
    if (!st.ok()) return fail(st.status().to_string());
    const int got = int(st.value().at("replicas").size());
    if (got != args.at("expect").get<int>()) {
      return fail("expected " + std::to_string(args.at("expect").get<int>()) +
                  " replicas, got " + std::to_string(got));
    }
    return Status::good();
  }

  if (kind == "replicas_identical") {
    const std::string table = args.at("table").get<std::string>();
    auto st = tm_state_for(table);
    if (!st.ok()) return fail(st.status().to_string());
    const auto replicas = st.value().at("replicas").get<std::vector<Address>>();
    const uint64_t commit_seq = st.value().at("commit_seq").get<uint64_t>();
    std::string first_fp;
    for (const auto& r : replicas) {
      auto nit = nodes_.find(r);
      if (nit == nodes_.end() || nit->second.dead) return fail("replica host dead: " + r);
      auto* store = nit->second.inst->stores().get(table);
      if (!store) return fail("missing store on " + r);
      if (store->applied_seq() != commit_seq) {
        return fail(r + " applied_seq " + std::to_string(store->applied_seq()) +
                    " != commit_seq " + std::to_string(commit_seq));
      }
      const std::string fp = store->fingerprint();
      if (first_fp.empty()) first_fp = fp;
      else if (fp != first_fp) return fail("fingerprint mismatch on " + r);
    }
    return Status::good();
  }

  if (kind == "all_converged") {
    const Address keeper = keeper_node();
    if (keeper.empty()) return fail("no keeper");
    auto entries = nodes_.at(keeper).inst->systable().state().entries;
    for (const auto& [table, e] : entries) {
      Status st = check_assert(json{{"kind", "replicas_identical"}, {"table", table}});
      if (!st.ok()) return st;
    }
    return Status::good();
  }

  if (kind == "catalog_has") {
    const Address keeper = keeper_node();
    if (keeper.empty()) return fail("no keeper");
    const auto& entries = nodes_.at(keeper).inst->systable().state().entries;
    const bool has = entries.count(args.at("table").get<std::string>()) > 0;
    if (has != args.value("expect", true)) return fail("presence mismatch");
    return Status::good();
  }

  if (kind == "keeper_is") {
    const Address keeper = keeper_node();
    if (keeper != args.at("node").get<std::string>()) {
      return fail("keeper is " + (keeper.empty() ? "<none>" : keeper));
    }
    return Status::good();
  }

  if (kind == "keeper_epoch_min") {
    const Address keeper = keeper_node();
    if (keeper.empty()) return fail("no keeper");
    const uint64_t epoch = nodes_.at(keeper).inst->systable().state().epoch;
    if (epoch < args.at("expect").get<uint64_t>()) {
      return fail("epoch " + std::to_string(epoch));
    }
    return Status::good();
  }

  if (kind == "upcall_count") {
    uint64_t n = 0;
    for (const auto& e : events_) {
      if (e.value("ev", "") == "upcall" &&
          (!args.contains("failed") ||
           e.value("failed", "") == args.at("failed").get<std::string>())) {
        ++n;
      }
    }
    if (n != args.at("expect").get<uint64_t>()) {
      return fail("saw " + std::to_string(n) + " upcalls");
    }
    return Status::good();
  }

  if (kind == "no_upcalls") {
    if (upcall_count_ != 0) return fail(std::to_string(upcall_count_) + " upcalls");
    return Status::good();
  }

  if (kind == "under_replicated") {
    auto st = tm_state_for(args.at("table").get<std::string>());
    if (!st.ok()) return fail(st.status().to_string());
    if (st.value().at("under_replicated").get<bool>() != args.at("expect").get<bool>()) {
      return fail("flag mismatch");
    }
    return Status::good();
  }

  if (kind == "commit_seq") {
    auto st = tm_state_for(args.at("table").get<std::string>());
    if (!st.ok()) return fail(st.status().to_string());
    if (st.value().at("commit_seq").get<uint64_t>() != args.at("expect").get<uint64_t>()) {
      return fail("commit_seq " + std::to_string(st.value().at("commit_seq").get<uint64_t>()));
    }
    return Status::good();
  }

  if (kind == "ring_converged") {
    // every live node's lookup must match the sorted-ring oracle
    std::map<overlay::NodeId, Address> ids;
    for (const auto& a : live()) {
      ids[overlay::node_id(a, cfg_.m_bits)] = a;
    }
    auto oracle = [&](overlay::NodeId k) -> Address {
      auto it = ids.lower_bound(k);
      if (it == ids.end()) it = ids.begin();
      return it->second;
    };
    const int nkeys = args.value("keys", 32);
    std::mt19937_64 rng(cfg_.seed ^ 0x9e3779b97f4a7c15ull);
    const overlay::NodeId mask =
        cfg_.m_bits >= 64 ? ~0ull : ((overlay::NodeId(1) << cfg_.m_bits) - 1);
    for (int i = 0; i < nkeys; ++i) {
      const overlay::NodeId k = rng() & mask;
      const Address want = oracle(k);
      for (const auto& a : live()) {
        auto* inst = instance(a);
        std::optional<Result<Address>> got;
        inst->ring().find_successor(k, [&got](Result<Address> r) { got = std::move(r); });
        const uint64_t limit = net_.now() + 8 * cfg_.ping_interval_ms;
        while (!got && net_.pending() > 0 && net_.next_event_at() <= limit) pump_one();
        if (!got || !got->ok()) return fail("lookup failed from " + a);
        if (got->value() != want) {
          return fail("key " + std::to_string(k) + " from " + a + ": got " +
                      got->value() + ", want " + want);
        }
      }
    }
    return Status::good();
  }

  return fail("unknown assert kind");
}

// ---------------------------------------------------------------------------
// script execution

Status SimHarness::run_script(const Script& script) {
  struct PendingSql {
    size_t op_index;
    uint64_t rid;
    json args;
  };
  std::vector<PendingSql> outstanding;
  Status first_failure = Status::good();

  auto note_failure = [&](const std::string& what) {
    if (first_failure.ok()) first_failure = Status::error(Err::ValidationError, what);
  };

  auto check_replies = [&]() {
    for (auto it = outstanding.begin(); it != outstanding.end();) {
      auto rit = client_replies_.find(it->rid);
      if (rit == client_replies_.end()) {
        ++it;
        continue;
      }
      json body = std::move(rit->second);
      client_replies_.erase(rit);
      const json& args = it->args;
      push_event(json{{"ev", "sql_result"}, {"op", it->op_index},
                      {"ok", !node::is_err_body(body)}});
      if (args.contains("expect_error")) {
        if (!node::is_err_body(body) ||
            body.at("err").get<std::string>() != args.at("expect_error").get<std::string>()) {
          note_failure("op " + std::to_string(it->op_index) + ": expected error " +
                       args.at("expect_error").get<std::string>() + ", got " + body.dump());
        }
      } else if (node::is_err_body(body)) {
        note_failure("op " + std::to_string(it->op_index) + " failed: " + body.dump());
      } else if (args.contains("expect_rows")) {
        const json got = body.value("rows", json::array());
        if (got != args.at("expect_rows")) {
          note_failure("op " + std::to_string(it->op_index) + ": rows " + got.dump() +
                       " != " + args.at("expect_rows").dump());
        }
      }
      it = outstanding.erase(it);
    }
  };

  for (size_t i = 0; i < script.size(); ++i) {
    const ScriptOp& op = script[i];
    // run up to the op's logical time
    while (net_.pending() > 0 && net_.next_event_at() <= op.at) {
      pump_one();
      check_replies();
    }
    net_.advance_to(op.at);

    if (op.op == "start_node") {
      std::optional<Address> bootstrap;
      if (op.args.contains("bootstrap")) {
        bootstrap = op.args.at("bootstrap").get<std::string>();
      }
      start_node(op.args.at("node").get<std::string>(), bootstrap, false);
    } else if (op.op == "sql") {
      const uint64_t rid = submit_client(op.args.at("node").get<std::string>(), "SQL_EXEC",
                                         json{{"text", op.args.at("text").get<std::string>()}});
      outstanding.push_back(PendingSql{i, rid, op.args});
    } else if (op.op == "crash") {
      crash(op.args.at("node").get<std::string>());
    } else if (op.op == "leave") {
      const uint64_t rid =
          submit_client(op.args.at("node").get<std::string>(), "LEAVE", json::object());
      outstanding.push_back(PendingSql{i, rid, json{{"op", "leave"}}});
    } else if (op.op == "partition") {
      std::vector<std::vector<Address>> groups;
      for (const auto& g : op.args.at("groups")) {
        groups.push_back(g.get<std::vector<Address>>());
      }
      partition(groups);
    } else if (op.op == "heal") {
      heal();
    } else if (op.op == "set_resources") {
      set_resources(op.args.at("node").get<std::string>(), op.args);
    } else if (op.op == "assert") {
      const uint64_t bound =
          i + 1 < script.size() ? script[i + 1].at - net_.now() : uint64_t(30000);
      settle(bound);
      check_replies();
      Status st = check_assert(op.args);
      if (!st.ok()) {
        note_failure("op " + std::to_string(i) + ": " + st.to_string());
        push_event(json{{"ev", "assert_failed"}, {"op", i}, {"error", st.to_string()}});
      } else {
        push_event(json{{"ev", "assert_ok"}, {"op", i}});
      }
    } else {
      note_failure("op " + std::to_string(i) + ": unknown op " + op.op);
    }
  }

  // drain the tail so trailing sql ops resolve
  settle(30000);
  check_replies();
  for (const auto& p : outstanding) {
    note_failure("op " + std::to_string(p.op_index) + ": no reply");
  }
  return first_failure;
}

}  // namespace h2o::cluster
