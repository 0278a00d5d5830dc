#include "h2o/systable.hpp"

#include <fstream>

namespace h2o::systable {

using overlay::node_id;

json CatalogEntry::to_json() const {
  return json{{"table", table}, {"tm", tm}, {"tm_meta", tm_meta}, {"version", version}};
}

CatalogEntry CatalogEntry::from_json(const json& j) {
  CatalogEntry e;
  e.table = j.at("table").get<std::string>();
  e.tm = j.at("tm").get<std::string>();
  e.tm_meta = j.at("tm_meta").get<std::vector<Address>>();
  e.version = j.at("version").get<uint64_t>();
  return e;
}

json SystemTableState::to_json() const {
  json ents = json::object();
  for (const auto& [name, e] : entries) ents[name] = e.to_json();
  return json{{"entries", ents}, {"version", version}, {"epoch", epoch}};
}

SystemTableState SystemTableState::from_json(const json& j) {
  SystemTableState st;
  st.version = j.at("version").get<uint64_t>();
  st.epoch = j.at("epoch").get<uint64_t>();
  for (const auto& [name, ej] : j.at("entries").items()) {
    st.entries[name] = CatalogEntry::from_json(ej);
  }
  return st;
}

SysTableSvc::SysTableSvc(NodeCtx& ctx, overlay::RingNode& ring) : ctx_(ctx), ring_(ring) {}

void SysTableSvc::persist() {
  const auto path = ctx_.data_dir() / "systable.json";
  const auto tmp = ctx_.data_dir() / "systable.json.tmp";
  std::filesystem::create_directories(ctx_.data_dir());
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << st_.to_json().dump() << "\n";
    out.flush();
  }
  std::filesystem::rename(tmp, path);
}

void SysTableSvc::become_first_keeper(std::function<void(Status)> done) {
  keeper_ = true;
  replica_ = true;
  st_ = SystemTableState{};
  st_.epoch = 1;
  persist();
  ctx_.log_event(json{{"ev", "st_keeper"}, {"keeper", ctx_.self()}, {"epoch", st_.epoch}});
  install_pointer(PointerRecord{ctx_.self(), st_.epoch}, std::move(done));
}

void SysTableSvc::install_pointer(const PointerRecord& rec, std::function<void(Status)> done) {
  const overlay::NodeId key = node_id(kPointerKey, ctx_.cfg().m_bits);
  ring_.find_successor(key, [this, rec, done](Result<Address> r) {
    if (!r.ok()) {
      done(r.status());
      return;
    }
    if (r.value() == ctx_.self()) {
      if (!ptr_ || rec.epoch >= ptr_->epoch) {
        ptr_ = rec;
        on_topology_change();  // push a replica to the current successor
      }
      done(Status::good());
      return;
    }
    ctx_.request(r.value(), "ST_PTR_PUT", json{{"rec", rec.to_json()}},
                 ctx_.cfg().lock_wait_ms,
                 [done](Result<json> rr) { done(rr.status()); });
  });
}

void SysTableSvc::on_topology_change() {
  // The pointer owner keeps one replica on its immediate successor; if the
  // key now belongs to our predecessor (a joiner), hand the record over.
  if (!ptr_) {
    if (keeper_) refresh_meta_set(false);
    return;
  }
  const overlay::NodeId key = node_id(kPointerKey, ctx_.cfg().m_bits);
  const auto& ring = ring_.ring();
  if (ring_.owns_key(key)) {
    if (!ring_.alone()) {
      ctx_.send(ring_.successor().addr, "XFER_META", json{{"rec", ptr_->to_json()}});
    }
  } else if (ring.predecessor && ring.predecessor->addr != ctx_.self()) {
    ctx_.send(ring.predecessor->addr, "XFER_META", json{{"rec", ptr_->to_json()}});
  }
  if (keeper_) refresh_meta_set(false);
}

std::vector<Address> SysTableSvc::desired_meta() const {
  std::vector<Address> out;
  for (const auto& p : ring_.ring().successors) {
    if (p.addr == ctx_.self()) continue;
    if (std::find(out.begin(), out.end(), p.addr) == out.end()) out.push_back(p.addr);
    if (out.size() >= size_t(ctx_.cfg().meta_replicas)) break;
  }
  return out;
}

void SysTableSvc::refresh_meta_set(bool force_sync) {
  if (!keeper_) return;
  auto want = desired_meta();
  if (want == meta_ && !force_sync) return;
  meta_ = std::move(want);
  for (const auto& m : meta_) {
    ctx_.request(m, "ST_SYNC", json{{"state", st_.to_json()}}, ctx_.cfg().lock_wait_ms,
                 [](Result<json>) {});
  }
}

// ---------------------------------------------------------------------------
// client side

void SysTableSvc::locate(std::function<void(Result<Address>)> cb) {
  if (keeper_) {
    cb(Address(ctx_.self()));
    return;
  }
  if (keeper_cache_) {
    cb(Address(*keeper_cache_));
    return;
  }
  const overlay::NodeId key = node_id(kPointerKey, ctx_.cfg().m_bits);
  auto attempt = std::make_shared<int>(0);
  auto try_once = std::make_shared<std::function<void()>>();
  *try_once = [this, key, cb, attempt, try_once]() {
    if (++*attempt > 12) {
      cb(Status::error(Err::BootstrapFailed, "cannot locate System Table"));
      return;
    }
    auto retry = [this, try_once]() {
      ctx_.schedule(ctx_.cfg().ping_interval_ms / 2 + 1, [try_once]() { (*try_once)(); });
    };
    ring_.find_successor(key, [this, cb, retry](Result<Address> r) {
      if (!r.ok()) {
        retry();
        return;
      }
      if (r.value() == ctx_.self()) {
        if (ptr_) {
          keeper_cache_ = ptr_->keeper;
          cb(Address(ptr_->keeper));
        } else {
          retry();
        }
        return;
      }
      ctx_.request(r.value(), "ST_PTR_GET", json::object(), ctx_.cfg().lock_wait_ms,
                   [this, cb, retry](Result<json> rr) {
                     if (!rr.ok()) {
                       retry();
                       return;
                     }
                     const auto rec = PointerRecord::from_json(rr.value().at("rec"));
                     keeper_cache_ = rec.keeper;
                     cb(Address(rec.keeper));
                   });
    });
  };
  (*try_once)();
}

namespace {
// Retries a keeper-directed request once after a failed location hint.
struct KeeperCall : std::enable_shared_from_this<KeeperCall> {
  SysTableSvc* svc;
  NodeCtx* ctx;
  std::string type;
  json body;
  std::function<void(Result<json>)> cb;
  int attempts = 0;
};
}  // namespace

void SysTableSvc::lookup(const std::string& table,
                         std::function<void(Result<CatalogEntry>)> cb) {
  auto call = std::make_shared<std::function<void(int)>>();
  *call = [this, table, cb, call](int attempt) {
    locate([this, table, cb, call, attempt](Result<Address> k) {
      if (!k.ok()) {
        cb(k.status());
        return;
      }
      ctx_.request(k.value(), "ST_LOOKUP", json{{"table", table}},
                   ctx_.cfg().lock_wait_ms,
                   [this, table, cb, call, attempt](Result<json> r) {
                     if (!r.ok() && attempt < 3 &&
                         (r.code() == Err::Timeout || r.code() == Err::WrongManager)) {
                       keeper_cache_.reset();
                       (*call)(attempt + 1);
                       return;
                     }
                     if (!r.ok()) {
                       cb(r.status());
                       return;
                     }
                     cb(CatalogEntry::from_json(r.value().at("entry")));
                   });
    });
  };
  (*call)(0);
}

void SysTableSvc::list_all(
    std::function<void(Result<std::map<std::string, CatalogEntry>>)> cb) {
  auto call = std::make_shared<std::function<void(int)>>();
  *call = [this, cb, call](int attempt) {
    locate([this, cb, call, attempt](Result<Address> k) {
      if (!k.ok()) {
        cb(k.status());
        return;
      }
      ctx_.request(k.value(), "ST_LOOKUP", json{{"table", "*"}}, ctx_.cfg().lock_wait_ms,
                   [this, cb, call, attempt](Result<json> r) {
                     if (!r.ok() && attempt < 3 &&
                         (r.code() == Err::Timeout || r.code() == Err::WrongManager)) {
                       keeper_cache_.reset();
                       (*call)(attempt + 1);
                       return;
                     }
                     if (!r.ok()) {
                       cb(r.status());
                       return;
                     }
                     std::map<std::string, CatalogEntry> out;
                     for (const auto& [name, ej] : r.value().at("entries").items()) {
                       out[name] = CatalogEntry::from_json(ej);
                     }
                     cb(std::move(out));
                   });
    });
  };
  (*call)(0);
}

void SysTableSvc::register_table(const CatalogEntry& e,
                                 std::function<void(Result<uint64_t>)> cb) {
  auto call = std::make_shared<std::function<void(int)>>();
  *call = [this, e, cb, call](int attempt) {
    locate([this, e, cb, call, attempt](Result<Address> k) {
      if (!k.ok()) {
        cb(k.status());
        return;
      }
      ctx_.request(k.value(), "ST_REGISTER", json{{"entry", e.to_json()}},
                   2 * ctx_.cfg().lock_wait_ms,
                   [this, cb, call, attempt](Result<json> r) {
                     if (!r.ok() && attempt < 3 &&
                         (r.code() == Err::Timeout || r.code() == Err::WrongManager)) {
                       keeper_cache_.reset();
                       (*call)(attempt + 1);
                       return;
                     }
                     if (!r.ok()) {
                       cb(r.status());
                       return;
                     }
                     cb(r.value().at("version").get<uint64_t>());
                   });
    });
  };
  (*call)(0);
}

void SysTableSvc::update_entry(const std::string& mode, const CatalogEntry& e,
                               std::function<void(Status)> cb) {
  auto call = std::make_shared<std::function<void(int)>>();
  *call = [this, mode, e, cb, call](int attempt) {
    locate([this, mode, e, cb, call, attempt](Result<Address> k) {
      if (!k.ok()) {
        cb(k.status());
        return;
      }
      ctx_.request(k.value(), "ST_UPDATE",
                   json{{"mode", mode}, {"entry", e.to_json()}},
                   2 * ctx_.cfg().lock_wait_ms,
                   [this, cb, call, attempt](Result<json> r) {
                     if (!r.ok() && attempt < 3 &&
                         (r.code() == Err::Timeout || r.code() == Err::WrongManager)) {
                       keeper_cache_.reset();
                       (*call)(attempt + 1);
                       return;
                     }
                     cb(r.status());
                   });
    });
  };
  (*call)(0);
}

// ---------------------------------------------------------------------------
// keeper side

void SysTableSvc::handle_mutation(const Envelope& env) {
  if (!keeper_) {
    ctx_.reply_err(env, Err::WrongManager, "not the System Table keeper");
    return;
  }
  Mutation m;
  m.entry = CatalogEntry::from_json(env.body.at("entry"));
  m.mode = env.msg_type == "ST_REGISTER" ? "register"
                                         : env.body.at("mode").get<std::string>();
  m.req = env;
  pending_.push_back(std::move(m));
  pump_mutations();
}

void SysTableSvc::pump_mutations() {
  if (mutations_in_flight_ > 0 || pending_.empty()) return;
  Mutation m = std::move(pending_.front());
  pending_.pop_front();

  if (m.mode == "register") {
    if (st_.entries.count(m.entry.table)) {
      ctx_.reply_err(m.req, Err::TableExists, m.entry.table);
      pump_mutations();
      return;
    }
    m.entry.version = 1;
    st_.entries[m.entry.table] = m.entry;
  } else if (m.mode == "set") {
    auto it = st_.entries.find(m.entry.table);
    m.entry.version = it == st_.entries.end() ? 1 : it->second.version + 1;
    st_.entries[m.entry.table] = m.entry;
  } else {  // remove
    st_.entries.erase(m.entry.table);
  }
  st_.version++;
  persist();
  ctx_.log_event(json{{"ev", "st_mutation"},
                      {"mode", m.mode},
                      {"table", m.entry.table},
                      {"version", st_.version}});

  mutations_in_flight_ = 1;
  const uint64_t entry_version = m.entry.version;
  auto req = m.req;
  sync_and_reply([this, req, entry_version](Status st) {
    mutations_in_flight_ = 0;
    if (st.ok()) {
      ctx_.reply_to(req, json{{"version", entry_version}});
    } else {
      ctx_.reply_err(req, st.code, st.message);
    }
    pump_mutations();
  });
}

void SysTableSvc::sync_and_reply(std::function<void(Status)> done) {
  // Write-through: every reachable meta replica acknowledges before the
  // caller does. Unreachable replicas are refreshed on next contact; the
  // catalog must not become unavailable because one copy is down.
  meta_ = desired_meta();
  if (meta_.empty()) {
    done(Status::good());
    return;
  }
  struct Acc {
    size_t waiting;
    size_t acked = 0;
    std::function<void(Status)> done;
  };
  auto acc = std::make_shared<Acc>();
  acc->waiting = meta_.size();
  acc->done = std::move(done);
  for (const auto& m : meta_) {
    ctx_.request(m, "ST_SYNC", json{{"state", st_.to_json()}},
                 ctx_.cfg().prepare_timeout_ms, [acc](Result<json> r) {
                   if (r.ok()) acc->acked++;
                   if (--acc->waiting == 0) {
                     // Commit with at least one surviving copy (or none
                     // reachable at all: the keeper copy itself remains).
                     acc->done(Status::good());
                   }
                 });
  }
}

void SysTableSvc::handle_lookup(const Envelope& env) {
  if (!keeper_) {
    ctx_.reply_err(env, Err::WrongManager, "not the System Table keeper");
    return;
  }
  const std::string table = env.body.at("table").get<std::string>();
  if (table == "*") {
    json ents = json::object();
    for (const auto& [name, e] : st_.entries) ents[name] = e.to_json();
    ctx_.reply_to_as(env, "ST_LOOKUP_REPLY", json{{"entries", ents}});
    return;
  }
  auto it = st_.entries.find(table);
  if (it == st_.entries.end()) {
    ctx_.reply_err(env, Err::NoSuchTable, table);
    return;
  }
  ctx_.reply_to_as(env, "ST_LOOKUP_REPLY", json{{"entry", it->second.to_json()}});
}

void SysTableSvc::handle_sync(const Envelope& env) {
  const auto incoming = SystemTableState::from_json(env.body.at("state"));
  if (replica_ && incoming.epoch < st_.epoch) {
    ctx_.reply_err(env, Err::Aborted, "stale keeper epoch");
    return;
  }
  if (keeper_ && incoming.epoch > st_.epoch) {
    // A newer keeper exists; step down to replica.
    keeper_ = false;
  }
  st_ = incoming;
  replica_ = true;
  persist();
  ctx_.reply_to(env, json{{"version", st_.version}});
}

void SysTableSvc::handle_ptr_get(const Envelope& env) {
  if (!ptr_) {
    ctx_.reply_err(env, Err::Retryable, "no pointer record here");
    return;
  }
  ctx_.reply_to(env, json{{"rec", ptr_->to_json()}});
}

void SysTableSvc::handle_ptr_put(const Envelope& env) {
  const auto rec = PointerRecord::from_json(env.body.at("rec"));
  if (ptr_ && rec.epoch < ptr_->epoch) {
    ctx_.reply_err(env, Err::Aborted, "stale epoch");
    return;
  }
  ptr_ = rec;
  if (!ring_.alone()) {
    ctx_.send(ring_.successor().addr, "XFER_META", json{{"rec", rec.to_json()}});
  }
  ctx_.reply_to(env, json::object());
}

void SysTableSvc::handle_xfer_meta(const Envelope& env) {
  const auto rec = PointerRecord::from_json(env.body.at("rec"));
  if (!ptr_ || rec.epoch >= ptr_->epoch) ptr_ = rec;
}

// ---------------------------------------------------------------------------
// failure handling

void SysTableSvc::on_upcall(const Address& failed) {
  if (keeper_) {
    fanout_node_failed(failed);
    return;
  }
  keeper_cache_.reset();
  locate([this, failed](Result<Address> k) {
    if (!k.ok()) {
      // No reachable pointer: if we hold a replica, the keeper is likely the
      // failed node itself and discovery died with it. Recover locally.
      if (replica_) recover_keeper(failed);
      else ctx_.log_event(json{{"ev", "st_unreachable"}, {"failed", failed}});
      return;
    }
    if (k.value() == failed) {
      recover_keeper(failed);
    } else {
      ctx_.send(k.value(), "NODE_FAILED", json{{"failed", failed}});
    }
  });
}

void SysTableSvc::recover_keeper(const Address& failed) {
  if (recovering_ || keeper_) return;
  recovering_ = true;
  // First surviving meta replica in successor order takes over. The detector
  // is the crashed keeper's ring successor, so in the common case that is us.
  if (replica_) {
    promote_self(failed, [this](Status) { recovering_ = false; });
    return;
  }
  auto succs = ring_.ring().successors;
  auto idx = std::make_shared<size_t>(0);
  auto peers = std::make_shared<std::vector<Address>>();
  for (const auto& p : succs) {
    if (p.addr != ctx_.self() && p.addr != failed) peers->push_back(p.addr);
  }
  auto next = std::make_shared<std::function<void()>>();
  *next = [this, idx, peers, failed, next]() {
    if (*idx >= peers->size()) {
      recovering_ = false;
      ctx_.log_event(json{{"ev", "st_catalog_lost"}, {"failed", failed}});
      return;
    }
    const Address peer = (*peers)[(*idx)++];
    ctx_.request(peer, "ST_RECOVER", json{{"failed", failed}},
                 ctx_.cfg().lock_wait_ms, [this, next](Result<json> r) {
                   if (r.ok()) {
                     recovering_ = false;
                     keeper_cache_.reset();
                     return;
                   }
                   (*next)();
                 });
  };
  (*next)();
}

void SysTableSvc::promote_self(const Address& failed_keeper,
                               std::function<void(Status)> done) {
  keeper_ = true;
  st_.epoch++;
  persist();
  keeper_cache_.reset();
  ctx_.log_event(json{{"ev", "st_recovered"},
                      {"keeper", ctx_.self()},
                      {"epoch", st_.epoch},
                      {"failed", failed_keeper}});
  refresh_meta_set(true);
  install_pointer(PointerRecord{ctx_.self(), st_.epoch},
                  [this, failed_keeper, done](Status st) {
                    fanout_node_failed(failed_keeper);
                    done(st);
                  });
}

void SysTableSvc::handle_recover(const Envelope& env) {
  const Address failed = env.body.at("failed").get<std::string>();
  if (keeper_) {
    fanout_node_failed(failed);
    ctx_.reply_to(env, json::object());
    return;
  }
  if (!replica_) {
    ctx_.reply_err(env, Err::CatalogLost, "no persisted copy here");
    return;
  }
  recovering_ = true;
  auto req = env;
  promote_self(failed, [this, req](Status st) {
    recovering_ = false;
    if (st.ok()) ctx_.reply_to(req, json::object());
    else ctx_.reply_err(req, st.code, st.message);
  });
}

void SysTableSvc::fanout_node_failed(const Address& failed) {
  if (!handled_failures_.insert(failed).second) return;
  ctx_.log_event(json{{"ev", "st_fanout_failed"}, {"failed", failed}});
  for (const auto& [name, e] : st_.entries) {
    if (e.tm == failed) {
      // Re-instantiate the Table Manager on its first surviving meta replica.
      auto metas = std::make_shared<std::vector<Address>>();
      for (const auto& m : e.tm_meta) {
        if (m != failed) metas->push_back(m);
      }
      auto idx = std::make_shared<size_t>(0);
      const std::string table = name;
      auto next = std::make_shared<std::function<void()>>();
      *next = [this, idx, metas, table, failed, next]() {
        if (*idx >= metas->size()) {
          ctx_.log_event(json{{"ev", "tm_lost"}, {"table", table}});
          return;
        }
        const Address peer = (*metas)[(*idx)++];
        ctx_.request(peer, "TM_RECOVER", json{{"table", table}, {"failed", failed}},
                     ctx_.cfg().lock_wait_ms, [this, next](Result<json> r) {
                       if (!r.ok()) (*next)();
                     });
      };
      (*next)();
    } else {
      ctx_.send(e.tm, "NODE_FAILED", json{{"failed", failed}});
    }
  }
  if (std::find(meta_.begin(), meta_.end(), failed) != meta_.end()) {
    refresh_meta_set(true);
  }
}

void SysTableSvc::handle_node_failed(const Envelope& env) {
  if (!keeper_) return;
  fanout_node_failed(env.body.at("failed").get<std::string>());
}

// ---------------------------------------------------------------------------
// graceful departure

void SysTableSvc::leave_handoff(std::function<void(Status)> done) {
  if (!keeper_) {
    done(Status::good());
    return;
  }
  std::vector<Address> cands = meta_;
  for (const auto& p : ring_.ring().successors) {
    if (p.addr != ctx_.self() &&
        std::find(cands.begin(), cands.end(), p.addr) == cands.end()) {
      cands.push_back(p.addr);
    }
  }
  if (cands.empty()) {
    done(Status::error(Err::LeaveRefused, "no takeover candidate"));
    return;
  }
  auto idx = std::make_shared<size_t>(0);
  auto list = std::make_shared<std::vector<Address>>(std::move(cands));
  auto next = std::make_shared<std::function<void()>>();
  auto fin = std::make_shared<std::function<void(Status)>>(std::move(done));
  json state = st_.to_json();
  state["epoch"] = st_.epoch + 1;
  *next = [this, idx, list, state, next, fin]() {
    if (*idx >= list->size()) {
      (*fin)(Status::error(Err::LeaveRefused, "takeover failed"));
      return;
    }
    const Address peer = (*list)[(*idx)++];
    ctx_.request(peer, "ST_TAKEOVER", json{{"state", state}}, ctx_.cfg().lock_wait_ms,
                 [this, peer, next, fin](Result<json> r) {
                   if (!r.ok()) {
                     (*next)();
                     return;
                   }
                   keeper_ = false;
                   keeper_cache_ = peer;
                   ctx_.log_event(json{{"ev", "st_handoff"}, {"to", peer}});
                   (*fin)(Status::good());
                 });
  };
  (*next)();
}

void SysTableSvc::handle_takeover(const Envelope& env) {
  st_ = SystemTableState::from_json(env.body.at("state"));
  replica_ = true;
  keeper_ = true;
  persist();
  keeper_cache_.reset();
  ctx_.log_event(json{{"ev", "st_keeper"}, {"keeper", ctx_.self()}, {"epoch", st_.epoch}});
  refresh_meta_set(true);
  auto req = env;
  install_pointer(PointerRecord{ctx_.self(), st_.epoch}, [this, req](Status st) {
    if (st.ok()) ctx_.reply_to(req, json::object());
    else ctx_.reply_err(req, st.code, st.message);
  });
}

bool SysTableSvc::handle(const Envelope& env) {
  const std::string& t = env.msg_type;
  if (t == "ST_PTR_GET") handle_ptr_get(env);
  else if (t == "ST_PTR_PUT") handle_ptr_put(env);
  else if (t == "XFER_META") handle_xfer_meta(env);
  else if (t == "ST_LOOKUP") handle_lookup(env);
  else if (t == "ST_REGISTER" || t == "ST_UPDATE") handle_mutation(env);
  else if (t == "ST_SYNC") handle_sync(env);
  else if (t == "ST_RECOVER") handle_recover(env);
  else if (t == "ST_TAKEOVER") handle_takeover(env);
  else if (t == "NODE_FAILED") handle_node_failed(env);
  else return false;
  return true;
}

}  // namespace h2o::systable
