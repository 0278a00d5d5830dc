#include "h2o/node.hpp"

#include <algorithm>

namespace h2o::node {

Instance::Instance(Transport& transport, ClusterConfig cfg, Address self,
                   std::filesystem::path data_dir, uint64_t rng_seed)
    : transport_(transport),
      cfg_(std::move(cfg)),
      self_(std::move(self)),
      data_dir_(std::move(data_dir)),
      rng_(rng_seed) {
  std::filesystem::create_directories(data_dir_);
  ring_ = std::make_unique<overlay::RingNode>(
      *this, [this](const overlay::FailureUpcall& up) { on_upcall(up); });
  st_ = std::make_unique<systable::SysTableSvc>(*this, *ring_);
  stores_ = std::make_unique<tablemgr::ReplicaHost>(*this);
  mgr_ = std::make_unique<tablemgr::ManagerHost>(
      *this, *st_, *stores_, [this]() { return scores_; },
      [this]() {
        std::vector<Address> out;
        for (const auto& p : ring_->ring().successors) out.push_back(p.addr);
        return out;
      });
  engine_ = std::make_unique<exec::Engine>(*this, *st_, *mgr_, *stores_,
                                           [this]() { return scores_; });
  mon_ = std::make_unique<monitor::Monitor>(
      *this,
      [this](std::vector<sql::Statement> stmts, std::function<void(Result<json>)> cb) {
        engine_->submit_local(std::move(stmts), std::move(cb));
      },
      [this](std::map<Address, double> s) { scores_ = std::move(s); });
  ring_->on_topology_change = [this]() { st_->on_topology_change(); };
}

Envelope Instance::make_env(const Address& to, const std::string& type, json body) {
  Envelope env;
  env.msg_type = type;
  env.from = self_;
  env.to = to;
  env.rid = ++rid_counter_;
  env.body = std::move(body);
  return env;
}

void Instance::send(const Address& to, const std::string& type, json body) {
  transport_.transmit(make_env(to, type, std::move(body)));
}

void Instance::request(const Address& to, const std::string& type, json body,
                       uint64_t timeout_ms, ReplyFn cb) {
  Envelope env = make_env(to, type, std::move(body));
  const uint64_t rid = env.rid;
  Pending p;
  p.cb = std::move(cb);
  p.timer = transport_.schedule(timeout_ms, [this, rid]() {
    auto it = pending_.find(rid);
    if (it == pending_.end()) return;
    ReplyFn cb2 = std::move(it->second.cb);
    pending_.erase(it);
    cb2(Status::error(Err::Timeout));
  });
  pending_.emplace(rid, std::move(p));
  transport_.transmit(std::move(env));
}

void Instance::reply_to(const Envelope& req, json body) {
  reply_to_as(req, "REPLY", std::move(body));
}

void Instance::reply_to_as(const Envelope& req, const std::string& type, json body) {
  body["re"] = req.rid;
  transport_.transmit(make_env(req.from, type, std::move(body)));
}

void Instance::reply_err(const Envelope& req, Err code, const std::string& msg) {
  reply_to(req, err_body(code, msg));
}

uint64_t Instance::schedule(uint64_t delay_ms, std::function<void()> fn) {
  return transport_.schedule(delay_ms, std::move(fn));
}

void Instance::cancel_timer(uint64_t id) { transport_.cancel(id); }

void Instance::log_event(json ev) {
  ev["node"] = self_;
  transport_.log_event(std::move(ev));
}

bool Instance::idle() const {
  return ready_ && pending_.empty() && engine_->active() == 0 && mgr_->idle() &&
         st_->busy() == 0;
}

void Instance::set_scripted_sample(const monitor::ResourceSample& s) {
  mon_->set_scripted(s);
}

void Instance::on_upcall(const overlay::FailureUpcall& up) {
  mgr_->on_node_failed(up.failed);
  st_->on_upcall(up.failed);
}

void Instance::start_timers() {
  const uint64_t interval = cfg_.ping_interval_ms;
  // Weak recurring tick: stabilization plus the repair scan ride together.
  auto tick = std::make_shared<std::function<void()>>();
  *tick = [this, tick, interval]() {
    if (stopped_) return;
    ring_->stabilize_step();
    st_->on_topology_change();  // re-assert pointer/meta replication
    mgr_->repair_scan();
    transport_.schedule(interval, [tick]() { (*tick)(); });
  };
  transport_.schedule(interval, [tick]() { (*tick)(); });
  mon_->start();
}

void Instance::boot(std::optional<Address> bootstrap, std::function<void(Status)> done) {
  stores_->recover_all();
  auto attempt = std::make_shared<int>(0);
  auto join_loop = std::make_shared<std::function<void()>>();
  *join_loop = [this, bootstrap, done, attempt, join_loop]() {
    ring_->start(bootstrap, [this, bootstrap, done, attempt, join_loop](Status st) {
      if (!st.ok()) {
        if (++*attempt < 5) {
          transport_.schedule(cfg_.ping_interval_ms, [join_loop]() { (*join_loop)(); });
          return;
        }
        log_event(json{{"ev", "boot_failed"}, {"error", st.to_string()}});
        ready_ = true;
        done(st);
        return;
      }
      auto finish = [this, done](Status st2) {
        start_timers();
        reconcile_recovered_stores();
        ready_ = true;
        log_event(json{{"ev", "booted"}});
        done(st2);
      };
      if (!bootstrap) {
        st_->become_first_keeper([this, finish](Status st2) {
          if (!st2.ok()) {
            finish(st2);
            return;
          }
          auto created = sql::parse(monitor::kMonitorSchemaSql);
          engine_->submit_local({created.take()}, [finish](Result<json> r) {
            finish(r.status());
          });
        });
        return;
      }
      st_->locate([finish](Result<Address> r) { finish(r.status()); });
    });
  };
  (*join_loop)();
}

void Instance::reconcile_recovered_stores() {
  // A replica surviving on disk is only authoritative if its manager still
  // lists us; tables re-replicated past us while we were down get dropped.
  std::vector<std::string> tables;
  for (const auto& [t, s] : stores_->all()) tables.push_back(t);
  for (const auto& table : tables) {
    if (mgr_->manages(table)) continue;
    st_->lookup(table, [this, table](Result<systable::CatalogEntry> r) {
      if (!r.ok()) {
        if (r.code() == Err::NoSuchTable) {
          stores_->drop(table);
          log_event(json{{"ev", "stale_replica_dropped"}, {"table", table}});
        }
        return;
      }
      request(r.value().tm, "TM_STATUS", json{{"table", table}}, cfg_.lock_wait_ms,
              [this, table](Result<json> sr) {
                if (!sr.ok()) return;
                auto reps = sr.value().value("replicas", std::vector<Address>{});
                if (std::find(reps.begin(), reps.end(), self_) == reps.end()) {
                  stores_->drop(table);
                  log_event(json{{"ev", "stale_replica_dropped"}, {"table", table}});
                }
              });
    });
  }
}

// ---------------------------------------------------------------------------

void Instance::handle(Envelope env) {
  if (stopped_) return;
  ring_->saw_peer(env.from);
  st_->alive_again(env.from);
  mgr_->alive_again(env.from);

  // correlated reply?
  if (wire::is_reply_type(env.msg_type) && env.body.contains("re")) {
    const uint64_t re = env.body.at("re").get<uint64_t>();
    auto it = pending_.find(re);
    if (it != pending_.end()) {
      transport_.cancel(it->second.timer);
      ReplyFn cb = std::move(it->second.cb);
      pending_.erase(it);
      if (is_err_body(env.body)) cb(status_from(env.body));
      else cb(env.body);
    }
    // unmatched: a stale reply whose request already timed out
    return;
  }

  if (env.msg_type == "NODE_FAILED") {
    const Address failed = env.body.at("failed").get<std::string>();
    mgr_->on_node_failed(failed);
    st_->handle(env);
    return;
  }
  if (env.msg_type == "NODE_LEAVING") {
    const Address node = env.body.at("node").get<std::string>();
    auto req = env;
    mgr_->on_node_leaving(node, [this, req](Status st) {
      if (st.ok()) reply_to(req, json::object());
      else reply_err(req, st.code, st.message);
    });
    return;
  }
  if (env.msg_type == "STATUS") {
    handle_status(env);
    return;
  }
  if (env.msg_type == "LEAVE") {
    handle_leave(env);
    return;
  }
  if (env.msg_type == "KILL") {
    log_event(json{{"ev", "kill"}});
    std::exit(0);  // socket mode only; the simulator uses crash directly
  }

  if (ring_->handle(env)) return;
  if (st_->handle(env)) return;
  if (stores_->handle(env)) return;
  if (mgr_->handle(env)) return;
  if (engine_->handle(env)) return;
  log_event(json{{"ev", "unhandled"}, {"type", env.msg_type}});
}

// ---------------------------------------------------------------------------
// cluster status snapshot

void Instance::handle_status(const Envelope& env) {
  struct Snap {
    json ring = json::array();
    json catalog = json::object();
    json tables = json::object();
    size_t tm_waiting = 0;
    Envelope req;
  };
  auto snap = std::make_shared<Snap>();
  snap->req = env;

  auto finish = [this, snap]() {
    json scores = json::object();
    for (const auto& [a, s] : scores_) scores[a] = s;
    json local_stores = json::object();
    for (const auto& [t, s] : stores_->all()) {
      local_stores[t] = json{{"applied_seq", s.applied_seq()}, {"rows", s.row_count()}};
    }
    reply_to(snap->req, json{{"self", self_},
                             {"ring", snap->ring},
                             {"catalog", snap->catalog},
                             {"tables", snap->tables},
                             {"scores", scores},
                             {"local_stores", local_stores},
                             {"keeper", st_->is_keeper()}});
  };

  auto fetch_tables = [this, snap, finish](std::map<std::string, systable::CatalogEntry> entries) {
    for (const auto& [name, e] : entries) snap->catalog[name] = e.to_json();
    if (entries.empty()) {
      finish();
      return;
    }
    snap->tm_waiting = entries.size();
    for (const auto& [name, e] : entries) {
      const std::string table = name;
      request(e.tm, "TM_STATUS", json{{"table", table}}, cfg_.lock_wait_ms,
              [snap, table, finish](Result<json> r) {
                if (r.ok()) snap->tables[table] = r.value();
                else snap->tables[table] = err_body(r.code(), r.status().message);
                if (--snap->tm_waiting == 0) finish();
              });
    }
  };

  // walk the ring via successor pointers, bounded
  auto walk = std::make_shared<std::function<void(Address)>>();
  auto hops = std::make_shared<int>(0);
  auto continue_catalog = [this, snap, fetch_tables]() {
    st_->list_all([snap, fetch_tables](Result<std::map<std::string, systable::CatalogEntry>> r) {
      fetch_tables(r.ok() ? r.value() : std::map<std::string, systable::CatalogEntry>{});
    });
  };
  snap->ring.push_back(self_);
  if (ring_->alone()) {
    continue_catalog();
    return;
  }
  *walk = [this, snap, walk, hops, continue_catalog](Address cur) {
    if (cur == self_ || ++*hops > 128) {
      continue_catalog();
      return;
    }
    snap->ring.push_back(cur);
    request(cur, "GET_PRED", json::object(), cfg_.ping_interval_ms,
            [this, snap, walk, continue_catalog](Result<json> r) {
              if (!r.ok() || !r.value().contains("succs") ||
                  r.value().at("succs").empty()) {
                continue_catalog();
                return;
              }
              const Address next =
                  r.value().at("succs").at(0).at("addr").get<std::string>();
              (*walk)(next);
            });
  };
  (*walk)(ring_->successor().addr);
}

// ---------------------------------------------------------------------------
// graceful leave

void Instance::handle_leave(const Envelope& env) {
  if (ring_->alone()) {
    reply_err(env, Err::LeaveRefused, "sole remaining instance");
    return;
  }
  if (leaving_) {
    reply_err(env, Err::Draining, "leave already in progress");
    return;
  }
  leaving_ = true;
  engine_->set_draining(true);
  mgr_->set_draining(true);
  log_event(json{{"ev", "leave_start"}});

  // Drain: no new transactions are accepted; wait for held locks and
  // in-flight commits to finish, bounded by lock_wait_ms.
  const uint64_t deadline = now() + cfg_.lock_wait_ms;
  auto poll = std::make_shared<std::function<void()>>();
  auto req = env;
  *poll = [this, poll, deadline, req]() {
    const bool drained = engine_->active() == 0 && mgr_->idle();
    if (!drained && now() < deadline) {
      transport_.schedule(50, [poll]() { (*poll)(); });
      return;
    }
    finish_leave(req);
  };
  (*poll)();
}

void Instance::finish_leave(const Envelope& req) {
  // Order: move managers off, re-home data replicas, hand over the catalog,
  // then splice out of the ring. Every step is idempotent enough to tolerate
  // a timeout (the failure path would finish the job).
  mgr_->migrate_all([this, req](Status st_mig) {
    log_event(json{{"ev", "leave_migrated"}, {"ok", st_mig.ok()}});
    // Tell managers holding replicas here to re-home them.
    auto names = std::make_shared<std::vector<std::string>>();
    for (const auto& [t, s] : stores_->all()) names->push_back(t);
    auto resolve_then = [this, names, req](std::function<void(std::set<Address>)> k) {
      auto hosts = std::make_shared<std::set<Address>>();
      for_each_async(
          names->size(),
          [this, names, hosts](size_t i, std::function<void(Status)> k2) {
            st_->lookup((*names)[i], [this, hosts, k2](Result<systable::CatalogEntry> r) {
              if (r.ok() && r.value().tm != self_) hosts->insert(r.value().tm);
              k2(Status::good());
            });
          },
          [hosts, k](Status) { k(*hosts); });
    };
    resolve_then([this, req](std::set<Address> hosts) {
      auto host_list = std::make_shared<std::vector<Address>>(hosts.begin(), hosts.end());
      for_each_async(
          host_list->size(),
          [this, host_list](size_t i, std::function<void(Status)> k) {
            request((*host_list)[i], "NODE_LEAVING", json{{"node", self_}},
                    4 * cfg_.lock_wait_ms, [k](Result<json>) { k(Status::good()); });
          },
          [this, req](Status) {
            st_->leave_handoff([this, req](Status st_st) {
              log_event(json{{"ev", "leave_handoff"}, {"ok", st_st.ok()}});
              ring_->leave([this, req]() {
                log_event(json{{"ev", "leave_done"}});
                reply_to(req, json{{"left", true}});
                stopped_ = true;
              });
            });
          });
    });
  });
}

}  // namespace h2o::node
