#include "h2o/tablemgr.hpp"

#include <algorithm>
#include <fstream>

namespace h2o::tablemgr {

const char* lock_mode_name(LockMode m) { return m == LockMode::Read ? "READ" : "WRITE"; }

LockMode lock_mode_from(const std::string& s) {
  return s == "WRITE" ? LockMode::Write : LockMode::Read;
}

// ---------------------------------------------------------------------------
// LockTable

bool LockTable::write_held() const {
  for (const auto& [txn, m] : holders_) {
    if (m == LockMode::Write) return true;
  }
  return false;
}

bool LockTable::compatible(LockMode mode) const {
  if (holders_.empty()) return true;
  return mode == LockMode::Read && !write_held();
}

bool LockTable::acquire(const TxnId& txn, LockMode mode) {
  auto it = holders_.find(txn);
  if (it != holders_.end()) {
    if (it->second == LockMode::Write || mode == LockMode::Read) return true;
    // READ -> WRITE upgrade only for a sole holder with nobody queued
    if (holders_.size() == 1 && queue_.empty()) {
      it->second = LockMode::Write;
      return true;
    }
    queue_.push_back(Waiter{txn, mode});
    return false;
  }
  if (queue_.empty() && compatible(mode)) {
    holders_[txn] = mode;
    return true;
  }
  queue_.push_back(Waiter{txn, mode});
  return false;
}

std::vector<LockTable::Grant> LockTable::drain() {
  std::vector<Grant> out;
  while (!queue_.empty()) {
    const Waiter& w = queue_.front();
    const bool upgrade = holders_.size() == 1 && holders_.count(w.txn) &&
                         w.mode == LockMode::Write;
    if (!compatible(w.mode) && !upgrade) break;
    holders_[w.txn] = w.mode;
    out.push_back(Grant{w.txn, w.mode});
    queue_.pop_front();
  }
  return out;
}

std::vector<LockTable::Grant> LockTable::release(const TxnId& txn) {
  holders_.erase(txn);
  std::erase_if(queue_, [&](const Waiter& w) { return w.txn == txn; });
  return drain();
}

std::vector<LockTable::Grant> LockTable::withdraw(const TxnId& txn) {
  std::erase_if(queue_, [&](const Waiter& w) { return w.txn == txn; });
  return drain();
}

std::optional<LockMode> LockTable::holder_mode(const TxnId& txn) const {
  auto it = holders_.find(txn);
  if (it == holders_.end()) return std::nullopt;
  return it->second;
}

// ---------------------------------------------------------------------------
// AccessStats / routing

json AccessStats::to_json() const {
  return json{{"reads", reads},
              {"writes", writes},
              {"routed", routed},
              {"ewma_ms", ewma_ms},
              {"ewma_set", ewma_set}};
}

AccessStats AccessStats::from_json(const json& j) {
  AccessStats s;
  s.reads = j.value("reads", uint64_t(0));
  s.writes = j.value("writes", uint64_t(0));
  s.ewma_ms = j.value("ewma_ms", 0.0);
  s.ewma_set = j.value("ewma_set", false);
  if (j.contains("routed")) {
    for (const auto& [a, c] : j.at("routed").items()) {
      s.routed[a] = c.get<uint64_t>();
    }
  }
  return s;
}

Address choose_read_replica(const std::vector<Address>& replicas,
                            const std::map<Address, uint64_t>& routed,
                            const std::map<Address, double>& scores) {
  Address best;
  double best_score = -1;
  uint64_t best_count = 0;
  for (const auto& r : replicas) {
    const auto sit = scores.find(r);
    const double sc = sit == scores.end() ? 0.0 : sit->second;
    const auto cit = routed.find(r);
    const uint64_t cnt = cit == routed.end() ? 0 : cit->second;
    const bool better = best.empty() || sc > best_score ||
                        (sc == best_score && cnt < best_count) ||
                        (sc == best_score && cnt == best_count && r < best);
    if (better) {
      best = r;
      best_score = sc;
      best_count = cnt;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// TmState

json TmState::to_json() const {
  return json{{"table_name", table},   {"replicas", replicas},
              {"target_rf", target_rf}, {"commit_seq", commit_seq},
              {"meta_replicas", meta},  {"stats", stats.to_json()},
              {"epoch", epoch}};
}

Result<TmState> TmState::from_json(const json& j) {
  if (!j.is_object() || !j.contains("table_name")) {
    return Status::error(Err::RecoveryError, "malformed tm state");
  }
  TmState st;
  st.table = j.at("table_name").get<std::string>();
  st.replicas = j.at("replicas").get<std::vector<Address>>();
  st.target_rf = j.at("target_rf").get<int>();
  st.commit_seq = j.at("commit_seq").get<uint64_t>();
  st.meta = j.at("meta_replicas").get<std::vector<Address>>();
  st.stats = AccessStats::from_json(j.at("stats"));
  st.epoch = j.value("epoch", uint64_t(1));
  return st;
}

// ---------------------------------------------------------------------------
// ReplicaHost

ReplicaHost::ReplicaHost(NodeCtx& ctx) : ctx_(ctx) {}

std::filesystem::path ReplicaHost::table_dir(const std::string& table) const {
  return ctx_.data_dir() / "tables" / table;
}

storage::ReplicaStore* ReplicaHost::get(const std::string& table) {
  auto it = stores_.find(table);
  return it == stores_.end() ? nullptr : &it->second;
}

Status ReplicaHost::create(const storage::TableSchema& schema) {
  auto made = storage::ReplicaStore::create(table_dir(schema.name), schema);
  if (!made.ok()) return made.status();
  stores_.insert_or_assign(schema.name, made.take());
  return Status::good();
}

void ReplicaHost::drop(const std::string& table) {
  stores_.erase(table);
  storage::ReplicaStore::destroy(table_dir(table));
}

void ReplicaHost::recover_all() {
  const auto root = ctx_.data_dir() / "tables";
  if (!std::filesystem::exists(root)) return;
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) {
    auto rec = storage::ReplicaStore::recover(d);
    if (rec.ok()) {
      stores_.insert_or_assign(d.filename().string(), rec.take());
    } else {
      ctx_.log_event(json{{"ev", "recover_failed"},
                          {"dir", d.filename().string()},
                          {"error", rec.status().to_string()}});
    }
  }
}

void ReplicaHost::handle_prepare(const Envelope& env) {
  const std::string table = env.body.at("table").get<std::string>();
  const uint64_t epoch = env.body.at("epoch").get<uint64_t>();
  auto vote_no = [&](const std::string& reason) {
    ctx_.reply_to_as(env, "TM_VOTE", json{{"vote", "no"}, {"reason", reason}});
  };
  if (epoch < seen_epoch_[table]) {
    vote_no("stale epoch");
    return;
  }
  seen_epoch_[table] = epoch;
  auto* store = get(table);
  if (!store) {
    vote_no("no replica");
    return;
  }
  uint64_t expect = store->applied_seq() + 1;
  for (const auto& ej : env.body.at("entries")) {
    auto entry = storage::LogEntry::from_json(ej);
    if (!entry.ok()) {
      vote_no("bad entry");
      return;
    }
    if (entry.value().seq != expect++) {
      vote_no("gap");
      return;
    }
    auto stmt = sql::parse(entry.value().stmt);
    if (!stmt.ok()) {
      vote_no("unparseable");
      return;
    }
    Status bound = store->bind_check(stmt.value());
    if (!bound.ok()) {
      vote_no("bind: " + bound.message);
      return;
    }
  }
  // Nothing staged durably: a coordinator crash before COMMIT leaves no trace
  // here, which is exactly presumed-abort.
  ctx_.reply_to_as(env, "TM_VOTE", json{{"vote", "yes"}});
}

void ReplicaHost::handle_commit(const Envelope& env) {
  const std::string table = env.body.at("table").get<std::string>();
  const uint64_t epoch = env.body.at("epoch").get<uint64_t>();
  if (epoch < seen_epoch_[table]) {
    ctx_.reply_err(env, Err::Aborted, "stale epoch");
    return;
  }
  seen_epoch_[table] = epoch;
  auto* store = get(table);
  if (!store) {
    ctx_.reply_err(env, Err::ReplicaUnavailable, "no replica");
    return;
  }
  int affected = 0;
  for (const auto& ej : env.body.at("entries")) {
    auto entry = storage::LogEntry::from_json(ej);
    if (!entry.ok()) {
      ctx_.reply_err(env, Err::Aborted, "bad entry");
      return;
    }
    auto r = store->apply_committed(entry.value());
    if (!r.ok()) {
      ctx_.reply_err(env, r.code(), r.status().message);
      return;
    }
    affected += r.value();
  }
  ctx_.reply_to_as(env, "TM_COMMIT_ACK",
                   json{{"applied_seq", store->applied_seq()},
                        {"affected", affected},
                        {"row_count", store->row_count()}});
}

void ReplicaHost::handle_copy_req(const Envelope& env) {
  // Three-party exchange: the manager asked us (an up-to-date replica) to
  // stream schema + full log to `dest`; dest completes the manager's request.
  const std::string table = env.body.at("table").get<std::string>();
  const Address dest = env.body.at("dest").get<std::string>();
  const uint64_t want = env.body.value("want_seq", uint64_t(0));
  auto* store = get(table);
  if (!store || store->applied_seq() < want) {
    ctx_.reply_err(env, Err::ReplicaUnavailable, "source behind");
    return;
  }
  json log = json::array();
  for (const auto& e : store->log()) log.push_back(e.to_json());
  ctx_.send(dest, "TM_COPY_DATA",
            json{{"table", table},
                 {"schema", store->schema().to_json()},
                 {"log", log},
                 {"done_to", env.from},
                 {"re", env.rid}});
}

void ReplicaHost::handle_copy_data(const Envelope& env) {
  const std::string table = env.body.at("table").get<std::string>();
  auto schema = storage::TableSchema::from_json(env.body.at("schema"));
  if (!schema.ok()) return;
  std::vector<storage::LogEntry> log;
  for (const auto& ej : env.body.at("log")) {
    auto e = storage::LogEntry::from_json(ej);
    if (!e.ok()) return;
    log.push_back(e.take());
  }
  auto installed = storage::ReplicaStore::install(table_dir(table), schema.take(), log);
  json done;
  if (installed.ok()) {
    stores_.insert_or_assign(table, installed.take());
    done = json{{"table", table}, {"applied_seq", stores_.at(table).applied_seq()}};
  } else {
    done = node::err_body(installed.code(), installed.status().message);
  }
  if (env.body.contains("done_to")) {
    done["re"] = env.body.at("re");
    ctx_.send(env.body.at("done_to").get<std::string>(), "TM_COPY_DONE", done);
  } else {
    ctx_.reply_to_as(env, "TM_COPY_DONE", done);
  }
}

void ReplicaHost::handle_fetch(const Envelope& env) {
  const std::string table = env.body.at("table").get<std::string>();
  auto* store = get(table);
  if (!store) {
    ctx_.reply_err(env, Err::ReplicaUnavailable, "no replica of " + table);
    return;
  }
  json rows = json::array();
  for (const auto& [id, row] : store->rows()) {
    json vals = json::array();
    for (const auto& v : row.values) vals.push_back(storage::value_to_json(v));
    rows.push_back(json{{"id", id}, {"values", vals}});
  }
  ctx_.reply_to(env, json{{"schema", store->schema().to_json()}, {"rows", rows}});
}

void ReplicaHost::handle_repl_status(const Envelope& env) {
  const std::string table = env.body.at("table").get<std::string>();
  auto* store = get(table);
  if (!store) {
    ctx_.reply_err(env, Err::ReplicaUnavailable, "no replica");
    return;
  }
  ctx_.reply_to(env, json{{"applied_seq", store->applied_seq()},
                          {"row_count", store->row_count()}});
}

bool ReplicaHost::handle(const Envelope& env) {
  const std::string& t = env.msg_type;
  if (t == "TM_PREPARE") handle_prepare(env);
  else if (t == "TM_COMMIT") handle_commit(env);
  else if (t == "TM_ABORT") { /* nothing staged, nothing to discard */ }
  else if (t == "TM_COPY_REQ") handle_copy_req(env);
  else if (t == "TM_COPY_DATA") handle_copy_data(env);
  else if (t == "EXEC_FETCH") handle_fetch(env);
  else if (t == "TM_REPL_STATUS") handle_repl_status(env);
  else if (t == "TM_DROP" && env.body.value("scope", "") == "replica") {
    drop(env.body.at("table").get<std::string>());
    ctx_.reply_to(env, json::object());
  } else {
    return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// ManagerHost

ManagerHost::ManagerHost(NodeCtx& ctx, systable::SysTableSvc& st, ReplicaHost& stores,
                         ScoresFn scores, SuccessorsFn successors)
    : ctx_(ctx),
      st_(st),
      stores_(stores),
      scores_(std::move(scores)),
      successors_(std::move(successors)) {}

TxnId ManagerHost::internal_txn(const char* tag) {
  return std::string(tag) + ":" + ctx_.self() + ":" + std::to_string(++txn_counter_);
}

void ManagerHost::persist(const Tm& tm) {
  const auto dir = ctx_.data_dir() / "tm";
  std::filesystem::create_directories(dir);
  const auto path = dir / (tm.st.table + ".json");
  const auto tmp = dir / (tm.st.table + ".json.tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << tm.st.to_json().dump() << "\n";
    out.flush();
  }
  std::filesystem::rename(tmp, path);
  tm_meta_store_[tm.st.table] = tm.st.to_json();
}

void ManagerHost::refresh_meta(Tm& tm) {
  // TM state copies live on this host's ring successors, mirroring the
  // System Table scheme.
  tm.st.meta.clear();
  for (const auto& a : successors_()) {
    if (a == ctx_.self() || known_dead_.count(a)) continue;
    if (std::find(tm.st.meta.begin(), tm.st.meta.end(), a) != tm.st.meta.end()) continue;
    tm.st.meta.push_back(a);
    if (int(tm.st.meta.size()) >= ctx_.cfg().meta_replicas) break;
  }
}

void ManagerHost::meta_sync(Tm& tm) {
  for (const auto& m : tm.st.meta) {
    if (m == ctx_.self()) continue;
    ctx_.request(m, "TM_META_SYNC",
                 json{{"table", tm.st.table}, {"state", tm.st.to_json()}},
                 ctx_.cfg().prepare_timeout_ms, [](Result<json>) {});
  }
}

void ManagerHost::handle_meta_sync(const Envelope& env) {
  const std::string table = env.body.at("table").get<std::string>();
  const json& state = env.body.at("state");
  auto it = tm_meta_store_.find(table);
  if (it != tm_meta_store_.end() &&
      it->second.value("epoch", uint64_t(1)) > state.value("epoch", uint64_t(1))) {
    ctx_.reply_err(env, Err::Aborted, "stale tm epoch");
    return;
  }
  tm_meta_store_[table] = state;
  const auto dir = ctx_.data_dir() / "tm";
  std::filesystem::create_directories(dir);
  const auto tmp = dir / (table + ".json.tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << state.dump() << "\n";
    out.flush();
  }
  std::filesystem::rename(tmp, dir / (table + ".json"));
  ctx_.reply_to(env, json::object());
}

// -- locking ----------------------------------------------------------------

void ManagerHost::grant_reply(Tm& tm, const TxnId& txn, bool granted, Err err) {
  auto cbit = tm.wait_cbs.find(txn);
  if (cbit != tm.wait_cbs.end()) {
    auto cb = std::move(cbit->second);
    tm.wait_cbs.erase(cbit);
    if (granted) {
      tm.grant_time[txn] = ctx_.now();
      ctx_.log_event(json{{"ev", "lock_grant"}, {"table", tm.st.table}, {"txn", txn},
                          {"mode", lock_mode_name(*tm.locks.holder_mode(txn))}});
    }
    cb(granted);
    return;
  }
  auto rit = tm.wait_reqs.find(txn);
  if (rit == tm.wait_reqs.end()) return;
  Envelope req = std::move(rit->second);
  tm.wait_reqs.erase(rit);
  if (granted) {
    ctx_.log_event(json{{"ev", "lock_grant"},
                        {"table", tm.st.table},
                        {"txn", txn},
                        {"mode", req.body.at("mode").get<std::string>()}});
    tm.grant_time[txn] = ctx_.now();
    json meta{{"granted", true},
              {"replicas", tm.st.replicas},
              {"row_count", tm.row_count},
              {"routed", tm.st.stats.routed},
              {"commit_seq", tm.st.commit_seq}};
    ctx_.reply_to_as(req, "TM_LOCK_REPLY", meta);
  } else {
    ctx_.log_event(json{{"ev", "lock_timeout"}, {"table", tm.st.table}, {"txn", txn}});
    json body = node::err_body(err == Err::None ? Err::LockTimeout : err);
    body["granted"] = false;
    ctx_.reply_to_as(req, "TM_LOCK_REPLY", body);
  }
}

void ManagerHost::deliver_grants(Tm& tm, const std::vector<LockTable::Grant>& grants) {
  for (const auto& g : grants) {
    auto tit = tm.wait_timers.find(g.txn);
    if (tit != tm.wait_timers.end()) {
      ctx_.cancel_timer(tit->second);
      tm.wait_timers.erase(tit);
    }
    grant_reply(tm, g.txn, true);
  }
}

void ManagerHost::handle_lock(const Envelope& env) {
  const std::string table = env.body.at("table").get<std::string>();
  auto it = tms_.find(table);
  if (it == tms_.end()) {
    json body = node::err_body(Err::WrongManager, "no manager for " + table + " here");
    body["granted"] = false;
    ctx_.reply_to_as(env, "TM_LOCK_REPLY", body);
    return;
  }
  Tm& tm = it->second;
  if (draining_ || tm.dropping) {
    json body = node::err_body(Err::Draining);
    body["granted"] = false;
    ctx_.reply_to_as(env, "TM_LOCK_REPLY", body);
    return;
  }
  const TxnId txn = env.body.at("txn").get<std::string>();
  const LockMode mode = lock_mode_from(env.body.at("mode").get<std::string>());
  tm.wait_reqs[txn] = env;
  if (tm.locks.acquire(txn, mode)) {
    grant_reply(tm, txn, true);
    return;
  }
  const std::string tname = table;
  tm.wait_timers[txn] = ctx_.schedule(ctx_.cfg().lock_wait_ms, [this, tname, txn]() {
    auto tit = tms_.find(tname);
    if (tit == tms_.end()) return;
    Tm& t = tit->second;
    if (!t.wait_reqs.count(txn) && !t.wait_cbs.count(txn)) return;
    t.wait_timers.erase(txn);
    auto grants = t.locks.withdraw(txn);
    grant_reply(t, txn, false, Err::LockTimeout);
    deliver_grants(t, grants);
  });
}

void ManagerHost::acquire_internal(const std::string& table, const TxnId& txn,
                                   LockMode mode, std::function<void(bool)> cb) {
  auto it = tms_.find(table);
  if (it == tms_.end()) {
    cb(false);
    return;
  }
  Tm& tm = it->second;
  if (tm.locks.acquire(txn, mode)) {
    tm.grant_time[txn] = ctx_.now();
    ctx_.log_event(json{{"ev", "lock_grant"},
                        {"table", table},
                        {"txn", txn},
                        {"mode", lock_mode_name(mode)}});
    cb(true);
    return;
  }
  tm.wait_cbs[txn] = std::move(cb);
  tm.wait_timers[txn] = ctx_.schedule(ctx_.cfg().lock_wait_ms, [this, table, txn]() {
    auto tit = tms_.find(table);
    if (tit == tms_.end()) return;
    Tm& t = tit->second;
    if (!t.wait_cbs.count(txn)) return;
    t.wait_timers.erase(txn);
    auto grants = t.locks.withdraw(txn);
    grant_reply(t, txn, false, Err::LockTimeout);
    deliver_grants(t, grants);
  });
}

void ManagerHost::release_internal(const std::string& table, const TxnId& txn) {
  auto it = tms_.find(table);
  if (it == tms_.end()) return;
  Tm& tm = it->second;
  tm.grant_time.erase(txn);
  auto grants = tm.locks.release(txn);
  deliver_grants(tm, grants);
}

void ManagerHost::handle_release(const Envelope& env) {
  const std::string table = env.body.at("table").get<std::string>();
  auto it = tms_.find(table);
  if (it == tms_.end()) return;  // idempotent: manager moved or table dropped
  Tm& tm = it->second;
  const TxnId txn = env.body.at("txn").get<std::string>();
  const auto mode = tm.locks.holder_mode(txn);
  if (mode) {
    ctx_.log_event(json{{"ev", "lock_release"}, {"table", table}, {"txn", txn}});
    auto git = tm.grant_time.find(txn);
    if (git != tm.grant_time.end()) {
      tm.st.stats.record_response(double(ctx_.now() - git->second));
      tm.grant_time.erase(git);
    }
    if (*mode == LockMode::Read) {
      tm.st.stats.reads++;
      if (env.body.contains("routed")) {
        const Address r = env.body.at("routed").get<std::string>();
        if (!r.empty()) tm.st.stats.routed[r]++;
      }
    }
  }
  auto grants = tm.locks.release(txn);
  deliver_grants(tm, grants);
}

// -- two-phase commit ---------------------------------------------------------

void ManagerHost::handle_update(const Envelope& env) {
  const std::string table = env.body.at("table").get<std::string>();
  auto it = tms_.find(table);
  if (it == tms_.end()) {
    ctx_.reply_err(env, Err::WrongManager, "no manager for " + table + " here");
    return;
  }
  Tm& tm = it->second;
  const TxnId txn = env.body.at("txn").get<std::string>();
  if (tm.locks.holder_mode(txn) != std::optional<LockMode>(LockMode::Write)) {
    ctx_.reply_err(env, Err::Retryable, "write lock not held");
    return;
  }
  std::vector<storage::LogEntry> entries;
  uint64_t seq = tm.st.commit_seq;
  for (const auto& sj : env.body.at("stmts")) {
    entries.push_back(storage::LogEntry{++seq, txn, sj.get<std::string>()});
  }
  auto req = env;
  run_two_phase(tm, txn, std::move(entries), [this, req](Result<json> r) {
    if (r.ok()) ctx_.reply_to_as(req, "TM_UPDATE_REPLY", r.value());
    else ctx_.reply_to_as(req, "TM_UPDATE_REPLY", node::err_body(r.code(), r.status().message));
  });
}

void ManagerHost::run_two_phase(Tm& tm, const TxnId& txn,
                                std::vector<storage::LogEntry> entries,
                                std::function<void(Result<json>)> done) {
  const std::string table = tm.st.table;
  tm.prepared.insert(txn);

  json entries_json = json::array();
  for (const auto& e : entries) entries_json.push_back(e.to_json());
  const json prepare_body{{"table", table},
                          {"txn", txn},
                          {"entries", entries_json},
                          {"epoch", tm.st.epoch}};

  struct Round {
    size_t waiting = 0;
    bool all_yes = true;
    Status first_error = Status::good();
    std::vector<Address> suspects;  // unreachable or stale replicas
  };
  auto round = std::make_shared<Round>();
  const std::vector<Address> participants = tm.st.replicas;
  round->waiting = participants.size();

  auto finish_abort = [this, table, txn, done](Status why,
                                               const std::vector<Address>& suspects) {
    auto tit = tms_.find(table);
    if (tit != tms_.end()) {
      Tm& t = tit->second;
      for (const auto& r : t.st.replicas) {
        ctx_.send(r, "TM_ABORT", json{{"table", table}, {"txn", txn}});
      }
      t.prepared.erase(txn);
      ctx_.log_event(json{{"ev", "tm_abort"},
                          {"table", table},
                          {"txn", txn},
                          {"reason", why.to_string()}});
    }
    for (const auto& s : suspects) remove_replica_and_repair(table, s);
    done(why);
  };

  auto phase2 = [this, table, txn, entries_json, done](size_t nparticipants) {
    auto tit = tms_.find(table);
    if (tit == tms_.end()) {
      done(Status::error(Err::WrongManager, "manager vanished mid-commit"));
      return;
    }
    Tm& t = tit->second;
    struct Acks {
      size_t waiting = 0;
      int affected = 0;
      int64_t row_count = -1;
      bool any = false;
      std::vector<Address> suspects;
    };
    auto acks = std::make_shared<Acks>();
    acks->waiting = nparticipants;
    const json commit_body{{"table", table},
                           {"txn", txn},
                           {"entries", entries_json},
                           {"epoch", t.st.epoch}};
    const size_t k = entries_json.size();
    auto conclude = [this, table, txn, k, acks, done]() {
      auto tit2 = tms_.find(table);
      if (tit2 == tms_.end()) {
        done(Status::error(Err::WrongManager, "manager vanished mid-commit"));
        return;
      }
      Tm& t2 = tit2->second;
      t2.st.commit_seq += k;
      t2.st.stats.writes++;
      if (acks->row_count >= 0) t2.row_count = acks->row_count;
      persist(t2);
      meta_sync(t2);
      t2.prepared.erase(txn);
      ctx_.log_event(json{{"ev", "tm_commit"},
                          {"table", table},
                          {"txn", txn},
                          {"first_seq", t2.st.commit_seq - k + 1},
                          {"count", k}});
      for (const auto& s : acks->suspects) remove_replica_and_repair(table, s);
      done(json{{"committed", true},
                {"first_seq", t2.st.commit_seq - k + 1},
                {"count", k},
                {"affected", acks->affected}});
    };
    for (const auto& r : t.st.replicas) {
      ctx_.request(r, "TM_COMMIT", commit_body, ctx_.cfg().prepare_timeout_ms,
                   [this, r, acks, conclude](Result<json> res) {
                     if (res.ok()) {
                       acks->any = true;
                       acks->affected = res.value().value("affected", 0);
                       acks->row_count = res.value().value("row_count", int64_t(-1));
                     } else {
                       // The decision stands; this replica catches up via
                       // repair rather than blocking the commit.
                       acks->suspects.push_back(r);
                     }
                     if (--acks->waiting == 0) conclude();
                   });
    }
  };

  for (const auto& r : participants) {
    ctx_.request(
        r, "TM_PREPARE", prepare_body, ctx_.cfg().prepare_timeout_ms,
        [this, r, txn, table, round, participants, finish_abort, phase2](Result<json> res) {
          if (!res.ok()) {
            round->all_yes = false;
            if (round->first_error.ok()) {
              round->first_error = Status::error(Err::ReplicaUnavailable,
                                                 r + ": " + res.status().to_string());
            }
            if (res.code() == Err::Timeout || res.code() == Err::ReplicaUnavailable ||
                res.code() == Err::SequenceGap) {
              round->suspects.push_back(r);
            }
          } else {
            const std::string vote = res.value().value("vote", "no");
            ctx_.log_event(json{{"ev", "vote"},
                                {"table", table},
                                {"txn", txn},
                                {"from", r},
                                {"vote", vote}});
            if (vote != "yes") {
              round->all_yes = false;
              const std::string reason = res.value().value("reason", "");
              if (round->first_error.ok()) {
                round->first_error = Status::error(
                    reason.rfind("bind", 0) == 0 ? Err::BindError : Err::Aborted,
                    r + " voted no: " + reason);
              }
              if (reason == "gap" || reason == "no replica") round->suspects.push_back(r);
            }
          }
          if (--round->waiting > 0) return;
          if (round->all_yes) {
            phase2(participants.size());
          } else {
            finish_abort(round->first_error, round->suspects);
          }
        });
  }
  if (participants.empty()) {
    tm.prepared.erase(txn);
    done(Status::error(Err::TableUnavailable, "no replicas"));
  }
}

// -- repair -------------------------------------------------------------------

std::vector<Address> ManagerHost::recruit_candidates(const Tm& tm,
                                                     std::optional<Address> exclude) const {
  std::vector<std::pair<double, Address>> scored;
  for (const auto& [addr, score] : scores_()) {
    if (exclude && addr == *exclude) continue;
    if (known_dead_.count(addr)) continue;
    if (std::find(tm.st.replicas.begin(), tm.st.replicas.end(), addr) !=
        tm.st.replicas.end()) {
      continue;
    }
    scored.emplace_back(score, addr);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<Address> out;
  for (const auto& [s, a] : scored) out.push_back(a);
  return out;
}

void ManagerHost::remove_replica_and_repair(const std::string& table, const Address& dead) {
  // unresponsive during 2PC or a copy: stop recruiting it until it speaks
  known_dead_.insert(dead);
  auto it = tms_.find(table);
  if (it == tms_.end()) return;
  Tm& tm = it->second;
  auto pos = std::find(tm.st.replicas.begin(), tm.st.replicas.end(), dead);
  if (pos == tm.st.replicas.end()) return;
  tm.st.replicas.erase(pos);
  persist(tm);
  meta_sync(tm);
  if (tm.st.replicas.empty()) {
    ctx_.log_event(json{{"ev", "table_unavailable"}, {"table", table}});
    return;
  }
  start_repair(table, std::nullopt, [](Status) {});
}

void ManagerHost::start_repair(const std::string& table, std::optional<Address> exclude,
                               std::function<void(Status)> done) {
  auto it = tms_.find(table);
  if (it == tms_.end()) {
    done(Status::error(Err::NoSuchTable, table));
    return;
  }
  Tm& tm = it->second;
  if (tm.repairing || tm.st.replicas.empty()) {
    done(Status::good());
    return;
  }
  const bool displacing = exclude && std::find(tm.st.replicas.begin(),
                                               tm.st.replicas.end(),
                                               *exclude) != tm.st.replicas.end();
  const int live = int(tm.st.replicas.size()) - (displacing ? 1 : 0);
  if (live >= tm.st.target_rf) {
    done(Status::good());
    return;
  }
  auto cands = recruit_candidates(tm, exclude);
  if (cands.empty()) {
    done(Status::good());  // nobody to recruit; retried by the next scan
    return;
  }
  tm.repairing = true;
  const Address dest = cands.front();
  ctx_.log_event(json{{"ev", "repair_start"}, {"table", table}, {"dest", dest}});
  const TxnId txn = internal_txn("repair");
  acquire_internal(table, txn, LockMode::Write, [this, table, txn, dest, exclude,
                                                 done](bool granted) {
    auto tit = tms_.find(table);
    if (tit == tms_.end() || !granted) {
      if (tit != tms_.end()) tit->second.repairing = false;
      done(Status::error(Err::LockTimeout, "repair lock"));
      return;
    }
    copy_to(tit->second, dest, exclude, [this, table, txn, dest, done](Status st) {
      if (!st.ok()) known_dead_.insert(dest);  // blacklist failed recruits
      auto tit2 = tms_.find(table);
      if (tit2 != tms_.end()) {
        Tm& tm2 = tit2->second;
        if (st.ok()) {
          if (std::find(tm2.st.replicas.begin(), tm2.st.replicas.end(), dest) ==
              tm2.st.replicas.end()) {
            tm2.st.replicas.push_back(dest);
            std::sort(tm2.st.replicas.begin(), tm2.st.replicas.end());
          }
          persist(tm2);
          meta_sync(tm2);
          ctx_.log_event(json{{"ev", "repair_done"}, {"table", table}, {"dest", dest}});
        }
        tm2.repairing = false;
        release_internal(table, txn);
      }
      done(st);
    });
  });
}

void ManagerHost::copy_to(Tm& tm, const Address& dest, std::optional<Address> avoid_source,
                          std::function<void(Status)> done) {
  const std::string table = tm.st.table;
  std::vector<Address> sources;
  for (const auto& r : tm.st.replicas) {
    if (known_dead_.count(r)) continue;
    if (avoid_source && r == *avoid_source) continue;
    sources.push_back(r);
  }
  if (avoid_source &&
      std::find(tm.st.replicas.begin(), tm.st.replicas.end(), *avoid_source) !=
          tm.st.replicas.end() &&
      !known_dead_.count(*avoid_source)) {
    sources.push_back(*avoid_source);  // last resort: copy from the leaver
  }
  if (sources.empty()) {
    done(Status::error(Err::TableUnavailable, "no copy source"));
    return;
  }
  const uint64_t want = tm.st.commit_seq;
  auto idx = std::make_shared<size_t>(0);
  auto list = std::make_shared<std::vector<Address>>(std::move(sources));
  auto next = std::make_shared<std::function<void()>>();
  auto fin = std::make_shared<std::function<void(Status)>>(std::move(done));
  *next = [this, table, dest, want, idx, list, next, fin]() {
    if (*idx >= list->size()) {
      (*fin)(Status::error(Err::ReplicaUnavailable, "no usable copy source"));
      return;
    }
    const Address src = (*list)[(*idx)++];
    ctx_.request(src, "TM_COPY_REQ",
                 json{{"table", table}, {"dest", dest}, {"want_seq", want}},
                 ctx_.cfg().lock_wait_ms, [next, fin](Result<json> r) {
                   if (r.ok() && !node::is_err_body(r.value())) (*fin)(Status::good());
                   else (*next)();
                 });
  };
  (*next)();
}

void ManagerHost::repair_scan() {
  for (auto& [table, tm] : tms_) {
    if (tm.dropping) continue;
    // manager state copies follow the host's ring successors
    std::vector<Address> want;
    for (const auto& a : successors_()) {
      if (a == ctx_.self() || known_dead_.count(a)) continue;
      if (std::find(want.begin(), want.end(), a) != want.end()) continue;
      want.push_back(a);
      if (int(want.size()) >= ctx_.cfg().meta_replicas) break;
    }
    if (want != tm.st.meta) {
      tm.st.meta = std::move(want);
      persist(tm);
      meta_sync(tm);
      // keep the catalog's recovery candidates current
      systable::CatalogEntry e;
      e.table = table;
      e.tm = ctx_.self();
      e.tm_meta = tm.st.meta;
      st_.update_entry("set", e, [](Status) {});
    }
    if (tm.repairing) continue;
    if (int(tm.st.replicas.size()) < tm.st.target_rf) {
      start_repair(table, std::nullopt, [](Status) {});
    }
  }
}

// -- DDL ----------------------------------------------------------------------

void ManagerHost::create_table(const storage::TableSchema& schema, int target_rf,
                               std::function<void(Result<uint64_t>)> cb) {
  const std::string table = schema.name;
  if (tms_.count(table)) {
    cb(Status::error(Err::TableExists, table));
    return;
  }
  // Initial placement: the creator plus the best-scoring other live instances.
  std::vector<Address> replicas = {ctx_.self()};
  std::vector<std::pair<double, Address>> scored;
  for (const auto& [addr, score] : scores_()) {
    if (addr == ctx_.self() || known_dead_.count(addr)) continue;
    scored.emplace_back(score, addr);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (const auto& [s, a] : scored) {
    if (int(replicas.size()) >= target_rf) break;
    replicas.push_back(a);
  }
  std::sort(replicas.begin(), replicas.end());

  Tm tm;
  tm.st.table = table;
  tm.st.replicas = replicas;
  tm.st.target_rf = target_rf;
  tm.st.epoch = 1;
  refresh_meta(tm);
  tms_.emplace(table, std::move(tm));

  auto rollback = [this, table](Status why, std::function<void(Result<uint64_t>)> cb2) {
    auto tit = tms_.find(table);
    if (tit != tms_.end()) {
      for (const auto& r : tit->second.st.replicas) {
        if (r == ctx_.self()) stores_.drop(table);
        else ctx_.send(r, "TM_DROP", json{{"table", table}, {"scope", "replica"}});
      }
      tms_.erase(tit);
    }
    std::error_code ec;
    std::filesystem::remove(ctx_.data_dir() / "tm" / (table + ".json"), ec);
    cb2(why);
  };

  // Install the schema on every replica, then register with the System Table.
  auto schema_json = schema.to_json();
  node::for_each_async(
      replicas.size(),
      [this, table, replicas, schema, schema_json](size_t i, std::function<void(Status)> k) {
        const Address& r = replicas[i];
        if (r == ctx_.self()) {
          k(stores_.create(schema));
          return;
        }
        ctx_.request(r, "TM_COPY_DATA",
                     json{{"table", table}, {"schema", schema_json}, {"log", json::array()}},
                     ctx_.cfg().lock_wait_ms,
                     [k](Result<json> res) { k(res.status()); });
      },
      [this, table, cb, rollback](Status st) {
        auto tit = tms_.find(table);
        if (tit == tms_.end()) {
          cb(Status::error(Err::Internal, "create raced with drop"));
          return;
        }
        if (!st.ok()) {
          rollback(st, cb);
          return;
        }
        Tm& tm = tit->second;
        persist(tm);
        meta_sync(tm);
        systable::CatalogEntry entry;
        entry.table = table;
        entry.tm = ctx_.self();
        entry.tm_meta = tm.st.meta;
        st_.register_table(entry, [this, table, cb, rollback](Result<uint64_t> r) {
          if (!r.ok()) {
            rollback(r.status(), cb);
            return;
          }
          ctx_.log_event(json{{"ev", "table_created"}, {"table", table}});
          cb(r.value());
        });
      });
}

void ManagerHost::handle_drop(const Envelope& env) {
  if (env.body.value("scope", "") == "replica") return;  // ReplicaHost's case
  const std::string table = env.body.at("table").get<std::string>();
  auto it = tms_.find(table);
  if (it == tms_.end()) {
    ctx_.reply_err(env, Err::WrongManager, "no manager for " + table);
    return;
  }
  Tm& tm = it->second;
  const TxnId txn = env.body.at("txn").get<std::string>();
  if (tm.locks.holder_mode(txn) != std::optional<LockMode>(LockMode::Write)) {
    ctx_.reply_err(env, Err::Retryable, "write lock not held");
    return;
  }
  tm.dropping = true;
  const std::vector<Address> replicas = tm.st.replicas;
  auto req = env;
  node::for_each_async(
      replicas.size(),
      [this, table, replicas](size_t i, std::function<void(Status)> k) {
        const Address& r = replicas[i];
        if (r == ctx_.self()) {
          stores_.drop(table);
          k(Status::good());
          return;
        }
        ctx_.request(r, "TM_DROP", json{{"table", table}, {"scope", "replica"}},
                     ctx_.cfg().lock_wait_ms,
                     [k](Result<json>) { k(Status::good()); });  // best effort
      },
      [this, table, req](Status) {
        systable::CatalogEntry e;
        e.table = table;
        st_.update_entry("remove", e, [this, table, req](Status st) {
          tms_.erase(table);
          tm_meta_store_.erase(table);
          std::error_code ec;
          std::filesystem::remove(ctx_.data_dir() / "tm" / (table + ".json"), ec);
          ctx_.log_event(json{{"ev", "table_dropped"}, {"table", table}});
          if (st.ok()) ctx_.reply_to(req, json{{"dropped", true}});
          else ctx_.reply_err(req, st.code, st.message);
        });
      });
}

// -- status / recovery / migration ---------------------------------------------

void ManagerHost::handle_status(const Envelope& env) {
  const std::string table = env.body.at("table").get<std::string>();
  auto it = tms_.find(table);
  if (it == tms_.end()) {
    ctx_.reply_err(env, Err::WrongManager, "no manager for " + table);
    return;
  }
  const Tm& tm = it->second;
  ctx_.reply_to(env, json{{"table", table},
                          {"replicas", tm.st.replicas},
                          {"commit_seq", tm.st.commit_seq},
                          {"target_rf", tm.st.target_rf},
                          {"under_replicated",
                           int(tm.st.replicas.size()) < tm.st.target_rf},
                          {"row_count", tm.row_count},
                          {"epoch", tm.st.epoch},
                          {"stats", tm.st.stats.to_json()}});
}

void ManagerHost::finish_recover(const std::string& table, TmState st,
                                 std::function<void(Status)> done) {
  Tm tm;
  tm.st = std::move(st);
  tm.st.epoch++;
  // Fresh lock table: transactions that held locks get aborted by their
  // coordinators when their requests time out.
  std::erase_if(tm.st.replicas, [&](const Address& a) { return known_dead_.count(a) > 0; });
  tms_.insert_or_assign(table, std::move(tm));
  Tm& ref = tms_.at(table);

  // Replicas are the durable truth for the commit sequence: adopt the highest
  // applied_seq any of them reached, then level the stragglers up.
  struct Poll {
    size_t waiting;
    uint64_t max_seq = 0;
    int64_t rows = 0;
    std::vector<Address> reachable;
    std::map<Address, uint64_t> seqs;
  };
  auto poll = std::make_shared<Poll>();
  const auto replicas = ref.st.replicas;
  poll->waiting = replicas.size();
  auto conclude = [this, table, poll, replicas, done]() {
    auto tit = tms_.find(table);
    if (tit == tms_.end()) {
      done(Status::error(Err::Internal, "recovered manager vanished"));
      return;
    }
    Tm& tm2 = tit->second;
    tm2.st.commit_seq = std::max(tm2.st.commit_seq, poll->max_seq);
    tm2.row_count = poll->rows;
    for (const auto& r : replicas) {
      if (std::find(poll->reachable.begin(), poll->reachable.end(), r) ==
          poll->reachable.end()) {
        known_dead_.insert(r);
      }
    }
    tm2.st.replicas = poll->reachable;
    std::sort(tm2.st.replicas.begin(), tm2.st.replicas.end());
    if (tm2.st.replicas.empty()) {
      ctx_.log_event(json{{"ev", "table_unavailable"}, {"table", table}});
    }
    refresh_meta(tm2);
    persist(tm2);
    meta_sync(tm2);
    // stragglers: reinstall from an up-to-date copy
    for (const auto& [addr, seq] : poll->seqs) {
      if (seq < tm2.st.commit_seq) {
        Address src;
        for (const auto& [a2, s2] : poll->seqs) {
          if (s2 == tm2.st.commit_seq) {
            src = a2;
            break;
          }
        }
        if (!src.empty()) {
          ctx_.request(src, "TM_COPY_REQ",
                       json{{"table", table}, {"dest", addr}, {"want_seq", tm2.st.commit_seq}},
                       ctx_.cfg().lock_wait_ms, [](Result<json>) {});
        }
      }
    }
    systable::CatalogEntry e;
    e.table = table;
    e.tm = ctx_.self();
    e.tm_meta = tms_.at(table).st.meta;
    st_.update_entry("set", e, [this, table, done](Status st2) {
      ctx_.log_event(json{{"ev", "tm_recovered"}, {"table", table}, {"tm", ctx_.self()}});
      repair_scan();
      done(st2);
    });
  };
  if (replicas.empty()) {
    conclude();
    return;
  }
  for (const auto& r : replicas) {
    ctx_.request(r, "TM_REPL_STATUS", json{{"table", table}},
                 ctx_.cfg().prepare_timeout_ms, [r, poll, conclude](Result<json> res) {
                   if (res.ok()) {
                     poll->reachable.push_back(r);
                     const uint64_t seq = res.value().value("applied_seq", uint64_t(0));
                     poll->seqs[r] = seq;
                     if (seq >= poll->max_seq) {
                       poll->max_seq = seq;
                       poll->rows = res.value().value("row_count", int64_t(0));
                     }
                   }
                   if (--poll->waiting == 0) conclude();
                 });
  }
}

void ManagerHost::handle_recover(const Envelope& env) {
  const std::string table = env.body.at("table").get<std::string>();
  if (tms_.count(table)) {  // already recovered here
    ctx_.reply_to(env, json::object());
    return;
  }
  auto it = tm_meta_store_.find(table);
  json state;
  if (it != tm_meta_store_.end()) {
    state = it->second;
  } else {
    std::ifstream in(ctx_.data_dir() / "tm" / (table + ".json"));
    if (!in) {
      ctx_.reply_err(env, Err::ManagerLost, "no persisted manager state for " + table);
      return;
    }
    state = json::parse(in, nullptr, false);
    if (state.is_discarded()) {
      ctx_.reply_err(env, Err::ManagerLost, "corrupt manager state");
      return;
    }
  }
  auto st = TmState::from_json(state);
  if (!st.ok()) {
    ctx_.reply_err(env, Err::ManagerLost, st.status().message);
    return;
  }
  if (env.body.contains("failed")) {
    known_dead_.insert(env.body.at("failed").get<std::string>());
  }
  auto req = env;
  finish_recover(table, st.take(), [this, req](Status s) {
    if (s.ok()) ctx_.reply_to(req, json::object());
    else ctx_.reply_err(req, s.code, s.message);
  });
}

void ManagerHost::handle_migrate(const Envelope& env) {
  const std::string table = env.body.at("table").get<std::string>();
  auto st = TmState::from_json(env.body.at("state"));
  if (!st.ok()) {
    ctx_.reply_err(env, Err::ProtocolError, "bad tm state");
    return;
  }
  auto req = env;
  finish_recover(table, st.take(), [this, req](Status s) {
    if (s.ok()) ctx_.reply_to(req, json::object());
    else ctx_.reply_err(req, s.code, s.message);
  });
}

void ManagerHost::migrate_all(std::function<void(Status)> done) {
  std::vector<std::string> tables;
  for (const auto& [t, tm] : tms_) tables.push_back(t);
  node::for_each_async(
      tables.size(),
      [this, tables](size_t i, std::function<void(Status)> k) {
        const std::string table = tables[i];
        auto it = tms_.find(table);
        if (it == tms_.end()) {
          k(Status::good());
          return;
        }
        // Highest-scoring other instance (replica holders included); a live
        // data replica as the fallback when no scores are known yet.
        Address target;
        double best = -1;
        for (const auto& [addr, score] : scores_()) {
          if (addr == ctx_.self() || known_dead_.count(addr)) continue;
          if (score > best || (score == best && addr < target)) {
            best = score;
            target = addr;
          }
        }
        if (target.empty()) {
          for (const auto& r : it->second.st.replicas) {
            if (r != ctx_.self() && !known_dead_.count(r)) {
              target = r;
              break;
            }
          }
        }
        if (target.empty()) {
          k(Status::error(Err::LeaveRefused, "no migration target for " + table));
          return;
        }
        json state = it->second.st.to_json();
        ctx_.request(target, "TM_MIGRATE", json{{"table", table}, {"state", state}},
                     2 * ctx_.cfg().lock_wait_ms,
                     [this, table, target, k](Result<json> r) {
                       if (!r.ok()) {
                         k(r.status());
                         return;
                       }
                       tms_.erase(table);
                       ctx_.log_event(json{{"ev", "tm_migrated"},
                                           {"table", table},
                                           {"to", target}});
                       k(Status::good());
                     });
      },
      std::move(done));
}

// -- failure & departure --------------------------------------------------------

void ManagerHost::on_node_failed(const Address& failed) {
  known_dead_.insert(failed);
  std::vector<std::string> tables;
  for (const auto& [t, tm] : tms_) tables.push_back(t);
  for (const auto& table : tables) {
    Tm& tm = tms_.at(table);
    // Locks held by transactions coordinated from the failed instance would
    // otherwise linger forever; their coordinator can no longer release them.
    std::vector<TxnId> purge;
    for (const auto& [txn, mode] : tm.locks.holders()) {
      if (txn.rfind(failed + ":", 0) == 0) purge.push_back(txn);
    }
    for (const auto& txn : purge) {
      ctx_.log_event(json{{"ev", "lock_purge"}, {"table", table}, {"txn", txn}});
      auto grants = tm.locks.release(txn);
      tm.grant_time.erase(txn);
      deliver_grants(tm, grants);
    }
    if (std::find(tm.st.replicas.begin(), tm.st.replicas.end(), failed) !=
        tm.st.replicas.end()) {
      remove_replica_and_repair(table, failed);
    }
    if (std::find(tm.st.meta.begin(), tm.st.meta.end(), failed) != tm.st.meta.end()) {
      auto tit = tms_.find(table);
      if (tit != tms_.end()) {
        refresh_meta(tit->second);
        persist(tit->second);
        meta_sync(tit->second);
      }
    }
  }
}

void ManagerHost::on_node_leaving(const Address& node, std::function<void(Status)> done) {
  std::vector<std::string> tables;
  for (const auto& [t, tm] : tms_) {
    if (std::find(tm.st.replicas.begin(), tm.st.replicas.end(), node) !=
        tm.st.replicas.end()) {
      tables.push_back(t);
    }
  }
  node::for_each_async(
      tables.size(),
      [this, tables, node](size_t i, std::function<void(Status)> k) {
        const std::string table = tables[i];
        start_repair(table, node, [this, table, node, k](Status) {
          auto it = tms_.find(table);
          if (it != tms_.end()) {
            auto& reps = it->second.st.replicas;
            auto pos = std::find(reps.begin(), reps.end(), node);
            if (pos != reps.end()) {
              // Drop the leaver only if somebody else still holds the data.
              if (reps.size() > 1) {
                reps.erase(pos);
                persist(it->second);
                meta_sync(it->second);
              }
            }
          }
          k(Status::good());
        });
      },
      std::move(done));
}

bool ManagerHost::idle() const {
  for (const auto& [t, tm] : tms_) {
    if (!tm.locks.idle() || !tm.prepared.empty() || tm.repairing) return false;
  }
  return true;
}

json ManagerHost::status_json() const {
  json out = json::object();
  for (const auto& [t, tm] : tms_) {
    out[t] = json{{"replicas", tm.st.replicas},
                  {"commit_seq", tm.st.commit_seq},
                  {"target_rf", tm.st.target_rf},
                  {"under_replicated", int(tm.st.replicas.size()) < tm.st.target_rf}};
  }
  return out;
}

const TmState* ManagerHost::state_of(const std::string& table) const {
  auto it = tms_.find(table);
  return it == tms_.end() ? nullptr : &it->second.st;
}

bool ManagerHost::handle(const Envelope& env) {
  const std::string& t = env.msg_type;
  if (t == "TM_LOCK") handle_lock(env);
  else if (t == "TM_RELEASE") handle_release(env);
  else if (t == "TM_UPDATE") handle_update(env);
  else if (t == "TM_DROP" && env.body.value("scope", "table") == "table") handle_drop(env);
  else if (t == "TM_STATUS") handle_status(env);
  else if (t == "TM_RECOVER") handle_recover(env);
  else if (t == "TM_MIGRATE") handle_migrate(env);
  else if (t == "TM_META_SYNC") handle_meta_sync(env);
  else return false;
  return true;
}

}  // namespace h2o::tablemgr
