#include "h2o/exec.hpp"

#include <algorithm>
#include <unordered_map>

namespace h2o::exec {

json QueryPlan::to_json() const {
  json cands = json::array();
  for (const auto& c : candidates) cands.push_back(c.to_json());
  return json{{"executor", executor},
              {"table_sources", table_sources},
              {"lock_set", lock_set},
              {"candidates", cands}};
}

QueryPlan QueryPlan::from_json(const json& j) {
  QueryPlan p;
  p.executor = j.at("executor").get<std::string>();
  for (const auto& [t, a] : j.at("table_sources").items()) {
    p.table_sources[t] = a.get<std::string>();
  }
  p.lock_set = j.at("lock_set").get<std::vector<std::string>>();
  for (const auto& cj : j.at("candidates")) {
    Candidate c;
    c.addr = cj.at("addr").get<std::string>();
    c.locality = cj.at("locality").get<double>();
    c.score = cj.at("score").get<double>();
    c.combined = cj.at("combined").get<double>();
    p.candidates.push_back(std::move(c));
  }
  return p;
}

QueryPlan plan_select(const sql::Select& stmt, const Address& caller,
                      const std::map<std::string, TableInfo>& info,
                      const std::map<Address, double>& scores, double alpha) {
  constexpr int64_t kRowBytes = 64;
  QueryPlan plan;
  for (const auto& [t, ti] : info) plan.lock_set.push_back(t);

  std::set<Address> cands{caller};
  int64_t total_bytes = 0;
  for (const auto& [t, ti] : info) {
    total_bytes += ti.row_count * kRowBytes;
    for (const auto& r : ti.replicas) cands.insert(r);
  }

  for (const auto& c : cands) {
    Candidate cand;
    cand.addr = c;
    if (total_bytes > 0) {
      int64_t local_bytes = 0;
      for (const auto& [t, ti] : info) {
        if (std::find(ti.replicas.begin(), ti.replicas.end(), c) != ti.replicas.end()) {
          local_bytes += ti.row_count * kRowBytes;
        }
      }
      cand.locality = double(local_bytes) / double(total_bytes);
    } else {
      // Empty tables: locality degrades to the fraction of referenced tables
      // with a local replica.
      int with = 0;
      for (const auto& [t, ti] : info) {
        if (std::find(ti.replicas.begin(), ti.replicas.end(), c) != ti.replicas.end()) ++with;
      }
      cand.locality = info.empty() ? 0.0 : double(with) / double(info.size());
    }
    const auto sit = scores.find(c);
    cand.score = sit == scores.end() ? 0.0 : sit->second;
    cand.combined = alpha * cand.locality + (1 - alpha) * cand.score;
    plan.candidates.push_back(std::move(cand));
  }

  // candidates are address-sorted (set order); strict > keeps the smallest
  // address on full ties
  const Candidate* best = nullptr;
  for (const auto& c : plan.candidates) {
    if (!best || c.combined > best->combined ||
        (c.combined == best->combined && c.locality > best->locality)) {
      best = &c;
    }
  }
  plan.executor = best ? best->addr : caller;

  for (const auto& [t, ti] : info) {
    if (std::find(ti.replicas.begin(), ti.replicas.end(), plan.executor) !=
        ti.replicas.end()) {
      plan.table_sources[t] = plan.executor;
    } else {
      plan.table_sources[t] = tablemgr::choose_read_replica(ti.replicas, ti.routed, scores);
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------
// local evaluation

namespace {

std::string value_key(const sql::Value& v) {
  if (std::holds_alternative<int64_t>(v)) {
    return "i:" + std::to_string(std::get<int64_t>(v));
  }
  return "s:" + std::get<std::string>(v);
}

sql::Predicate table_atoms(const sql::Select& stmt, const std::string& table) {
  sql::Predicate p;
  if (!stmt.where) return p;
  for (const auto& a : stmt.where->atoms) {
    if (!a.is_join() && a.lhs.table == table) p.atoms.push_back(a);
  }
  return p;
}

}  // namespace

Result<json> evaluate(const sql::Select& stmt,
                      const std::map<std::string, TableData>& tables) {
  struct Col {
    std::string table;
    std::string name;
  };

  // combined output schema: columns of each FROM table, in FROM order
  std::vector<Col> all_cols;
  std::map<std::string, size_t> table_base;
  for (const auto& t : stmt.tables) {
    auto it = tables.find(t);
    if (it == tables.end()) return Status::error(Err::Internal, "missing table data " + t);
    table_base[t] = all_cols.size();
    for (const auto& c : it->second.schema.columns) all_cols.push_back(Col{t, c.name});
  }

  auto col_index = [&](const sql::ColumnRef& ref) -> int {
    auto bit = table_base.find(ref.table);
    if (bit == table_base.end()) return -1;
    const auto& schema = tables.at(ref.table).schema;
    const int idx = schema.col_index(ref.column);
    return idx < 0 ? -1 : int(bit->second) + idx;
  };

  // projection
  std::vector<size_t> proj;
  std::vector<std::string> labels;
  if (stmt.star) {
    for (size_t i = 0; i < all_cols.size(); ++i) {
      proj.push_back(i);
      labels.push_back(all_cols[i].table + "." + all_cols[i].name);
    }
  } else {
    for (const auto& c : stmt.columns) {
      const int idx = col_index(c);
      if (idx < 0) {
        return Status::error(Err::BindError, "unknown column " + c.table + "." + c.column);
      }
      proj.push_back(size_t(idx));
      labels.push_back(c.table + "." + c.column);
    }
  }

  // per-table filters
  std::map<std::string, std::vector<const storage::Row*>> filtered;
  for (const auto& t : stmt.tables) {
    const auto& td = tables.at(t);
    const sql::Predicate atoms = table_atoms(stmt, t);
    auto& out = filtered[t];
    for (const auto& row : td.rows) {
      if (!atoms.atoms.empty()) {
        auto m = storage::eval_row(td.schema, row, atoms);
        if (!m.ok()) return m.status();
        if (!m.value()) continue;
      }
      out.push_back(&row);
    }
  }

  json rows = json::array();
  auto emit = [&](const std::vector<const sql::Value*>& combined) {
    json vals = json::array();
    for (size_t idx : proj) vals.push_back(storage::value_to_json(*combined[idx]));
    rows.push_back(std::move(vals));
  };

  if (stmt.tables.size() == 1) {
    for (const auto* row : filtered[stmt.tables[0]]) {
      std::vector<const sql::Value*> combined;
      for (const auto& v : row->values) combined.push_back(&v);
      emit(combined);
    }
    return json{{"columns", labels}, {"rows", rows}};
  }

  // hash join on the first equality join atom; remaining join atoms filter
  const std::string& left = stmt.tables[0];
  const std::string& right = stmt.tables[1];
  std::vector<const sql::Atom*> joins;
  for (const auto& a : stmt.where->atoms) {
    if (a.is_join()) joins.push_back(&a);
  }
  auto join_cols = [&](const sql::Atom& a) -> std::pair<int, int> {
    const auto& lref = a.lhs.table == left ? a.lhs : *a.rhs_col;
    const auto& rref = a.lhs.table == left ? *a.rhs_col : a.lhs;
    return {tables.at(left).schema.col_index(lref.column),
            tables.at(right).schema.col_index(rref.column)};
  };
  const auto [lkey, rkey] = join_cols(*joins[0]);
  if (lkey < 0 || rkey < 0) return Status::error(Err::BindError, "bad join column");

  std::unordered_map<std::string, std::vector<const storage::Row*>> by_key;
  for (const auto* row : filtered[right]) {
    by_key[value_key(row->values[size_t(rkey)])].push_back(row);
  }
  for (const auto* lrow : filtered[left]) {
    auto bucket = by_key.find(value_key(lrow->values[size_t(lkey)]));
    if (bucket == by_key.end()) continue;
    for (const auto* rrow : bucket->second) {
      bool keep = true;
      for (size_t j = 1; j < joins.size() && keep; ++j) {
        const auto [lj, rj] = join_cols(*joins[j]);
        if (lj < 0 || rj < 0) return Status::error(Err::BindError, "bad join column");
        keep = lrow->values[size_t(lj)] == rrow->values[size_t(rj)];
      }
      if (!keep) continue;
      std::vector<const sql::Value*> combined;
      for (const auto& v : lrow->values) combined.push_back(&v);
      for (const auto& v : rrow->values) combined.push_back(&v);
      emit(combined);
    }
  }
  return json{{"columns", labels}, {"rows", rows}};
}

// ---------------------------------------------------------------------------
// Engine

Engine::Engine(NodeCtx& ctx, systable::SysTableSvc& st, tablemgr::ManagerHost& mgr,
               tablemgr::ReplicaHost& stores,
               std::function<std::map<Address, double>()> scores)
    : ctx_(ctx), st_(st), mgr_(mgr), stores_(stores), scores_(std::move(scores)) {}

TxnId Engine::next_txn_id() {
  return ctx_.self() + ":" + std::to_string(++txn_counter_);
}

uint64_t Engine::request_timeout() const {
  return ctx_.cfg().lock_wait_ms + 10 * ctx_.cfg().latency_max_ms + 100;
}

bool Engine::handle(const Envelope& env) {
  if (env.msg_type == "SQL_EXEC") {
    handle_sql(env);
    return true;
  }
  if (env.msg_type == "EXEC_SHIP") {
    handle_ship(env);
    return true;
  }
  return false;
}

void Engine::handle_sql(const Envelope& env) {
  std::string text = env.body.at("text").get<std::string>();
  bool explain = false;
  {
    size_t i = 0;
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::string kw = "EXPLAIN";
    if (text.size() - i > kw.size()) {
      std::string head = text.substr(i, kw.size());
      for (auto& c : head) c = char(std::toupper(static_cast<unsigned char>(c)));
      if (head == kw && std::isspace(static_cast<unsigned char>(text[i + kw.size()]))) {
        explain = true;
        text = text.substr(i + kw.size());
      }
    }
  }
  auto reply_err = [this, env](Status st) {
    ctx_.reply_to_as(env, "SQL_RESULT", node::err_body(st.code, st.message));
  };
  if (draining_) {
    reply_err(Status::error(Err::Draining, "instance is leaving"));
    return;
  }
  auto parsed = sql::parse(text);
  if (!parsed.ok()) {
    reply_err(parsed.status());
    return;
  }
  if (explain && !std::holds_alternative<sql::Select>(parsed.value())) {
    reply_err(Status::error(Err::Unsupported, "EXPLAIN applies to SELECT"));
    return;
  }
  auto t = std::make_shared<Txn>();
  t->id = next_txn_id();
  t->stmts = {parsed.take()};
  t->explain = explain;
  t->client = env;
  ++active_;
  run(t);
}

void Engine::submit_local(std::vector<sql::Statement> stmts,
                          std::function<void(Result<json>)> cb) {
  auto t = std::make_shared<Txn>();
  t->id = next_txn_id();
  t->stmts = std::move(stmts);
  t->cb = std::move(cb);
  ++active_;
  run(t);
}

void Engine::run(TxnPtr t) {
  // route on statement shape
  const sql::Statement& first = t->stmts[0];
  if (std::holds_alternative<sql::Select>(first)) {
    run_select(t);
  } else if (std::holds_alternative<sql::CreateTable>(first)) {
    run_create(t);
  } else if (std::holds_alternative<sql::DropTable>(first)) {
    run_drop(t);
  } else {
    run_write(t);
  }
}

void Engine::retry_or_fail(TxnPtr t, Status why) {
  release_locks(t);
  ctx_.log_event(json{{"ev", "txn_end"},
                      {"txn", t->id},
                      {"status", "aborted"},
                      {"reason", why.to_string()}});
  if (err_is_retryable(why.code) && t->attempt < 2) {
    auto fresh = std::make_shared<Txn>();
    fresh->id = next_txn_id();
    fresh->stmts = t->stmts;
    fresh->explain = t->explain;
    fresh->client = t->client;
    fresh->cb = t->cb;
    fresh->attempt = t->attempt + 1;
    const uint64_t backoff = 40 + ctx_.rnd() % 120;
    ctx_.schedule(backoff, [this, fresh]() { run(fresh); });
    return;
  }
  finalize(t, why, json());
}

void Engine::finalize(TxnPtr t, Status outcome, json result) {
  release_locks(t);
  --active_;
  if (t->client) {
    ctx_.reply_to_as(*t->client, "SQL_RESULT",
                     outcome.ok() ? result : node::err_body(outcome.code, outcome.message));
  }
  if (t->cb) {
    if (outcome.ok()) t->cb(result);
    else t->cb(outcome);
  }
}

void Engine::release_locks(TxnPtr t) {
  for (const auto& [table, tm] : t->locked) {
    json body{{"table", table}, {"txn", t->id}};
    auto rit = t->routed.find(table);
    if (rit != t->routed.end()) body["routed"] = rit->second;
    ctx_.send(tm, "TM_RELEASE", body);
  }
  t->locked.clear();
}

void Engine::resolve_tables(TxnPtr t, std::function<void(Status)> done) {
  node::for_each_async(
      t->tables.size(),
      [this, t](size_t i, std::function<void(Status)> k) {
        const std::string table = t->tables[i];
        auto cit = cache_.find(table);
        if (cit != cache_.end()) {
          t->cat[table] = cit->second;
          k(Status::good());
          return;
        }
        st_.lookup(table, [this, t, table, k](Result<systable::CatalogEntry> r) {
          if (!r.ok()) {
            k(r.status());
            return;
          }
          cache_[table] = r.value();
          t->cat[table] = r.value();
          k(Status::good());
        });
      },
      std::move(done));
}

void Engine::lock_tables(TxnPtr t, std::function<void(Status)> done) {
  node::for_each_async(
      t->tables.size(),
      [this, t](size_t i, std::function<void(Status)> k) {
        const std::string table = t->tables[i];
        const Address tm = t->cat.at(table).tm;
        const char* mode =
            t->mode == tablemgr::LockMode::Write ? "WRITE" : "READ";
        ctx_.request(
            tm, "TM_LOCK", json{{"table", table}, {"txn", t->id}, {"mode", mode}},
            request_timeout(), [this, t, table, tm, k](Result<json> r) {
              if (!r.ok()) {
                if (r.code() == Err::WrongManager || r.code() == Err::Timeout) {
                  cache_.erase(table);
                }
                k(r.status());
                return;
              }
              t->locked.emplace_back(table, tm);
              TableInfo info;
              info.replicas = r.value().at("replicas").get<std::vector<Address>>();
              info.row_count = r.value().value("row_count", int64_t(0));
              if (r.value().contains("routed")) {
                for (const auto& [a, c] : r.value().at("routed").items()) {
                  info.routed[a] = c.get<uint64_t>();
                }
              }
              t->info[table] = std::move(info);
              k(Status::good());
            });
      },
      std::move(done));
}

// -- reads --------------------------------------------------------------------

void Engine::run_select(TxnPtr t) {
  const auto& sel = std::get<sql::Select>(t->stmts[0]);
  t->tables = sel.tables;
  std::sort(t->tables.begin(), t->tables.end());
  t->mode = tablemgr::LockMode::Read;
  resolve_tables(t, [this, t](Status st) {
    if (!st.ok()) {
      retry_or_fail(t, st);
      return;
    }
    lock_tables(t, [this, t](Status st2) {
      if (!st2.ok()) {
        retry_or_fail(t, st2);
        return;
      }
      const auto& sel2 = std::get<sql::Select>(t->stmts[0]);
      QueryPlan plan = plan_select(sel2, ctx_.self(), t->info, scores_(), ctx_.cfg().alpha);
      for (const auto& [table, src] : plan.table_sources) t->routed[table] = src;
      if (t->explain) {
        ctx_.log_event(json{{"ev", "plan"}, {"txn", t->id}, {"executor", plan.executor}});
        finalize(t, Status::good(), json{{"explain", plan.to_json()}});
        return;
      }
      execute_plan(t, plan, [this, t](Result<json> rows) {
        if (!rows.ok()) {
          retry_or_fail(t, rows.status().code == Err::Timeout
                               ? Status::error(Err::Retryable, "executor unreachable")
                               : rows.status());
          return;
        }
        json reads = json::array();
        for (const auto& tb : t->tables) reads.push_back(tb);
        ctx_.log_event(json{{"ev", "txn_end"},
                            {"txn", t->id},
                            {"status", "committed"},
                            {"kind", "select"},
                            {"reads", reads}});
        finalize(t, Status::good(), rows.take());
      });
    });
  });
}

void Engine::execute_plan(TxnPtr t, const QueryPlan& plan,
                          std::function<void(Result<json>)> done) {
  const auto& sel = std::get<sql::Select>(t->stmts[0]);
  if (plan.executor == ctx_.self()) {
    execute_local(sel, plan, std::move(done));
    return;
  }
  ctx_.request(plan.executor, "EXEC_SHIP",
               json{{"text", sql::print(t->stmts[0])}, {"plan", plan.to_json()},
                    {"txn", t->id}},
               request_timeout(),
               [done](Result<json> r) { done(std::move(r)); });
}

void Engine::handle_ship(const Envelope& env) {
  auto parsed = sql::parse(env.body.at("text").get<std::string>());
  if (!parsed.ok()) {
    ctx_.reply_err(env, parsed.code(), "unparseable shipped query");
    return;
  }
  const QueryPlan plan = QueryPlan::from_json(env.body.at("plan"));
  const auto* sel = std::get_if<sql::Select>(&parsed.value());
  if (!sel) {
    ctx_.reply_err(env, Err::Unsupported, "only SELECT ships");
    return;
  }
  auto req = env;
  execute_local(*sel, plan, [this, req](Result<json> r) {
    if (r.ok()) ctx_.reply_to(req, r.take());
    else ctx_.reply_err(req, r.code(), r.status().message);
  });
}

void Engine::execute_local(const sql::Select& stmt, const QueryPlan& plan,
                           std::function<void(Result<json>)> done) {
  auto tables = std::make_shared<std::map<std::string, TableData>>();
  auto names = std::make_shared<std::vector<std::string>>(stmt.tables);
  auto stmt_copy = std::make_shared<sql::Select>(stmt);
  node::for_each_async(
      names->size(),
      [this, tables, names, plan](size_t i, std::function<void(Status)> k) {
        const std::string table = (*names)[i];
        auto sit = plan.table_sources.find(table);
        const Address src = sit == plan.table_sources.end() ? ctx_.self() : sit->second;
        if (src == ctx_.self()) {
          auto* store = stores_.get(table);
          if (!store) {
            k(Status::error(Err::ReplicaUnavailable, "no local replica of " + table));
            return;
          }
          TableData td;
          td.schema = store->schema();
          auto rows = store->scan(std::nullopt);
          if (!rows.ok()) {
            k(rows.status());
            return;
          }
          td.rows = rows.take();
          (*tables)[table] = std::move(td);
          k(Status::good());
          return;
        }
        ctx_.request(src, "EXEC_FETCH", json{{"table", table}}, request_timeout(),
                     [tables, table, k](Result<json> r) {
                       if (!r.ok()) {
                         k(r.status());
                         return;
                       }
                       auto schema = storage::TableSchema::from_json(r.value().at("schema"));
                       if (!schema.ok()) {
                         k(schema.status());
                         return;
                       }
                       TableData td;
                       td.schema = schema.take();
                       for (const auto& rj : r.value().at("rows")) {
                         storage::Row row;
                         row.id = rj.at("id").get<int64_t>();
                         for (const auto& vj : rj.at("values")) {
                           auto v = storage::value_from_json(vj);
                           if (!v.ok()) {
                             k(v.status());
                             return;
                           }
                           row.values.push_back(v.take());
                         }
                         td.rows.push_back(std::move(row));
                       }
                       (*tables)[table] = std::move(td);
                       k(Status::good());
                     });
      },
      [tables, stmt_copy, done](Status st) {
        if (!st.ok()) {
          done(st);
          return;
        }
        done(evaluate(*stmt_copy, *tables));
      });
}

// -- writes ---------------------------------------------------------------------

void Engine::run_write(TxnPtr t) {
  const std::string table = sql::target_table(t->stmts[0]);
  for (const auto& s : t->stmts) {
    if (sql::target_table(s) != table || !sql::is_write(s)) {
      finalize(t, Status::error(Err::Unsupported, "multi-statement txns span one table"),
               json());
      return;
    }
  }
  t->tables = {table};
  t->mode = tablemgr::LockMode::Write;
  resolve_tables(t, [this, t, table](Status st) {
    if (!st.ok()) {
      retry_or_fail(t, st);
      return;
    }
    lock_tables(t, [this, t, table](Status st2) {
      if (!st2.ok()) {
        retry_or_fail(t, st2);
        return;
      }
      json stmts = json::array();
      for (const auto& s : t->stmts) stmts.push_back(sql::print(s));
      const Address tm = t->cat.at(table).tm;
      ctx_.request(
          tm, "TM_UPDATE", json{{"table", table}, {"txn", t->id}, {"stmts", stmts}},
          2 * ctx_.cfg().prepare_timeout_ms + request_timeout(),
          [this, t, table, stmts](Result<json> r) {
            if (!r.ok()) {
              if (r.code() == Err::WrongManager || r.code() == Err::Timeout) {
                cache_.erase(table);
              }
              if (r.code() == Err::Timeout) {
                // The manager vanished mid-commit: the outcome is unknown, so
                // a blind retry could apply the write twice. Surface it.
                ctx_.log_event(json{{"ev", "txn_end"}, {"txn", t->id},
                                    {"status", "aborted"}, {"reason", "outcome unknown"}});
                finalize(t, Status::error(Err::Timeout, "transaction outcome unknown"),
                         json());
                return;
              }
              retry_or_fail(t, r.status());
              return;
            }
            const uint64_t first = r.value().at("first_seq").get<uint64_t>();
            const uint64_t count = r.value().at("count").get<uint64_t>();
            json seqs = json::array();
            for (uint64_t s = first; s < first + count; ++s) seqs.push_back(s);
            ctx_.log_event(json{{"ev", "txn_end"},
                                {"txn", t->id},
                                {"status", "committed"},
                                {"kind", "write"},
                                {"writes", json::array({table})},
                                {"stmts", stmts},
                                {"commit_seqs", json{{table, seqs}}}});
            finalize(t, Status::good(),
                     json{{"affected", r.value().value("affected", 0)},
                          {"first_seq", first}});
          });
    });
  });
}

// -- DDL --------------------------------------------------------------------------

void Engine::run_create(TxnPtr t) {
  const auto& ct = std::get<sql::CreateTable>(t->stmts[0]);
  storage::TableSchema schema;
  schema.name = ct.name;
  schema.columns = ct.columns;
  const int rf = ct.replication.value_or(ctx_.cfg().default_rf);
  if (rf < 1) {
    finalize(t, Status::error(Err::ValidationError, "replication must be positive"), json());
    return;
  }
  mgr_.create_table(schema, rf, [this, t](Result<uint64_t> r) {
    if (!r.ok()) {
      if (err_is_retryable(r.code()) && r.code() != Err::Timeout) {
        retry_or_fail(t, r.status());
      } else {
        finalize(t, r.status(), json());
      }
      return;
    }
    ctx_.log_event(json{{"ev", "txn_end"},
                        {"txn", t->id},
                        {"status", "committed"},
                        {"kind", "ddl"}});
    finalize(t, Status::good(), json{{"created", true}, {"version", r.value()}});
  });
}

void Engine::run_drop(TxnPtr t) {
  const std::string table = std::get<sql::DropTable>(t->stmts[0]).name;
  t->tables = {table};
  t->mode = tablemgr::LockMode::Write;
  resolve_tables(t, [this, t, table](Status st) {
    if (!st.ok()) {
      retry_or_fail(t, st);
      return;
    }
    lock_tables(t, [this, t, table](Status st2) {
      if (!st2.ok()) {
        retry_or_fail(t, st2);
        return;
      }
      const Address tm = t->cat.at(table).tm;
      ctx_.request(tm, "TM_DROP",
                   json{{"table", table}, {"txn", t->id}, {"scope", "table"}},
                   2 * request_timeout(), [this, t, table](Result<json> r) {
                     cache_.erase(table);
                     t->locked.clear();  // the manager is gone with its locks
                     if (!r.ok()) {
                       retry_or_fail(t, r.status());
                       return;
                     }
                     ctx_.log_event(json{{"ev", "txn_end"},
                                         {"txn", t->id},
                                         {"status", "committed"},
                                         {"kind", "ddl"}});
                     finalize(t, Status::good(), json{{"dropped", true}});
                   });
    });
  });
}

}  // namespace h2o::exec
