#include "h2o/storage.hpp"

#include <algorithm>

namespace h2o::storage {

namespace fs = std::filesystem;

json value_to_json(const sql::Value& v) {
  if (std::holds_alternative<int64_t>(v)) return std::get<int64_t>(v);
  return std::get<std::string>(v);
}

Result<sql::Value> value_from_json(const json& j) {
  if (j.is_number_integer()) return sql::Value{j.get<int64_t>()};
  if (j.is_string()) return sql::Value{j.get<std::string>()};
  return Status::error(Err::ProtocolError, "value must be integer or string");
}

int TableSchema::col_index(const std::string& col) const {
  for (size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].name == col) return int(i);
  }
  return -1;
}

json TableSchema::to_json() const {
  json cols = json::array();
  for (const auto& c : columns) {
    cols.push_back({{"name", c.name}, {"type", sql::col_type_name(c.type)}});
  }
  return json{{"name", name}, {"columns", cols}};
}

Result<TableSchema> TableSchema::from_json(const json& j) {
  if (!j.is_object() || !j.contains("name") || !j.contains("columns")) {
    return Status::error(Err::RecoveryError, "malformed schema");
  }
  TableSchema s;
  s.name = j.at("name").get<std::string>();
  for (const auto& c : j.at("columns")) {
    const std::string ty = c.at("type").get<std::string>();
    if (ty != "INT" && ty != "TEXT") {
      return Status::error(Err::RecoveryError, "unknown column type " + ty);
    }
    s.columns.push_back(sql::ColumnDef{
        c.at("name").get<std::string>(),
        ty == "INT" ? sql::ColType::Int : sql::ColType::Text});
  }
  return s;
}

Result<LogEntry> LogEntry::from_json(const json& j) {
  if (!j.is_object() || !j.contains("seq") || !j.contains("txn") || !j.contains("stmt")) {
    return Status::error(Err::RecoveryError, "malformed log entry");
  }
  LogEntry e;
  e.seq = j.at("seq").get<uint64_t>();
  e.txn = j.at("txn").get<std::string>();
  e.stmt = j.at("stmt").get<std::string>();
  return e;
}

namespace {

bool value_matches_type(const sql::Value& v, sql::ColType t) {
  return (t == sql::ColType::Int) == std::holds_alternative<int64_t>(v);
}

Result<bool> eval_atom(const TableSchema& schema, const Row& row, const sql::Atom& a) {
  if (a.is_join()) {
    return Status::error(Err::BindError, "join atom in single-table scan");
  }
  const int idx = schema.col_index(a.lhs.column);
  if (idx < 0 || a.lhs.table != schema.name) {
    return Status::error(Err::BindError,
                         "unknown column " + a.lhs.table + "." + a.lhs.column);
  }
  const sql::Value& lhs = row.values[size_t(idx)];
  const sql::Value& rhs = *a.rhs_value;
  if (!value_matches_type(rhs, schema.columns[size_t(idx)].type)) {
    return Status::error(Err::BindError, "type mismatch on column " + a.lhs.column);
  }
  int cmp;
  if (std::holds_alternative<int64_t>(lhs)) {
    const int64_t l = std::get<int64_t>(lhs), r = std::get<int64_t>(rhs);
    cmp = l < r ? -1 : (l > r ? 1 : 0);
  } else {
    cmp = std::get<std::string>(lhs).compare(std::get<std::string>(rhs));
    cmp = cmp < 0 ? -1 : (cmp > 0 ? 1 : 0);
  }
  switch (a.op) {
    case sql::CmpOp::Eq: return cmp == 0;
    case sql::CmpOp::Lt: return cmp < 0;
    case sql::CmpOp::Gt: return cmp > 0;
    case sql::CmpOp::Le: return cmp <= 0;
    case sql::CmpOp::Ge: return cmp >= 0;
    case sql::CmpOp::Ne: return cmp != 0;
  }
  return Status::error(Err::Internal, "bad op");
}

}  // namespace

Result<bool> eval_row(const TableSchema& schema, const Row& row, const sql::Predicate& pred) {
  for (const auto& a : pred.atoms) {
    auto r = eval_atom(schema, row, a);
    if (!r.ok()) return r.status();
    if (!r.value()) return false;
  }
  return true;
}

Result<ReplicaStore> ReplicaStore::create(const fs::path& dir, TableSchema schema) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) return Status::error(Err::RecoveryError, "cannot create " + dir.string());
  {
    std::ofstream out(dir / "schema.json", std::ios::trunc);
    if (!out) return Status::error(Err::RecoveryError, "cannot write schema");
    out << schema.to_json().dump() << "\n";
  }
  std::ofstream(dir / "log.jsonl", std::ios::trunc);
  ReplicaStore s;
  s.dir_ = dir;
  s.schema_ = std::move(schema);
  return s;
}

Result<ReplicaStore> ReplicaStore::recover(const fs::path& dir) {
  std::ifstream sin(dir / "schema.json");
  if (!sin) return Status::error(Err::RecoveryError, "missing schema.json in " + dir.string());
  json sj = json::parse(sin, nullptr, false);
  if (sj.is_discarded()) return Status::error(Err::RecoveryError, "corrupt schema.json");
  auto schema = TableSchema::from_json(sj);
  if (!schema.ok()) return schema.status();

  ReplicaStore s;
  s.dir_ = dir;
  s.schema_ = schema.take();

  std::ifstream lin(dir / "log.jsonl", std::ios::binary);
  std::string line;
  size_t valid_bytes = 0;
  bool torn = false;
  while (std::getline(lin, line)) {
    const bool has_newline = !lin.eof();
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !has_newline) {
      // Torn tail: ignore. Anything after it would be unreachable, so stop.
      torn = true;
      break;
    }
    auto entry = LogEntry::from_json(j);
    if (!entry.ok()) {
      torn = true;
      break;
    }
    if (entry.value().seq != s.applied_seq_ + 1) {
      return Status::error(Err::RecoveryError,
                           "log gap at seq " + std::to_string(entry.value().seq));
    }
    auto stmt = sql::parse(entry.value().stmt);
    if (!stmt.ok()) {
      return Status::error(Err::RecoveryError, "unparseable log stmt: " + entry.value().stmt);
    }
    auto applied = s.apply_stmt(stmt.value());
    if (!applied.ok()) return applied.status();
    s.applied_seq_ = entry.value().seq;
    s.log_.push_back(entry.take());
    valid_bytes += line.size() + 1;
  }
  lin.close();
  if (torn) {
    fs::resize_file(dir / "log.jsonl", valid_bytes);
  }
  return s;
}

Result<ReplicaStore> ReplicaStore::install(const fs::path& dir, TableSchema schema,
                                           const std::vector<LogEntry>& log) {
  destroy(dir);
  auto made = create(dir, std::move(schema));
  if (!made.ok()) return made.status();
  ReplicaStore s = made.take();
  for (const auto& e : log) {
    auto applied = s.apply_committed(e);
    if (!applied.ok()) return applied.status();
  }
  return s;
}

Status ReplicaStore::bind_check(const sql::Statement& stmt) const {
  if (sql::target_table(stmt) != schema_.name) {
    return Status::error(Err::BindError, "statement targets another table");
  }
  auto check_pred = [&](const std::optional<sql::Predicate>& pred) -> Status {
    if (!pred) return Status::good();
    for (const auto& a : pred->atoms) {
      if (a.is_join()) return Status::error(Err::BindError, "join atom in write");
      const int idx = schema_.col_index(a.lhs.column);
      if (idx < 0) return Status::error(Err::BindError, "unknown column " + a.lhs.column);
      if (!value_matches_type(*a.rhs_value, schema_.columns[size_t(idx)].type)) {
        return Status::error(Err::BindError, "type mismatch on " + a.lhs.column);
      }
    }
    return Status::good();
  };
  if (const auto* ins = std::get_if<sql::Insert>(&stmt)) {
    if (ins->values.size() != schema_.columns.size()) {
      return Status::error(Err::BindError, "value count does not match column count");
    }
    for (size_t i = 0; i < ins->values.size(); ++i) {
      if (!value_matches_type(ins->values[i], schema_.columns[i].type)) {
        return Status::error(Err::BindError,
                             "type mismatch on column " + schema_.columns[i].name);
      }
    }
    return Status::good();
  }
  if (const auto* up = std::get_if<sql::Update>(&stmt)) {
    for (const auto& [col, v] : up->assignments) {
      const int idx = schema_.col_index(col);
      if (idx < 0) return Status::error(Err::BindError, "unknown column " + col);
      if (!value_matches_type(v, schema_.columns[size_t(idx)].type)) {
        return Status::error(Err::BindError, "type mismatch on " + col);
      }
    }
    return check_pred(up->where);
  }
  if (const auto* del = std::get_if<sql::Delete>(&stmt)) {
    return check_pred(del->where);
  }
  return Status::error(Err::BindError, "not a row statement");
}

Result<int> ReplicaStore::apply_stmt(const sql::Statement& stmt) {
  Status bound = bind_check(stmt);
  if (!bound.ok()) return bound;

  if (const auto* ins = std::get_if<sql::Insert>(&stmt)) {
    Row r;
    r.id = next_row_id_++;
    r.values = ins->values;
    rows_.emplace(r.id, std::move(r));
    return 1;
  }
  if (const auto* up = std::get_if<sql::Update>(&stmt)) {
    int affected = 0;
    for (auto& [id, row] : rows_) {
      bool hit = true;
      if (up->where) {
        auto m = eval_row(schema_, row, *up->where);
        if (!m.ok()) return m.status();
        hit = m.value();
      }
      if (!hit) continue;
      for (const auto& [col, v] : up->assignments) {
        row.values[size_t(schema_.col_index(col))] = v;
      }
      ++affected;
    }
    return affected;
  }
  if (const auto* del = std::get_if<sql::Delete>(&stmt)) {
    std::vector<int64_t> hits;
    for (const auto& [id, row] : rows_) {
      bool hit = true;
      if (del->where) {
        auto m = eval_row(schema_, row, *del->where);
        if (!m.ok()) return m.status();
        hit = m.value();
      }
      if (hit) hits.push_back(id);
    }
    for (int64_t id : hits) rows_.erase(id);
    return int(hits.size());
  }
  return Status::error(Err::BindError, "not a row statement");
}

Result<int> ReplicaStore::apply_committed(const LogEntry& entry) {
  if (entry.seq <= applied_seq_) return 0;  // idempotent replay
  if (entry.seq != applied_seq_ + 1) {
    return Status::error(Err::SequenceGap,
                         "have " + std::to_string(applied_seq_) + ", got " +
                             std::to_string(entry.seq));
  }
  auto stmt = sql::parse(entry.stmt);
  if (!stmt.ok()) return Status::error(Err::BindError, "unparseable stmt");
  auto affected = apply_stmt(stmt.value());
  if (!affected.ok()) return affected.status();

  std::ofstream out(dir_ / "log.jsonl", std::ios::app | std::ios::binary);
  if (!out) return Status::error(Err::RecoveryError, "cannot append log");
  out << entry.to_json().dump() << "\n";
  out.flush();

  applied_seq_ = entry.seq;
  log_.push_back(entry);
  return affected;
}

Result<std::vector<Row>> ReplicaStore::scan(const std::optional<sql::Predicate>& pred) const {
  std::vector<Row> out;
  for (const auto& [id, row] : rows_) {
    if (pred) {
      auto m = eval_row(schema_, row, *pred);
      if (!m.ok()) return m.status();
      if (!m.value()) continue;
    }
    out.push_back(row);
  }
  return out;
}

std::string ReplicaStore::fingerprint() const {
  json rows = json::array();
  for (const auto& [id, row] : rows_) {
    json vals = json::array();
    for (const auto& v : row.values) vals.push_back(value_to_json(v));
    rows.push_back({{"id", id}, {"values", vals}});
  }
  json log = json::array();
  for (const auto& e : log_) log.push_back(e.to_json());
  return json{{"schema", schema_.to_json()},
              {"applied_seq", applied_seq_},
              {"rows", rows},
              {"log", log}}
      .dump();
}

void ReplicaStore::destroy(const fs::path& dir) {
  std::error_code ec;
  fs::remove_all(dir, ec);
}

}  // namespace h2o::storage
