#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "h2o/common.hpp"
#include "h2o/sql.hpp"

namespace h2o::storage {

using json = nlohmann::json;

json value_to_json(const sql::Value& v);
Result<sql::Value> value_from_json(const json& j);

struct TableSchema {
  std::string name;
  std::vector<sql::ColumnDef> columns;

  int col_index(const std::string& col) const;
  json to_json() const;
  static Result<TableSchema> from_json(const json& j);
  bool operator==(const TableSchema&) const = default;
};

// One committed statement; commit_seq values in a log are gapless and
// strictly increasing from 1.
struct LogEntry {
  uint64_t seq = 0;
  TxnId txn;
  std::string stmt;  // canonical statement text

  json to_json() const { return json{{"seq", seq}, {"txn", txn}, {"stmt", stmt}}; }
  static Result<LogEntry> from_json(const json& j);
  bool operator==(const LogEntry&) const = default;
};

struct Row {
  int64_t id = 0;
  std::vector<sql::Value> values;
  bool operator==(const Row&) const = default;
};

// Evaluates the non-join atoms of `pred` against one row. Join atoms are the
// executor's concern and must not reach this function.
Result<bool> eval_row(const TableSchema& schema, const Row& row, const sql::Predicate& pred);

// A local copy of one table's rows plus its append-only committed-statement
// log. Layout: <dir>/schema.json, <dir>/log.jsonl (one object per line).
class ReplicaStore {
 public:
  ReplicaStore() = default;

  // Fresh replica: writes schema.json and an empty log.
  static Result<ReplicaStore> create(const std::filesystem::path& dir, TableSchema schema);

  // Replays the persisted log; a torn final line is truncated and ignored.
  static Result<ReplicaStore> recover(const std::filesystem::path& dir);

  // Fresh replica installed from a full log copy (replica repair).
  static Result<ReplicaStore> install(const std::filesystem::path& dir, TableSchema schema,
                                      const std::vector<LogEntry>& log);

  // entry.seq == applied_seq+1: apply + append durably. entry.seq <= applied:
  // idempotent no-op. Otherwise SequenceGap (caller catches up from a peer).
  // Returns rows affected (0 for the no-op replay case).
  Result<int> apply_committed(const LogEntry& entry);

  // Checks that a statement binds against the schema without applying it.
  Status bind_check(const sql::Statement& stmt) const;

  // Rows satisfying pred (all rows when absent), ordered by row id.
  Result<std::vector<Row>> scan(const std::optional<sql::Predicate>& pred) const;

  const TableSchema& schema() const { return schema_; }
  uint64_t applied_seq() const { return applied_seq_; }
  int64_t row_count() const { return int64_t(rows_.size()); }
  const std::map<int64_t, Row>& rows() const { return rows_; }
  const std::vector<LogEntry>& log() const { return log_; }
  const std::filesystem::path& dir() const { return dir_; }

  // Full state, serialized deterministically; equal replicas compare equal
  // byte-for-byte.
  std::string fingerprint() const;

  // Removes the on-disk directory (DROP TABLE / discarded stale replica).
  static void destroy(const std::filesystem::path& dir);

 private:
  Result<int> apply_stmt(const sql::Statement& stmt);

  std::filesystem::path dir_;
  TableSchema schema_;
  std::map<int64_t, Row> rows_;
  uint64_t applied_seq_ = 0;
  int64_t next_row_id_ = 1;
  std::vector<LogEntry> log_;
};

}  // namespace h2o::storage
