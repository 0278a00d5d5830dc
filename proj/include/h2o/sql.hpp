#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "h2o/common.hpp"

namespace h2o::sql {

enum class ColType { Int, Text };

const char* col_type_name(ColType t);

// Literal value: INT (64-bit) or TEXT.
using Value = std::variant<int64_t, std::string>;

std::string value_to_sql(const Value& v);  // TEXT single-quoted, '' escaping

struct ColumnDef {
  std::string name;
  ColType type;
  bool operator==(const ColumnDef&) const = default;
};

struct ColumnRef {
  std::string table;  // always qualified after parsing
  std::string column;
  bool operator==(const ColumnRef&) const = default;
};

enum class CmpOp { Eq, Lt, Gt, Le, Ge, Ne };

const char* cmp_op_text(CmpOp op);

// One conjunct: either `col op literal` or `col = col` (equality join over
// two distinct tables).
struct Atom {
  ColumnRef lhs;
  CmpOp op = CmpOp::Eq;
  std::optional<Value> rhs_value;
  std::optional<ColumnRef> rhs_col;
  bool is_join() const { return rhs_col.has_value(); }
  bool operator==(const Atom&) const = default;
};

// Conjunction (AND) of atoms.
struct Predicate {
  std::vector<Atom> atoms;
  bool operator==(const Predicate&) const = default;
};

struct CreateTable {
  std::string name;
  std::vector<ColumnDef> columns;
  std::optional<int> replication;  // absent: cluster default
  bool operator==(const CreateTable&) const = default;
};

struct DropTable {
  std::string name;
  bool operator==(const DropTable&) const = default;
};

struct Insert {
  std::string table;
  std::vector<Value> values;
  bool operator==(const Insert&) const = default;
};

struct Select {
  bool star = true;
  std::vector<ColumnRef> columns;  // when !star
  std::vector<std::string> tables; // 1 or 2
  std::optional<Predicate> where;
  bool operator==(const Select&) const = default;
};

struct Update {
  std::string table;
  std::vector<std::pair<std::string, Value>> assignments;
  std::optional<Predicate> where;
  bool operator==(const Update&) const = default;
};

struct Delete {
  std::string table;
  std::optional<Predicate> where;
  bool operator==(const Delete&) const = default;
};

using Statement = std::variant<CreateTable, DropTable, Insert, Select, Update, Delete>;

// The table a write statement targets; Select handled separately.
std::string target_table(const Statement& s);
bool is_write(const Statement& s);

struct ParseError {
  size_t offset = 1;  // 1-based byte offset
  std::vector<std::string> expected;
  std::string got;
  std::string to_message() const;
};

// Grammar is LL(1); keywords case-insensitive, identifiers case-preserving.
// Returns the unique AST for grammatical input. Never throws on arbitrary
// bytes; failures come back as SyntaxError/Unsupported with offset details.
Result<Statement> parse(const std::string& text, ParseError* err = nullptr);

// Canonical text: parse(print(s)) == s for every valid statement.
std::string print(const Statement& s);

}  // namespace h2o::sql
