#include "h2o/sql.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace h2o::sql {

const char* col_type_name(ColType t) { return t == ColType::Int ? "INT" : "TEXT"; }

const char* cmp_op_text(CmpOp op) {
  switch (op) {
    case CmpOp::Eq: return "=";
    case CmpOp::Lt: return "<";
    case CmpOp::Gt: return ">";
    case CmpOp::Le: return "<=";
    case CmpOp::Ge: return ">=";
    case CmpOp::Ne: return "<>";
  }
  return "?";
}

std::string value_to_sql(const Value& v) {
  if (std::holds_alternative<int64_t>(v)) {
    return std::to_string(std::get<int64_t>(v));
  }
  std::string out = "'";
  for (char c : std::get<std::string>(v)) {
    if (c == '\'') out += "''";
    else out.push_back(c);
  }
  out += "'";
  return out;
}

std::string target_table(const Statement& s) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, CreateTable>) return v.name;
        else if constexpr (std::is_same_v<T, DropTable>) return v.name;
        else if constexpr (std::is_same_v<T, Insert>) return v.table;
        else if constexpr (std::is_same_v<T, Update>) return v.table;
        else if constexpr (std::is_same_v<T, Delete>) return v.table;
        else return std::string();
      },
      s);
}

bool is_write(const Statement& s) {
  return std::holds_alternative<Insert>(s) || std::holds_alternative<Update>(s) ||
         std::holds_alternative<Delete>(s);
}

std::string ParseError::to_message() const {
  std::string m = "syntax error at offset " + std::to_string(offset);
  if (!expected.empty()) {
    m += ": expected ";
    for (size_t i = 0; i < expected.size(); ++i) {
      if (i) m += " | ";
      m += expected[i];
    }
  }
  if (!got.empty()) m += ", got " + got;
  return m;
}

namespace {

enum class Tok {
  Ident, Keyword, Int, String, Star, Comma, LParen, RParen, Dot,
  Eq, Lt, Gt, Le, Ge, Ne, End, Bad,
};

struct Token {
  Tok kind = Tok::End;
  std::string text;    // raw identifier / keyword upper / literal body
  int64_t num = 0;
  size_t offset = 1;   // 1-based
};

const std::set<std::string>& keywords() {
  static const std::set<std::string> kw = {
      "SELECT", "FROM", "WHERE", "CREATE", "TABLE", "DROP", "INSERT", "INTO",
      "VALUES", "UPDATE", "SET", "DELETE", "AND", "REPLICATION", "INT", "TEXT",
  };
  return kw;
}

std::string upper(std::string s) {
  for (char& c : s) c = char(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

struct Lexer {
  const std::string& src;
  size_t pos = 0;
  std::optional<Token> error_tok;

  explicit Lexer(const std::string& s) : src(s) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (true) {
      Token t = next();
      out.push_back(t);
      if (t.kind == Tok::End || t.kind == Tok::Bad) break;
    }
    return out;
  }

  Token next() {
    while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
    Token t;
    t.offset = pos + 1;
    if (pos >= src.size()) {
      t.kind = Tok::End;
      return t;
    }
    const char c = src[pos];
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t s = pos;
      while (pos < src.size() &&
             (std::isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_')) {
        ++pos;
      }
      t.text = src.substr(s, pos - s);
      const std::string up = upper(t.text);
      if (keywords().count(up)) {
        t.kind = Tok::Keyword;
        t.text = up;
      } else {
        t.kind = Tok::Ident;
      }
      return t;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '-' && pos + 1 < src.size() &&
         std::isdigit(static_cast<unsigned char>(src[pos + 1])))) {
      size_t s = pos;
      if (c == '-') ++pos;
      while (pos < src.size() && std::isdigit(static_cast<unsigned char>(src[pos]))) ++pos;
      t.kind = Tok::Int;
      t.text = src.substr(s, pos - s);
      errno = 0;
      t.num = std::strtoll(t.text.c_str(), nullptr, 10);
      return t;
    }
    if (c == '\'') {
      ++pos;
      std::string body;
      while (true) {
        if (pos >= src.size()) {
          t.kind = Tok::Bad;
          t.text = "unterminated string";
          return t;
        }
        if (src[pos] == '\'') {
          if (pos + 1 < src.size() && src[pos + 1] == '\'') {
            body.push_back('\'');
            pos += 2;
            continue;
          }
          ++pos;
          break;
        }
        body.push_back(src[pos++]);
      }
      t.kind = Tok::String;
      t.text = body;
      return t;
    }
    switch (c) {
      case '*': t.kind = Tok::Star; ++pos; return t;
      case ',': t.kind = Tok::Comma; ++pos; return t;
      case '(': t.kind = Tok::LParen; ++pos; return t;
      case ')': t.kind = Tok::RParen; ++pos; return t;
      case '.': t.kind = Tok::Dot; ++pos; return t;
      case '=': t.kind = Tok::Eq; ++pos; return t;
      case '<':
        ++pos;
        if (pos < src.size() && src[pos] == '=') { ++pos; t.kind = Tok::Le; }
        else if (pos < src.size() && src[pos] == '>') { ++pos; t.kind = Tok::Ne; }
        else t.kind = Tok::Lt;
        return t;
      case '>':
        ++pos;
        if (pos < src.size() && src[pos] == '=') { ++pos; t.kind = Tok::Ge; }
        else t.kind = Tok::Gt;
        return t;
      case ';': {
        // Optional trailing semicolon; anything after it is an error.
        size_t save = pos++;
        while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
        if (pos >= src.size()) {
          t.kind = Tok::End;
          return t;
        }
        pos = save;
        t.kind = Tok::Bad;
        t.text = "';'";
        return t;
      }
      default:
        t.kind = Tok::Bad;
        t.text = std::string("'") + c + "'";
        return t;
    }
  }
};

std::string tok_desc(const Token& t) {
  switch (t.kind) {
    case Tok::Ident: return "identifier '" + t.text + "'";
    case Tok::Keyword: return t.text;
    case Tok::Int: return "integer";
    case Tok::String: return "string";
    case Tok::Star: return "'*'";
    case Tok::Comma: return "','";
    case Tok::LParen: return "'('";
    case Tok::RParen: return "')'";
    case Tok::Dot: return "'.'";
    case Tok::Eq: return "'='";
    case Tok::Lt: return "'<'";
    case Tok::Gt: return "'>'";
    case Tok::Le: return "'<='";
    case Tok::Ge: return "'>='";
    case Tok::Ne: return "'<>'";
    case Tok::End: return "end of input";
    case Tok::Bad: return t.text;
  }
  return "?";
}

struct Parser {
  std::vector<Token> toks;
  size_t i = 0;
  ParseError err;
  bool unsupported = false;
  std::string unsupported_msg;

  const Token& cur() const { return toks[i]; }

  void note_expected(const std::string& what) {
    const size_t off = cur().offset;
    if (off > err.offset) {
      err.offset = off;
      err.expected.clear();
      err.got = tok_desc(cur());
    }
    if (off == err.offset &&
        std::find(err.expected.begin(), err.expected.end(), what) == err.expected.end()) {
      err.expected.push_back(what);
      err.got = tok_desc(cur());
    }
  }

  bool accept(Tok k) {
    if (cur().kind == k) { ++i; return true; }
    return false;
  }

  bool expect(Tok k, const std::string& what) {
    if (accept(k)) return true;
    note_expected(what);
    return false;
  }

  bool accept_kw(const char* kw) {
    if (cur().kind == Tok::Keyword && cur().text == kw) { ++i; return true; }
    return false;
  }

  bool expect_kw(const char* kw) {
    if (accept_kw(kw)) return true;
    note_expected(kw);
    return false;
  }

  std::optional<std::string> expect_ident(const std::string& what) {
    if (cur().kind == Tok::Ident) {
      std::string s = cur().text;
      ++i;
      return s;
    }
    note_expected(what);
    return std::nullopt;
  }

  std::optional<Value> expect_literal() {
    if (cur().kind == Tok::Int) {
      Value v = cur().num;
      ++i;
      return v;
    }
    if (cur().kind == Tok::String) {
      Value v = cur().text;
      ++i;
      return v;
    }
    note_expected("literal");
    return std::nullopt;
  }

  std::optional<ColumnRef> expect_colref() {
    auto first = expect_ident("column");
    if (!first) return std::nullopt;
    if (accept(Tok::Dot)) {
      auto col = expect_ident("column");
      if (!col) return std::nullopt;
      return ColumnRef{*first, *col};
    }
    return ColumnRef{"", *first};
  }

  std::optional<Predicate> parse_where() {
    Predicate p;
    do {
      auto lhs = expect_colref();
      if (!lhs) return std::nullopt;
      Atom a;
      a.lhs = *lhs;
      if (accept(Tok::Eq)) a.op = CmpOp::Eq;
      else if (accept(Tok::Lt)) a.op = CmpOp::Lt;
      else if (accept(Tok::Gt)) a.op = CmpOp::Gt;
      else if (accept(Tok::Le)) a.op = CmpOp::Le;
      else if (accept(Tok::Ge)) a.op = CmpOp::Ge;
      else if (accept(Tok::Ne)) a.op = CmpOp::Ne;
      else {
        note_expected("comparison operator");
        return std::nullopt;
      }
      if (cur().kind == Tok::Ident) {
        if (a.op != CmpOp::Eq) {
          note_expected("literal");
          return std::nullopt;
        }
        auto rhs = expect_colref();
        if (!rhs) return std::nullopt;
        a.rhs_col = *rhs;
      } else {
        auto v = expect_literal();
        if (!v) return std::nullopt;
        a.rhs_value = *v;
      }
      p.atoms.push_back(std::move(a));
    } while (accept_kw("AND"));
    return p;
  }

  std::optional<Statement> parse_stmt() {
    if (accept_kw("SELECT")) return parse_select();
    if (accept_kw("CREATE")) return parse_create();
    if (accept_kw("DROP")) return parse_drop();
    if (accept_kw("INSERT")) return parse_insert();
    if (accept_kw("UPDATE")) return parse_update();
    if (accept_kw("DELETE")) return parse_delete();
    note_expected("SELECT");
    note_expected("CREATE");
    note_expected("DROP");
    note_expected("INSERT");
    note_expected("UPDATE");
    note_expected("DELETE");
    return std::nullopt;
  }

  std::optional<Statement> parse_select() {
    Select s;
    if (accept(Tok::Star)) {
      s.star = true;
    } else {
      s.star = false;
      do {
        auto c = expect_colref();
        if (!c) return std::nullopt;
        s.columns.push_back(*c);
      } while (accept(Tok::Comma));
    }
    if (!expect_kw("FROM")) return std::nullopt;
    do {
      auto t = expect_ident("table");
      if (!t) return std::nullopt;
      s.tables.push_back(*t);
    } while (accept(Tok::Comma));
    if (s.tables.size() > 2) {
      unsupported = true;
      unsupported_msg = "at most 2 tables in FROM";
      return std::nullopt;
    }
    if (accept_kw("WHERE")) {
      auto p = parse_where();
      if (!p) return std::nullopt;
      s.where = std::move(*p);
    }
    if (!expect(Tok::End, "end of statement")) return std::nullopt;
    return Statement{std::move(s)};
  }

  std::optional<Statement> parse_create() {
    if (!expect_kw("TABLE")) return std::nullopt;
    CreateTable c;
    auto name = expect_ident("table");
    if (!name) return std::nullopt;
    c.name = *name;
    if (!expect(Tok::LParen, "'('")) return std::nullopt;
    do {
      auto col = expect_ident("column");
      if (!col) return std::nullopt;
      ColType ty;
      if (accept_kw("INT")) ty = ColType::Int;
      else if (accept_kw("TEXT")) ty = ColType::Text;
      else {
        note_expected("INT");
        note_expected("TEXT");
        return std::nullopt;
      }
      c.columns.push_back(ColumnDef{*col, ty});
    } while (accept(Tok::Comma));
    if (!expect(Tok::RParen, "')'")) return std::nullopt;
    if (accept_kw("REPLICATION")) {
      if (cur().kind != Tok::Int || cur().num < 1) {
        note_expected("positive integer");
        return std::nullopt;
      }
      c.replication = int(cur().num);
      ++i;
    }
    if (!expect(Tok::End, "end of statement")) return std::nullopt;
    return Statement{std::move(c)};
  }

  std::optional<Statement> parse_drop() {
    if (!expect_kw("TABLE")) return std::nullopt;
    auto name = expect_ident("table");
    if (!name) return std::nullopt;
    if (!expect(Tok::End, "end of statement")) return std::nullopt;
    return Statement{DropTable{*name}};
  }

  std::optional<Statement> parse_insert() {
    if (!expect_kw("INTO")) return std::nullopt;
    Insert ins;
    auto name = expect_ident("table");
    if (!name) return std::nullopt;
    ins.table = *name;
    if (!expect_kw("VALUES")) return std::nullopt;
    if (!expect(Tok::LParen, "'('")) return std::nullopt;
    do {
      auto v = expect_literal();
      if (!v) return std::nullopt;
      ins.values.push_back(*v);
    } while (accept(Tok::Comma));
    if (!expect(Tok::RParen, "')'")) return std::nullopt;
    if (!expect(Tok::End, "end of statement")) return std::nullopt;
    return Statement{std::move(ins)};
  }

  std::optional<Statement> parse_update() {
    Update u;
    auto name = expect_ident("table");
    if (!name) return std::nullopt;
    u.table = *name;
    if (!expect_kw("SET")) return std::nullopt;
    do {
      auto col = expect_ident("column");
      if (!col) return std::nullopt;
      if (!expect(Tok::Eq, "'='")) return std::nullopt;
      auto v = expect_literal();
      if (!v) return std::nullopt;
      u.assignments.emplace_back(*col, *v);
    } while (accept(Tok::Comma));
    if (accept_kw("WHERE")) {
      auto p = parse_where();
      if (!p) return std::nullopt;
      u.where = std::move(*p);
    }
    if (!expect(Tok::End, "end of statement")) return std::nullopt;
    return Statement{std::move(u)};
  }

  std::optional<Statement> parse_delete() {
    if (!expect_kw("FROM")) return std::nullopt;
    Delete d;
    auto name = expect_ident("table");
    if (!name) return std::nullopt;
    d.table = *name;
    if (accept_kw("WHERE")) {
      auto p = parse_where();
      if (!p) return std::nullopt;
      d.where = std::move(*p);
    }
    if (!expect(Tok::End, "end of statement")) return std::nullopt;
    return Statement{std::move(d)};
  }
};

// Qualifies column references and checks the structural invariants that do
// not need a schema: unique columns in CREATE, join atoms across two distinct
// FROM tables, two-table selects carrying at least one equality join.
Status finalize(Statement& s) {
  auto qualify = [](ColumnRef& c, const std::vector<std::string>& tables) -> Status {
    if (c.table.empty()) {
      if (tables.size() != 1) {
        return Status::error(Err::SyntaxError,
                             "unqualified column '" + c.column +
                                 "' is ambiguous over multiple tables");
      }
      c.table = tables[0];
      return Status::good();
    }
    for (const auto& t : tables) {
      if (t == c.table) return Status::good();
    }
    return Status::error(Err::SyntaxError,
                         "column '" + c.table + "." + c.column +
                             "' does not match a FROM table");
  };
  auto check_pred = [&](std::optional<Predicate>& p,
                        const std::vector<std::string>& tables) -> Status {
    if (!p) return Status::good();
    for (auto& a : p->atoms) {
      Status st = qualify(a.lhs, tables);
      if (!st.ok()) return st;
      if (a.rhs_col) {
        st = qualify(*a.rhs_col, tables);
        if (!st.ok()) return st;
        if (a.rhs_col->table == a.lhs.table) {
          return Status::error(Err::SyntaxError,
                               "join predicate must reference two distinct tables");
        }
      }
    }
    return Status::good();
  };

  if (auto* c = std::get_if<CreateTable>(&s)) {
    std::set<std::string> seen;
    for (const auto& col : c->columns) {
      if (!seen.insert(col.name).second) {
        return Status::error(Err::SyntaxError, "duplicate column '" + col.name + "'");
      }
    }
    return Status::good();
  }
  if (auto* sel = std::get_if<Select>(&s)) {
    std::set<std::string> tset(sel->tables.begin(), sel->tables.end());
    if (tset.size() != sel->tables.size()) {
      return Status::error(Err::SyntaxError, "duplicate table in FROM");
    }
    for (auto& c : sel->columns) {
      Status st = qualify(c, sel->tables);
      if (!st.ok()) return st;
    }
    Status st = check_pred(sel->where, sel->tables);
    if (!st.ok()) return st;
    if (sel->tables.size() == 2) {
      bool has_join = false;
      if (sel->where) {
        for (const auto& a : sel->where->atoms) has_join |= a.is_join();
      }
      if (!has_join) {
        return Status::error(Err::SyntaxError,
                             "two-table select requires an equality join predicate");
      }
    }
    return Status::good();
  }
  if (auto* u = std::get_if<Update>(&s)) {
    std::vector<std::string> tables = {u->table};
    return check_pred(u->where, tables);
  }
  if (auto* d = std::get_if<Delete>(&s)) {
    std::vector<std::string> tables = {d->table};
    return check_pred(d->where, tables);
  }
  return Status::good();
}

}  // namespace

Result<Statement> parse(const std::string& text, ParseError* err_out) {
  Lexer lx(text);
  Parser p{lx.run()};
  p.err.offset = 0;
  auto stmt = p.parse_stmt();
  if (p.unsupported) {
    if (err_out) *err_out = p.err;
    return Status::error(Err::Unsupported, p.unsupported_msg);
  }
  if (!stmt) {
    if (p.err.offset == 0) p.err.offset = 1;
    if (err_out) *err_out = p.err;
    return Status::error(Err::SyntaxError, p.err.to_message());
  }
  Status st = finalize(*stmt);
  if (!st.ok()) {
    if (err_out) {
      err_out->offset = 1;
      err_out->expected = {};
      err_out->got = st.message;
    }
    return st;
  }
  return *stmt;
}

namespace {

std::string print_pred(const Predicate& p) {
  std::string out;
  for (size_t i = 0; i < p.atoms.size(); ++i) {
    const Atom& a = p.atoms[i];
    if (i) out += " AND ";
    out += a.lhs.table + "." + a.lhs.column;
    out += " ";
    out += cmp_op_text(a.op);
    out += " ";
    if (a.rhs_col) out += a.rhs_col->table + "." + a.rhs_col->column;
    else out += value_to_sql(*a.rhs_value);
  }
  return out;
}

}  // namespace

std::string print(const Statement& s) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        std::string out;
        if constexpr (std::is_same_v<T, CreateTable>) {
          out = "CREATE TABLE " + v.name + " (";
          for (size_t i = 0; i < v.columns.size(); ++i) {
            if (i) out += ", ";
            out += v.columns[i].name;
            out += " ";
            out += col_type_name(v.columns[i].type);
          }
          out += ")";
          if (v.replication) out += " REPLICATION " + std::to_string(*v.replication);
        } else if constexpr (std::is_same_v<T, DropTable>) {
          out = "DROP TABLE " + v.name;
        } else if constexpr (std::is_same_v<T, Insert>) {
          out = "INSERT INTO " + v.table + " VALUES (";
          for (size_t i = 0; i < v.values.size(); ++i) {
            if (i) out += ", ";
            out += value_to_sql(v.values[i]);
          }
          out += ")";
        } else if constexpr (std::is_same_v<T, Select>) {
          out = "SELECT ";
          if (v.star) {
            out += "*";
          } else {
            for (size_t i = 0; i < v.columns.size(); ++i) {
              if (i) out += ", ";
              out += v.columns[i].table + "." + v.columns[i].column;
            }
          }
          out += " FROM ";
          for (size_t i = 0; i < v.tables.size(); ++i) {
            if (i) out += ", ";
            out += v.tables[i];
          }
          if (v.where) out += " WHERE " + print_pred(*v.where);
        } else if constexpr (std::is_same_v<T, Update>) {
          out = "UPDATE " + v.table + " SET ";
          for (size_t i = 0; i < v.assignments.size(); ++i) {
            if (i) out += ", ";
            out += v.assignments[i].first + " = " + value_to_sql(v.assignments[i].second);
          }
          if (v.where) out += " WHERE " + print_pred(*v.where);
        } else if constexpr (std::is_same_v<T, Delete>) {
          out = "DELETE FROM " + v.table;
          if (v.where) out += " WHERE " + print_pred(*v.where);
        }
        return out;
      },
      s);
}

}  // namespace h2o::sql
