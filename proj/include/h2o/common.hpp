#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <variant>

namespace h2o {

// A node address: either a simulated node name ("n3") or "host:port" for
// the socket transport. Unique per live instance within a cluster.
using Address = std::string;

// Globally unique transaction id, "<coordinator address>:<local counter>".
using TxnId = std::string;

enum class Err {
  None = 0,
  // wire
  NeedMoreBytes,
  ProtocolError,
  UnsupportedVersion,
  EncodingError,
  // sql
  SyntaxError,
  Unsupported,
  BindError,
  // storage
  SequenceGap,
  RecoveryError,
  // catalog / managers
  NoSuchTable,
  TableExists,
  WrongManager,
  Draining,
  CatalogLost,
  ManagerLost,
  // transactions
  LockTimeout,
  ReplicaUnavailable,
  TableUnavailable,
  Aborted,
  // overlay / cluster
  JoinFailed,
  LookupTimeout,
  BootstrapFailed,
  LeaveRefused,
  Timeout,
  Retryable,
  ValidationError,
  Internal,
};

const char* err_name(Err e);
Err err_from_name(const std::string& name);

// True for errors a coordinator may transparently retry.
bool err_is_retryable(Err e);

struct Status {
  Err code = Err::None;
  std::string message;

  bool ok() const { return code == Err::None; }
  static Status good() { return {}; }
  static Status error(Err c, std::string msg = "") { return {c, std::move(msg)}; }
  std::string to_string() const;
};

template <typename T>
class Result {
 public:
  Result(T value) : v_(std::move(value)) {}  // NOLINT: implicit by design
  Result(Status s) : v_(std::move(s)) {}     // NOLINT
  Result(Err code, std::string msg = "") : v_(Status::error(code, std::move(msg))) {}

  bool ok() const { return std::holds_alternative<T>(v_); }
  const T& value() const& { return std::get<T>(v_); }
  T& value() & { return std::get<T>(v_); }
  T take() { return std::move(std::get<T>(v_)); }
  Status status() const {
    return ok() ? Status::good() : std::get<Status>(v_);
  }
  Err code() const { return ok() ? Err::None : std::get<Status>(v_).code; }

 private:
  std::variant<T, Status> v_;
};

// Deterministic 64-bit string hash (FNV-1a), used to derive per-node RNG
// streams from the cluster seed.
uint64_t fnv1a64(const std::string& s);

}  // namespace h2o
