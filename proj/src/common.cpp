#include "h2o/common.hpp"

#include <array>
#include <cstring>

namespace h2o {

namespace {

struct ErrName {
  Err code;
  const char* name;
};

constexpr std::array kErrNames = {
    ErrName{Err::None, "OK"},
    ErrName{Err::NeedMoreBytes, "NeedMoreBytes"},
    ErrName{Err::ProtocolError, "ProtocolError"},
    ErrName{Err::UnsupportedVersion, "UnsupportedVersion"},
    ErrName{Err::EncodingError, "EncodingError"},
    ErrName{Err::SyntaxError, "SyntaxError"},
    ErrName{Err::Unsupported, "Unsupported"},
    ErrName{Err::BindError, "BindError"},
    ErrName{Err::SequenceGap, "SequenceGap"},
    ErrName{Err::RecoveryError, "RecoveryError"},
    ErrName{Err::NoSuchTable, "NoSuchTable"},
    ErrName{Err::TableExists, "TableExists"},
    ErrName{Err::WrongManager, "WrongManager"},
    ErrName{Err::Draining, "Draining"},
    ErrName{Err::CatalogLost, "CatalogLost"},
    ErrName{Err::ManagerLost, "ManagerLost"},
    ErrName{Err::LockTimeout, "LockTimeout"},
    ErrName{Err::ReplicaUnavailable, "ReplicaUnavailable"},
    ErrName{Err::TableUnavailable, "TableUnavailable"},
    ErrName{Err::Aborted, "Aborted"},
    ErrName{Err::JoinFailed, "JoinFailed"},
    ErrName{Err::LookupTimeout, "LookupTimeout"},
    ErrName{Err::BootstrapFailed, "BootstrapFailed"},
    ErrName{Err::LeaveRefused, "LeaveRefused"},
    ErrName{Err::Timeout, "Timeout"},
    ErrName{Err::Retryable, "Retryable"},
    ErrName{Err::ValidationError, "ValidationError"},
    ErrName{Err::Internal, "Internal"},
};

}  // namespace

const char* err_name(Err e) {
  for (const auto& en : kErrNames) {
    if (en.code == e) return en.name;
  }
  return "Unknown";
}

Err err_from_name(const std::string& name) {
  for (const auto& en : kErrNames) {
    if (name == en.name) return en.code;
  }
  return Err::Internal;
}

bool err_is_retryable(Err e) {
  switch (e) {
    case Err::LockTimeout:
    case Err::ReplicaUnavailable:
    case Err::WrongManager:
    case Err::Draining:
    case Err::Timeout:
    case Err::Retryable:
      return true;
    default:
      return false;
  }
}

std::string Status::to_string() const {
  std::string s = err_name(code);
  if (!message.empty()) {
    s += ": ";
    s += message;
  }
  return s;
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace h2o
