#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include <json.hpp>

#include "h2o/common.hpp"
#include "h2o/config.hpp"
#include "h2o/wire.hpp"

namespace h2o::node {

using json = nlohmann::json;
using wire::Envelope;

using ReplyFn = std::function<void(Result<json>)>;

// Services a protocol component gets from its hosting instance. One instance
// == one serial mailbox: every callback and handler runs on that mailbox, so
// components never need locks.
class NodeCtx {
 public:
  virtual ~NodeCtx() = default;

  virtual const Address& self() const = 0;
  virtual const ClusterConfig& cfg() const = 0;
  virtual uint64_t now() const = 0;
  virtual uint64_t rnd() = 0;  // deterministic per-node stream

  // Fire-and-forget message.
  virtual void send(const Address& to, const std::string& type, json body) = 0;

  // Request with reply correlation (body["re"] == request rid) and timeout.
  // The callback receives Err::Timeout, the error carried in the reply body,
  // or the reply body itself.
  virtual void request(const Address& to, const std::string& type, json body,
                       uint64_t timeout_ms, ReplyFn cb) = 0;

  virtual void reply_to(const Envelope& req, json body) = 0;  // msg_type REPLY
  virtual void reply_to_as(const Envelope& req, const std::string& type, json body) = 0;
  virtual void reply_err(const Envelope& req, Err code, const std::string& msg = "") = 0;

  virtual uint64_t schedule(uint64_t delay_ms, std::function<void()> fn) = 0;
  virtual void cancel_timer(uint64_t id) = 0;

  virtual void log_event(json ev) = 0;

  virtual std::filesystem::path data_dir() const = 0;
};

// Error payload convention: {"err": "<name>", "msg": "..."}.
json err_body(Err code, const std::string& msg = "");
Status status_from(const json& body);
bool is_err_body(const json& body);

// Runs `step(i, next)` for i in [0, n); `next(st)` continues the chain, a
// non-OK status short-circuits into `done`.
void for_each_async(size_t n, std::function<void(size_t, std::function<void(Status)>)> step,
                    std::function<void(Status)> done);

}  // namespace h2o::node
