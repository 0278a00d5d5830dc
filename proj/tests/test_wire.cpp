#include <doctest.h>

#include <random>
#include <sstream>

#include "h2o/wire.hpp"

using namespace h2o;
using namespace h2o::wire;

namespace {

Envelope make_env(std::string type, Address from, Address to, uint64_t rid, json body) {
  Envelope e;
  e.msg_type = std::move(type);
  e.from = std::move(from);
  e.to = std::move(to);
  e.rid = rid;
  e.body = std::move(body);
  return e;
}

// Random-but-seeded envelope generator for the round-trip property.
Envelope random_env(std::mt19937_64& rng) {
  static const char* types[] = {"PING", "PONG", "SQL_EXEC", "TM_LOCK", "ST_LOOKUP"};
  json body = json::object();
  const int fields = int(rng() % 5);
  for (int i = 0; i < fields; ++i) {
    const std::string key = "k" + std::to_string(rng() % 10);
    switch (rng() % 4) {
      case 0: body[key] = int64_t(rng()); break;
      case 1: body[key] = "s" + std::to_string(rng() % 1000); break;
      case 2: body[key] = json::array({1, 2, "x"}); break;
      default: body[key] = json{{"nested", true}}; break;
    }
  }
  return make_env(types[rng() % 5], "n" + std::to_string(rng() % 9),
                  "n" + std::to_string(rng() % 9), rng() % 100000 + 1, body);
}

}  // namespace

TEST_CASE("frame round-trip identity") {
  Envelope e = make_env("PING", "a", "b", 1, json::object());
  auto frame = encode_frame(e);
  REQUIRE(frame.ok());
  auto back = decode_frame(frame.value());
  REQUIRE(back.ok());
  CHECK(back.value().env == e);
  CHECK(back.value().consumed == frame.value().size());
}

TEST_CASE("frame round-trip property over generated envelopes") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 500; ++i) {
    Envelope e = random_env(rng);
    auto frame = encode_frame(e);
    REQUIRE(frame.ok());
    auto back = decode_frame(frame.value());
    REQUIRE(back.ok());
    CHECK(back.value().env == e);
  }
}

TEST_CASE("encoding is canonical and deterministic") {
  Envelope e = make_env("PING", "a", "b", 3, json{{"z", 1}, {"a", "x"}});
  auto f1 = encode_frame(e);
  auto f2 = encode_frame(e);
  REQUIRE(f1.ok());
  CHECK(f1.value() == f2.value());
}

TEST_CASE("payload bytes match an independent canonicalizer") {
  // Oracle: json.dumps({...}, sort_keys=True, separators=(',',':')) of the
  // same document gives this exact 64-byte text.
  Envelope e = make_env("PING", "a", "b", 1, json{{"k", 1}});
  const std::string expected =
      R"({"body":{"k":1},"from":"a","rid":1,"to":"b","type":"PING","v":1})";
  REQUIRE(expected.size() == 64);
  auto frame = encode_frame(e);
  REQUIRE(frame.ok());
  const auto& bytes = frame.value();
  REQUIRE(bytes.size() == 4 + expected.size());
  CHECK(bytes[0] == 0);
  CHECK(bytes[1] == 0);
  CHECK(bytes[2] == 0);
  CHECK(bytes[3] == 64);
  CHECK(std::string(bytes.begin() + 4, bytes.end()) == expected);
}

TEST_CASE("decode of a truncated frame wants more bytes") {
  Envelope e = make_env("PING", "a", "b", 1, json::object());
  auto frame = encode_frame(e);
  REQUIRE(frame.ok());
  auto& bytes = frame.value();

  auto r3 = decode_frame(std::span<const uint8_t>(bytes.data(), 3));
  CHECK(r3.code() == Err::NeedMoreBytes);
  auto rhalf = decode_frame(std::span<const uint8_t>(bytes.data(), bytes.size() - 1));
  CHECK(rhalf.code() == Err::NeedMoreBytes);
}

TEST_CASE("decode rejects unsupported version") {
  const std::string payload =
      R"({"body":{},"from":"a","rid":1,"to":"b","type":"PING","v":2})";
  std::vector<uint8_t> bytes = {0, 0, 0, uint8_t(payload.size())};
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  auto r = decode_frame(bytes);
  CHECK(r.code() == Err::UnsupportedVersion);
}

TEST_CASE("decode rejects malformed payloads") {
  const std::string payload = "{not json";
  std::vector<uint8_t> bytes = {0, 0, 0, uint8_t(payload.size())};
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  CHECK(decode_frame(bytes).code() == Err::ProtocolError);

  const std::string unknown =
      R"({"body":{},"from":"a","rid":1,"to":"b","type":"NOT_A_TYPE","v":1})";
  std::vector<uint8_t> b2 = {0, 0, 0, uint8_t(unknown.size())};
  b2.insert(b2.end(), unknown.begin(), unknown.end());
  CHECK(decode_frame(b2).code() == Err::ProtocolError);
}

TEST_CASE("encode rejects non-object body") {
  Envelope e = make_env("PING", "a", "b", 1, json::array({1, 2}));
  CHECK(encode_frame(e).code() == Err::EncodingError);
}

TEST_CASE("sim: degenerate latency range delivers at clock+1") {
  SimNet net(SimConfig{42, 1, 1});
  net.register_node("a");
  net.register_node("b");
  net.send(make_env("PING", "a", "b", 1, json::object()));
  auto evs = net.step();
  REQUIRE(evs.size() == 1);
  CHECK(net.now() == 1);
  CHECK(std::get<Delivery>(evs[0]).env.msg_type == "PING");
}

TEST_CASE("sim: empty queue is a no-op") {
  SimNet net(SimConfig{1, 1, 5});
  CHECK(net.step().empty());
  CHECK(net.now() == 0);
}

TEST_CASE("sim: same-instant deliveries return in enqueue order") {
  SimNet net(SimConfig{1, 2, 2});
  net.register_node("a");
  net.register_node("b");
  net.send(make_env("PING", "a", "b", 1, json::object()));
  net.send(make_env("PING", "a", "b", 2, json::object()));
  auto evs = net.step();
  REQUIRE(evs.size() == 2);
  CHECK(std::get<Delivery>(evs[0]).env.rid == 1);
  CHECK(std::get<Delivery>(evs[1]).env.rid == 2);
}

TEST_CASE("sim: partitions drop messages silently") {
  SimNet net(SimConfig{1, 1, 1});
  net.register_node("a");
  net.register_node("b");
  int drops = 0;
  net.on_drop = [&](const Envelope&, const char* reason) {
    CHECK(std::string(reason) == "partition");
    ++drops;
  };
  net.set_partitions({{"a"}, {"b"}});
  net.send(make_env("PING", "a", "b", 1, json::object()));
  CHECK(net.step().empty());
  CHECK(drops == 1);

  net.heal();
  net.send(make_env("PING", "a", "b", 2, json::object()));
  CHECK(net.step().size() == 1);
}

TEST_CASE("sim: unknown destination is dropped, not an immediate error") {
  SimNet net(SimConfig{1, 1, 1});
  net.register_node("a");
  int drops = 0;
  net.on_drop = [&](const Envelope&, const char* reason) {
    CHECK(std::string(reason) == "unknown_dest");
    ++drops;
  };
  net.send(make_env("PING", "a", "nowhere", 1, json::object()));
  CHECK(drops == 1);
}

namespace {

// Runs a fixed script of sends/steps and returns the delivery log.
std::string run_delivery_script(uint64_t seed) {
  SimNet net(SimConfig{seed, 1, 7});
  for (int i = 0; i < 5; ++i) net.register_node("n" + std::to_string(i));
  std::mt19937_64 script_rng(99);  // script choices fixed across runs
  std::ostringstream log;
  uint64_t rid = 1;
  for (int i = 0; i < 100; ++i) {
    const auto from = "n" + std::to_string(script_rng() % 5);
    const auto to = "n" + std::to_string(script_rng() % 5);
    net.send(make_env("PING", from, to, rid++, json::object()));
    if (script_rng() % 3 == 0) {
      for (const auto& ev : net.step()) {
        const auto& env = std::get<Delivery>(ev).env;
        log << net.now() << " " << env.from << ">" << env.to << " " << env.rid << "\n";
      }
    }
  }
  while (true) {
    auto evs = net.step();
    if (evs.empty()) break;
    for (const auto& ev : evs) {
      const auto& env = std::get<Delivery>(ev).env;
      log << net.now() << " " << env.from << ">" << env.to << " " << env.rid << "\n";
    }
  }
  return log.str();
}

}  // namespace

TEST_CASE("sim: identical seed and script give identical delivery logs") {
  const std::string a = run_delivery_script(1234);
  const std::string b = run_delivery_script(1234);
  CHECK(a == b);
  CHECK(!a.empty());
}

TEST_CASE("sim: timers interleave deterministically with deliveries") {
  SimNet net(SimConfig{5, 1, 1});
  net.register_node("a");
  net.register_node("b");
  net.schedule(1, 77);
  net.send(make_env("PING", "a", "b", 1, json::object()));
  auto evs = net.step();
  REQUIRE(evs.size() == 2);
  CHECK(std::get<TimerFire>(evs[0]).timer_id == 77);  // scheduled first
  CHECK(std::get<Delivery>(evs[1]).env.rid == 1);
}
