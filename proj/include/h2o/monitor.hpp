#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "h2o/runtime.hpp"
#include "h2o/sql.hpp"
#include "h2o/storage.hpp"

namespace h2o::monitor {

using node::json;
using node::NodeCtx;

// The system table every instance publishes its resource row into.
inline const char* kMonitorTable = "_MONITOR";
inline const char* kMonitorSchemaSql =
    "CREATE TABLE _MONITOR (instance TEXT, cpu_idle_milli INT, mem_free INT, "
    "mem_total INT, disk_free INT, disk_total INT, ts INT)";

struct ResourceSample {
  Address instance;
  double cpu_idle = 0;  // fraction in [0,1]
  int64_t mem_free = 0;
  int64_t mem_total = 1;
  int64_t disk_free = 0;
  int64_t disk_total = 1;
  uint64_t ts = 0;

  Status validate() const;
};

// Scalar availability: w_c*cpu_idle + w_m*(mem_free/mem_total) +
// w_d*(disk_free/disk_total), weights summing to 1.
Result<double> score_sample(const ResourceSample& s, const MonitorConfig& cfg);

// Scores from the latest _MONITOR rows; rows older than the staleness bound
// score 0. Column order matches kMonitorSchemaSql.
std::map<Address, double> scores_from_rows(const std::vector<storage::Row>& rows,
                                           uint64_t now, const MonitorConfig& cfg);

// Canonical upsert for one instance's sample: delete-then-insert, committed
// as a single transaction through the ordinary lock + 2PC path.
std::vector<sql::Statement> upsert_statements(const ResourceSample& s);

// Per-instance sampler: publishes on a timer and refreshes the local score
// cache by reading _MONITOR back through an ordinary SELECT.
class Monitor {
 public:
  using SubmitFn =
      std::function<void(std::vector<sql::Statement>, std::function<void(Result<json>)>)>;
  using ScoresSink = std::function<void(std::map<Address, double>)>;

  Monitor(NodeCtx& ctx, SubmitFn submit, ScoresSink sink);

  void start();
  void stop() { running_ = false; }
  void set_scripted(const ResourceSample& s) { scripted_ = s; }
  bool busy() const { return publishing_; }

  // Default sample when nothing is scripted and no OS sampler runs: a
  // neutral half-available machine.
  ResourceSample current_sample() const;

 private:
  void tick();

  NodeCtx& ctx_;
  SubmitFn submit_;
  ScoresSink sink_;
  std::optional<ResourceSample> scripted_;
  bool running_ = false;
  bool publishing_ = false;
};

}  // namespace h2o::monitor
