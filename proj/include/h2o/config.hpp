#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace h2o {

struct MonitorConfig {
  uint64_t publish_interval_ms = 5000;  // 0 disables the sampler
  uint64_t staleness_ms = 0;            // 0 means 3x publish interval
  double w_cpu = 0.5;
  double w_mem = 0.25;
  double w_disk = 0.25;

  uint64_t effective_staleness() const {
    return staleness_ms ? staleness_ms : 3 * publish_interval_ms;
  }
};

struct ClusterConfig {
  uint64_t seed = 1;
  int default_rf = 2;
  int m_bits = 32;        // identifier space is [0, 2^m)
  int meta_replicas = 2;  // s: successor copies of System Table / TM state
  uint64_t lock_wait_ms = 2000;
  uint64_t prepare_timeout_ms = 1000;
  uint64_t ping_interval_ms = 1000;
  int ping_timeout_count = 3;
  MonitorConfig monitor;
  double alpha = 0.7;  // locality weight in executor choice
  uint32_t latency_min_ms = 1;
  uint32_t latency_max_ms = 5;
  bool use_fingers = false;
  std::string data_root;  // persistence root; empty = in-proc temp dir

  static ClusterConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

}  // namespace h2o
