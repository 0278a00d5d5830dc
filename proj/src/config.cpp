#include "h2o/config.hpp"

namespace h2o {

using nlohmann::json;

ClusterConfig ClusterConfig::from_json(const json& j) {
  ClusterConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("seed", c.seed);
  get("default_rf", c.default_rf);
  get("m", c.m_bits);
  get("s", c.meta_replicas);
  get("lock_wait_ms", c.lock_wait_ms);
  get("prepare_timeout_ms", c.prepare_timeout_ms);
  get("ping_interval_ms", c.ping_interval_ms);
  get("ping_timeout_count", c.ping_timeout_count);
  get("alpha", c.alpha);
  get("use_fingers", c.use_fingers);
  get("data_root", c.data_root);
  if (j.contains("latency_range")) {
    c.latency_min_ms = j.at("latency_range").at(0).get<uint32_t>();
    c.latency_max_ms = j.at("latency_range").at(1).get<uint32_t>();
  }
  if (j.contains("monitor")) {
    const auto& m = j.at("monitor");
    auto getm = [&](const char* key, auto& field) {
      if (m.contains(key)) field = m.at(key).get<std::decay_t<decltype(field)>>();
    };
    getm("publish_interval_ms", c.monitor.publish_interval_ms);
    getm("staleness_ms", c.monitor.staleness_ms);
    if (m.contains("weights")) {
      const auto& w = m.at("weights");
      if (w.contains("cpu")) c.monitor.w_cpu = w.at("cpu").get<double>();
      if (w.contains("mem")) c.monitor.w_mem = w.at("mem").get<double>();
      if (w.contains("disk")) c.monitor.w_disk = w.at("disk").get<double>();
    }
  }
  return c;
}

json ClusterConfig::to_json() const {
  return json{
      {"seed", seed},
      {"default_rf", default_rf},
      {"m", m_bits},
      {"s", meta_replicas},
      {"lock_wait_ms", lock_wait_ms},
      {"prepare_timeout_ms", prepare_timeout_ms},
      {"ping_interval_ms", ping_interval_ms},
      {"ping_timeout_count", ping_timeout_count},
      {"alpha", alpha},
      {"use_fingers", use_fingers},
      {"data_root", data_root},
      {"latency_range", {latency_min_ms, latency_max_ms}},
      {"monitor",
       {{"publish_interval_ms", monitor.publish_interval_ms},
        {"staleness_ms", monitor.staleness_ms},
        {"weights",
         {{"cpu", monitor.w_cpu}, {"mem", monitor.w_mem}, {"disk", monitor.w_disk}}}}},
  };
}

}  // namespace h2o
