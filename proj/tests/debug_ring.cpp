#include <cstdio>

#include "h2o/cluster.hpp"
#include "h2o/overlay.hpp"

using namespace h2o;
using node::json;

int main() {
  ClusterConfig cfg;
  cfg.seed = 42;
  cfg.monitor.publish_interval_ms = 0;
  cfg.latency_min_ms = 1;
  cfg.latency_max_ms = 3;
  cfg.ping_interval_ms = 200;
  cluster::SimHarness h(cfg);
  std::vector<Address> addrs;
  for (int i = 1; i <= 10; ++i) addrs.push_back("n" + std::to_string(i));
  h.start_node(addrs[0], std::nullopt);
  for (size_t i = 1; i < addrs.size(); ++i) {
    h.start_node(addrs[i], addrs[0], false);
    h.run_for(cfg.ping_interval_ms / 2);
  }
  h.run_for(3 * 10 * cfg.ping_interval_ms);

  std::map<overlay::NodeId, Address> ids;
  for (const auto& a : h.live()) ids[overlay::node_id(a, cfg.m_bits)] = a;
  printf("sorted ring:\n");
  for (const auto& [id, a] : ids) printf("  %10u %s\n", unsigned(id), a.c_str());
  printf("\nnode states:\n");
  for (const auto& a : h.live()) {
    auto* inst = h.instance(a);
    const auto& r = inst->ring().ring();
    printf("  %-4s succ=[", a.c_str());
    for (const auto& s : r.successors) printf("%s ", s.addr.c_str());
    printf("] pred=%s\n", r.predecessor ? r.predecessor->addr.c_str() : "-");
  }
  auto st = h.check_assert(json{{"kind", "ring_converged"}, {"keys", 100}});
  printf("\nassert: %s\n", st.ok() ? "OK" : st.to_string().c_str());
  return 0;
}
