#pragma once

#include <map>
#include <memory>
#include <optional>
#include <random>

#include "h2o/exec.hpp"
#include "h2o/monitor.hpp"
#include "h2o/overlay.hpp"
#include "h2o/runtime.hpp"
#include "h2o/systable.hpp"
#include "h2o/tablemgr.hpp"

namespace h2o::node {

// Transport + timer + event-sink services, supplied by the simulation
// harness or the socket host.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void transmit(Envelope env) = 0;
  virtual uint64_t now() const = 0;
  virtual uint64_t schedule(uint64_t delay_ms, std::function<void()> fn) = 0;
  virtual void cancel(uint64_t id) = 0;
  virtual void log_event(json ev) = 0;
};

// One database instance: ring membership, optional System Table roles, local
// Table Managers, replica stores, resource monitor, and query coordinator,
// all driven by a single serial mailbox.
class Instance : public NodeCtx {
 public:
  Instance(Transport& transport, ClusterConfig cfg, Address self,
           std::filesystem::path data_dir, uint64_t rng_seed);

  // Joins the ring, discovers (or creates) the System Table, reconciles any
  // replica stores recovered from disk, and starts the maintenance timers.
  void boot(std::optional<Address> bootstrap, std::function<void(Status)> done);

  void handle(Envelope env);

  bool ready() const { return ready_; }
  bool stopped() const { return stopped_; }
  bool idle() const;

  overlay::RingNode& ring() { return *ring_; }
  systable::SysTableSvc& systable() { return *st_; }
  tablemgr::ManagerHost& mgr() { return *mgr_; }
  tablemgr::ReplicaHost& stores() { return *stores_; }
  exec::Engine& engine() { return *engine_; }
  monitor::Monitor& mon() { return *mon_; }
  const std::map<Address, double>& scores() const { return scores_; }
  void set_scripted_sample(const monitor::ResourceSample& s);

  // NodeCtx
  const Address& self() const override { return self_; }
  const ClusterConfig& cfg() const override { return cfg_; }
  uint64_t now() const override { return transport_.now(); }
  uint64_t rnd() override { return rng_(); }
  void send(const Address& to, const std::string& type, json body) override;
  void request(const Address& to, const std::string& type, json body,
               uint64_t timeout_ms, ReplyFn cb) override;
  void reply_to(const Envelope& req, json body) override;
  void reply_to_as(const Envelope& req, const std::string& type, json body) override;
  void reply_err(const Envelope& req, Err code, const std::string& msg = "") override;
  uint64_t schedule(uint64_t delay_ms, std::function<void()> fn) override;
  void cancel_timer(uint64_t id) override;
  void log_event(json ev) override;
  std::filesystem::path data_dir() const override { return data_dir_; }

 private:
  struct Pending {
    ReplyFn cb;
    uint64_t timer = 0;
  };

  void on_upcall(const overlay::FailureUpcall& up);
  void start_timers();
  void reconcile_recovered_stores();
  void handle_status(const Envelope& env);
  void handle_leave(const Envelope& env);
  void finish_leave(const Envelope& req);
  Envelope make_env(const Address& to, const std::string& type, json body);

  Transport& transport_;
  ClusterConfig cfg_;
  Address self_;
  std::filesystem::path data_dir_;
  std::mt19937_64 rng_;

  std::unique_ptr<overlay::RingNode> ring_;
  std::unique_ptr<systable::SysTableSvc> st_;
  std::unique_ptr<tablemgr::ReplicaHost> stores_;
  std::unique_ptr<tablemgr::ManagerHost> mgr_;
  std::unique_ptr<exec::Engine> engine_;
  std::unique_ptr<monitor::Monitor> mon_;

  std::map<uint64_t, Pending> pending_;
  uint64_t rid_counter_ = 0;
  std::map<Address, double> scores_;
  bool ready_ = false;
  bool stopped_ = false;
  bool leaving_ = false;
};

}  // namespace h2o::node
