#include "h2o/monitor.hpp"

#include <cmath>

namespace h2o::monitor {

Status ResourceSample::validate() const {
  if (instance.empty()) return Status::error(Err::ValidationError, "empty instance");
  if (cpu_idle < 0 || cpu_idle > 1) {
    return Status::error(Err::ValidationError, "cpu_idle out of [0,1]");
  }
  if (mem_total <= 0 || disk_total <= 0) {
    return Status::error(Err::ValidationError, "totals must be positive");
  }
  if (mem_free < 0 || mem_free > mem_total || disk_free < 0 || disk_free > disk_total) {
    return Status::error(Err::ValidationError, "free exceeds total");
  }
  return Status::good();
}

Result<double> score_sample(const ResourceSample& s, const MonitorConfig& cfg) {
  Status st = s.validate();
  if (!st.ok()) return st;
  const double wsum = cfg.w_cpu + cfg.w_mem + cfg.w_disk;
  if (cfg.w_cpu < 0 || cfg.w_mem < 0 || cfg.w_disk < 0 ||
      std::abs(wsum - 1.0) > 1e-9) {
    return Status::error(Err::ValidationError, "weights must be non-negative and sum to 1");
  }
  return cfg.w_cpu * s.cpu_idle + cfg.w_mem * (double(s.mem_free) / double(s.mem_total)) +
         cfg.w_disk * (double(s.disk_free) / double(s.disk_total));
}

std::map<Address, double> scores_from_rows(const std::vector<storage::Row>& rows,
                                           uint64_t now, const MonitorConfig& cfg) {
  std::map<Address, double> out;
  const uint64_t staleness = cfg.effective_staleness();
  for (const auto& row : rows) {
    if (row.values.size() != 7) continue;
    ResourceSample s;
    s.instance = std::get<std::string>(row.values[0]);
    s.cpu_idle = double(std::get<int64_t>(row.values[1])) / 1000.0;
    s.mem_free = std::get<int64_t>(row.values[2]);
    s.mem_total = std::get<int64_t>(row.values[3]);
    s.disk_free = std::get<int64_t>(row.values[4]);
    s.disk_total = std::get<int64_t>(row.values[5]);
    s.ts = uint64_t(std::get<int64_t>(row.values[6]));
    if (s.ts + staleness < now) {
      out[s.instance] = 0.0;
      continue;
    }
    auto sc = score_sample(s, cfg);
    out[s.instance] = sc.ok() ? sc.value() : 0.0;
  }
  return out;
}

std::vector<sql::Statement> upsert_statements(const ResourceSample& s) {
  sql::Delete del;
  del.table = kMonitorTable;
  sql::Predicate p;
  sql::Atom a;
  a.lhs = sql::ColumnRef{kMonitorTable, "instance"};
  a.op = sql::CmpOp::Eq;
  a.rhs_value = sql::Value{s.instance};
  p.atoms.push_back(a);
  del.where = p;

  sql::Insert ins;
  ins.table = kMonitorTable;
  ins.values = {sql::Value{s.instance},
                sql::Value{int64_t(std::llround(s.cpu_idle * 1000))},
                sql::Value{s.mem_free},
                sql::Value{s.mem_total},
                sql::Value{s.disk_free},
                sql::Value{s.disk_total},
                sql::Value{int64_t(s.ts)}};
  return {sql::Statement{del}, sql::Statement{ins}};
}

Monitor::Monitor(NodeCtx& ctx, SubmitFn submit, ScoresSink sink)
    : ctx_(ctx), submit_(std::move(submit)), sink_(std::move(sink)) {}

ResourceSample Monitor::current_sample() const {
  if (scripted_) {
    ResourceSample s = *scripted_;
    s.instance = ctx_.self();
    s.ts = ctx_.now();
    return s;
  }
  ResourceSample s;
  s.instance = ctx_.self();
  s.cpu_idle = 0.5;
  s.mem_total = 1024 * 1024 * 1024;
  s.mem_free = s.mem_total / 2;
  s.disk_total = int64_t(100) * 1024 * 1024 * 1024;
  s.disk_free = s.disk_total / 2;
  s.ts = ctx_.now();
  return s;
}

void Monitor::start() {
  if (ctx_.cfg().monitor.publish_interval_ms == 0) return;  // disabled
  running_ = true;
  ctx_.schedule(ctx_.cfg().monitor.publish_interval_ms, [this]() { tick(); });
}

void Monitor::tick() {
  if (!running_) return;
  ctx_.schedule(ctx_.cfg().monitor.publish_interval_ms, [this]() { tick(); });
  if (publishing_) return;  // previous round still in flight; skip this one
  publishing_ = true;

  // Publish, then read every row back and refresh the local score cache.
  // Both legs ride the ordinary transaction path; failures drop the sample
  // and the next interval retries.
  submit_(upsert_statements(current_sample()), [this](Result<json> r) {
    (void)r;  // best effort
    sql::Select sel;
    sel.star = true;
    sel.tables = {kMonitorTable};
    submit_({sql::Statement{sel}}, [this](Result<json> rows) {
      publishing_ = false;
      if (!rows.ok()) return;
      std::vector<storage::Row> parsed;
      for (const auto& rj : rows.value().value("rows", json::array())) {
        storage::Row row;
        for (const auto& vj : rj) {
          auto v = storage::value_from_json(vj);
          if (v.ok()) row.values.push_back(v.take());
        }
        parsed.push_back(std::move(row));
      }
      sink_(scores_from_rows(parsed, ctx_.now(), ctx_.cfg().monitor));
    });
  });
}

}  // namespace h2o::monitor
