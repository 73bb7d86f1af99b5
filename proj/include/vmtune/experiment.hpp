#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "vmtune/bandit.hpp"
#include "vmtune/config.hpp"
#include "vmtune/controller.hpp"

namespace vmtune {

// Node and VM ids are derived from group ids; VMs are placed round-robin over
// the expanded node list in declaration order.
inline Simulator build_simulator(const ExperimentConfig& c) {
  std::vector<NodeSpec> nodes;
  for (const auto& g : c.nodes)
    for (int k = 0; k < g.count; ++k) {
      NodeSpec n = g.spec;
      n.node_id = g.count == 1 ? g.id : g.id + "-" + std::to_string(k);
      nodes.push_back(std::move(n));
    }
  std::vector<VmState> vms;
  std::size_t slot = 0;
  for (const auto& g : c.vm_groups) {
    const auto& type = c.instance_types.at(g.instance_type);
    for (int k = 0; k < g.count; ++k) {
      auto vm = make_vm(g.name + "-" + std::to_string(k), nodes[slot++ % nodes.size()].node_id, type,
                        g.workload);
      if (g.initial_vcpus) vm.vcpus = *g.initial_vcpus;
      if (g.initial_mem_mib) vm.mem_mib = *g.initial_mem_mib;
      vms.push_back(std::move(vm));
    }
  }
  return Simulator(std::move(nodes), std::move(vms), c.workloads, c.simulator, c.seed);
}

inline ControllerSettings controller_settings(const ExperimentConfig& c) {
  ControllerSettings s;
  s.rules = c.rules;
  s.filter = c.filter;
  s.band = c.thresholds;
  s.bad = c.bad;
  s.decision_interval_s = c.decision_interval_s;
  s.track_regret = c.track_regret;
  return s;
}

inline LinUcbModel fresh_model(const MethodConfig& m) {
  return LinUcbModel(kContextDim, m.alpha, m.lambda);
}

inline std::unique_ptr<Policy> make_policy(const ExperimentConfig& c, const MethodConfig& m,
                                           const std::optional<LinUcbModel>& warm = std::nullopt) {
  switch (m.kind) {
    case PolicyKind::Passive: return std::make_unique<PassivePolicy>();
    case PolicyKind::Reactive: return std::make_unique<ReactivePolicy>(c.thresholds);
    case PolicyKind::Proactive: return std::make_unique<ProactivePolicy>(c.thresholds, m.proactive);
    case PolicyKind::Bandits: return std::make_unique<BanditPolicy>(warm ? *warm : fresh_model(m));
  }
  throw std::logic_error("unhandled policy kind");
}

struct MetricsRow {
  double time_s = 0.0;
  long long total_vcpus = 0;
  long long total_mem_mib = 0;
  double mean_vm_cpu_usage = 0.0;
  double mean_vm_mem_usage = 0.0;
  double frac_vms_swapping = 0.0;
  double mean_latency_ms = 0.0;
  double total_iops = 0.0;
  double cumulative_reward = 0.0;
  std::optional<double> regret;
};

inline constexpr const char* kMetricsHeader =
    "time_s,total_vcpus,total_mem_mib,mean_vm_cpu_usage,mean_vm_mem_usage,frac_vms_swapping,"
    "mean_latency_ms,total_iops,cumulative_reward,regret";

inline MetricsRow metrics_row(const Controller& c) {
  MetricsRow row;
  const auto& env = c.env();
  row.time_s = env.clock();
  const auto n = env.vms().size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& vm = env.vms()[i];
    const auto& m = env.last_metrics(i);
    row.total_vcpus += vm.vcpus;
    row.total_mem_mib += vm.mem_mib;
    row.mean_vm_cpu_usage += m.cpu_usage;
    row.mean_vm_mem_usage += m.mem_usage;
    row.frac_vms_swapping += m.swap_rate > 0.0 ? 1.0 : 0.0;
    row.mean_latency_ms += m.io_latency_ms;
    row.total_iops += m.achieved_iops;
  }
  if (n > 0) {
    const double k = static_cast<double>(n);
    row.mean_vm_cpu_usage /= k;
    row.mean_vm_mem_usage /= k;
    row.frac_vms_swapping /= k;
    row.mean_latency_ms /= k;
  }
  row.cumulative_reward = c.cumulative_reward();
  if (c.settings().track_regret) row.regret = c.regret().regret();
  return row;
}

inline std::string format_row(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%.0f,%lld,%lld,%.6f,%.6f,%.6f,%.6f,%.3f,%.0f,", r.time_s, r.total_vcpus,
                r.total_mem_mib, r.mean_vm_cpu_usage, r.mean_vm_mem_usage, r.frac_vms_swapping,
                r.mean_latency_ms, r.total_iops, r.cumulative_reward);
  std::string s(buf);
  if (r.regret) {
    std::snprintf(buf, sizeof buf, "%.0f", *r.regret);
    s += buf;
  }
  return s;
}

inline void write_metrics(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) out << format_row(r) << '\n';
}

inline void write_metrics(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write metrics to '" + path + "'");
  write_metrics(out, rows);
  if (!out) throw std::runtime_error("failed writing metrics to '" + path + "'");
}

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream s;
  write_metrics(s, rows);
  return s.str();
}

// vCPU-hours accumulated over the run; each row stands for one interval.
inline double vcpu_hours(const std::vector<MetricsRow>& rows, double interval_s) {
  double h = 0.0;
  for (const auto& r : rows) h += static_cast<double>(r.total_vcpus) * interval_s / 3600.0;
  return h;
}

struct RunOutcome {
  std::vector<MetricsRow> rows;
  double cumulative_reward = 0.0;
  std::optional<LinUcbModel> model;  // set for bandit runs
};

inline RunOutcome run_method(const ExperimentConfig& c, const MethodConfig& m,
                             const std::optional<LinUcbModel>& warm = std::nullopt) {
  Controller ctl(build_simulator(c), make_policy(c, m, warm), controller_settings(c));
  RunOutcome out;
  const auto n = c.rounds();
  out.rows.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    ctl.run_round();
    out.rows.push_back(metrics_row(ctl));
  }
  out.cumulative_reward = ctl.cumulative_reward();
  if (const auto* b = dynamic_cast<const BanditPolicy*>(&ctl.policy())) out.model = b->model();
  return out;
}

inline std::optional<LinUcbModel> load_warm_start(const ExperimentConfig& c) {
  if (!c.checkpoint_in || c.method().kind != PolicyKind::Bandits) return std::nullopt;
  return load_checkpoint(*c.checkpoint_in);
}

inline RunOutcome run(const ExperimentConfig& c) {
  return run_method(c, c.method(), load_warm_start(c));
}

inline RunOutcome warmup(const ExperimentConfig& c) {
  if (c.method().kind != PolicyKind::Bandits)
    throw ConfigError("method.kind", "warmup needs the bandits method");
  return run(c);
}

struct CompareEntry {
  std::string method;
  MetricsRow final_row;
  double vcpu_hours = 0.0;
  double delta_vcpus_pct = 0.0;  // relative to the passive run
  double delta_mem_pct = 0.0;
  double delta_swapping_pct = 0.0;
};

struct CompareOutcome {
  std::vector<RunOutcome> runs;
  std::vector<CompareEntry> summary;
};

inline double pct_delta(double value, double base) {
  if (base == 0.0) return value == 0.0 ? 0.0 : (value > 0 ? 100.0 : -100.0);
  return 100.0 * (value - base) / base;
}

// Each method gets its own simulator built from the same config and seed.
// Deltas are against passive; it is run as a reference if not listed.
inline CompareOutcome compare(const ExperimentConfig& c) {
  if (c.methods.size() < 2) throw ConfigError("methods", "compare needs at least two methods");
  CompareOutcome out;
  std::optional<MetricsRow> passive;
  for (const auto& m : c.methods) {
    const bool bandit = m.kind == PolicyKind::Bandits;
    out.runs.push_back(run_method(c, m, bandit && c.checkpoint_in ? std::optional(load_checkpoint(*c.checkpoint_in))
                                                                  : std::nullopt));
    if (m.kind == PolicyKind::Passive && !passive) passive = out.runs.back().rows.back();
  }
  if (!passive) passive = run_method(c, MethodConfig{}).rows.back();
  for (std::size_t i = 0; i < c.methods.size(); ++i) {
    const auto& last = out.runs[i].rows.back();
    CompareEntry e;
    e.method = std::string(policy_kind_name(c.methods[i].kind));
    e.final_row = last;
    e.vcpu_hours = vcpu_hours(out.runs[i].rows, c.decision_interval_s);
    e.delta_vcpus_pct = pct_delta(static_cast<double>(last.total_vcpus), static_cast<double>(passive->total_vcpus));
    e.delta_mem_pct = pct_delta(static_cast<double>(last.total_mem_mib), static_cast<double>(passive->total_mem_mib));
    e.delta_swapping_pct = pct_delta(last.frac_vms_swapping, passive->frac_vms_swapping);
    out.summary.push_back(e);
  }
  return out;
}

inline void write_summary(std::ostream& out, const std::vector<CompareEntry>& summary) {
  out << "method,total_vcpus,total_mem_mib,frac_vms_swapping,vcpu_hours,delta_vcpus_pct,"
         "delta_mem_pct,delta_swapping_pct\n";
  char buf[512];
  for (const auto& e : summary) {
    std::snprintf(buf, sizeof buf, "%s,%lld,%lld,%.6f,%.3f,%.2f,%.2f,%.2f\n", e.method.c_str(),
                  e.final_row.total_vcpus, e.final_row.total_mem_mib, e.final_row.frac_vms_swapping,
                  e.vcpu_hours, e.delta_vcpus_pct, e.delta_mem_pct, e.delta_swapping_pct);
    out << buf;
  }
}

struct ExplainRow {
  Action action;
  ArmScore score;
};

// Scores every arm for one VM's context. The cluster is advanced under the
// passive policy to the last decision time at or before at_s.
inline std::vector<ExplainRow> explain(const ExperimentConfig& c, const LinUcbModel& model,
                                       const std::string& vm_id, double at_s = 0.0) {
  if (!(at_s >= 0)) throw std::invalid_argument("explain: time must be >= 0");
  Controller ctl(build_simulator(c), std::make_unique<PassivePolicy>(), controller_settings(c));
  const auto idx = ctl.env().vm_index(vm_id);
  while (ctl.env().clock() + c.decision_interval_s <= at_s + 1e-9) ctl.run_round();
  const auto scores = model.predict(ctl.contexts()[idx]);
  std::vector<ExplainRow> rows;
  for (int a = 0; a < Action::kCount; ++a) rows.push_back({Action::from_index(a), scores[a]});
  std::stable_sort(rows.begin(), rows.end(),
                   [](const ExplainRow& l, const ExplainRow& r) { return l.score.score > r.score.score; });
  return rows;
}

inline void write_explain(std::ostream& out, const std::vector<ExplainRow>& rows) {
  out << "action,estimate,width,score\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.9f,%.9f,%.9f\n", r.action.name().c_str(), r.score.estimate,
                  r.score.width, r.score.score);
    out << buf;
  }
}

}  // namespace vmtune
