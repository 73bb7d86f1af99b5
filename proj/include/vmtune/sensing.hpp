#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "vmtune/core.hpp"
#include "vmtune/metrics.hpp"
#include "vmtune/simulator.hpp"

namespace vmtune {

using ContextVector = Eigen::VectorXd;

// Context layout. Bump kLayoutVersion whenever the order or meaning changes;
// checkpoints refuse to load across versions.
inline constexpr int kContextDim = 26;
inline constexpr int kLayoutVersion = 1;

namespace feature {
enum : int {
  Bias = 0,
  VcpuFraction,
  MemFraction,
  CpuUsage,
  MemUsage,
  CpuMean,
  CpuMax,
  CpuP95,
  MemMean,
  MemMax,
  MemP95,
  Swap,
  CpuReady,
  Latency,
  Iops,
  TypeLarge,
  TypeXlarge,
  Type2xlarge,
  NodeCpuUsage,
  NodeMemUsage,
  NodeCpuOvercommit,
  NodeMemOvercommit,
  ClusterCpuUsage,
  ClusterMemUsage,
  DaySin,
  DayCos,
  Count
};
static_assert(Count == kContextDim);

inline constexpr std::array<std::string_view, Count> kNames{
    "bias",           "vcpu_fraction",   "mem_fraction",        "cpu_usage",
    "mem_usage",      "cpu_mean",        "cpu_max",             "cpu_p95",
    "mem_mean",       "mem_max",         "mem_p95",             "swap",
    "cpu_ready",      "latency",         "iops",                "type_large",
    "type_xlarge",    "type_2xlarge",    "node_cpu_usage",      "node_mem_usage",
    "node_cpu_overcommit", "node_mem_overcommit", "cluster_cpu_usage", "cluster_mem_usage",
    "day_sin",        "day_cos"};

inline int from_name(std::string_view s) {
  for (int i = 0; i < Count; ++i)
    if (kNames[i] == s) return i;
  throw std::invalid_argument("unknown feature '" + std::string(s) + "'");
}
}  // namespace feature

class OrderingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Nearest-rank percentile: the ceil(q*n)-th smallest value.
inline double percentile(std::span<const double> samples, double q) {
  if (samples.empty()) throw std::invalid_argument("percentile of an empty series");
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("percentile: q must lie in (0, 1]");
  std::vector<double> v(samples.begin(), samples.end());
  const auto n = v.size();
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(rank - 1), v.end());
  return v[rank - 1];
}

struct SeriesStats {
  double mean = 0.0;
  double max = 0.0;
  double min = 0.0;
  double p95 = 0.0;
};

struct RollingStats {
  SeriesStats cpu;
  SeriesStats mem;
  std::size_t count = 0;
};

inline SeriesStats series_stats(std::span<const double> v) {
  SeriesStats s;
  if (v.empty()) return s;
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  s.min = *lo;
  s.max = *hi;
  double sum = 0.0;
  for (double x : v) sum += x;
  // Keep mean inside [min, max] despite rounding.
  s.mean = std::clamp(sum / static_cast<double>(v.size()), s.min, s.max);
  s.p95 = percentile(v, 0.95);
  return s;
}

// Trailing per-VM telemetry window.
class TelemetryStore {
 public:
  explicit TelemetryStore(double horizon_s = 3600.0) : horizon_s_(horizon_s) {}

  double horizon_s() const { return horizon_s_; }

  void ingest(const TelemetrySample& sample) {
    auto& q = series_[sample.vm_id];
    if (!q.empty() && !(sample.timestamp_s > q.back().timestamp_s))
      throw OrderingError("telemetry for '" + sample.vm_id + "' must have increasing timestamps");
    q.push_back(sample);
    const double cutoff = sample.timestamp_s - horizon_s_;
    while (!q.empty() && q.front().timestamp_s < cutoff) q.pop_front();
  }

  void ingest(std::span<const TelemetrySample> samples) {
    for (const auto& s : samples) ingest(s);
  }

  std::size_t size(const std::string& vm_id) const {
    auto it = series_.find(vm_id);
    return it == series_.end() ? 0 : it->second.size();
  }

  const std::deque<TelemetrySample>& samples(const std::string& vm_id) const {
    static const std::deque<TelemetrySample> empty;
    auto it = series_.find(vm_id);
    return it == series_.end() ? empty : it->second;
  }

  RollingStats stats(const std::string& vm_id) const {
    const auto& q = samples(vm_id);
    std::vector<double> cpu, mem;
    cpu.reserve(q.size());
    mem.reserve(q.size());
    for (const auto& s : q) {
      cpu.push_back(s.metrics.cpu_usage);
      mem.push_back(s.metrics.mem_usage);
    }
    return {series_stats(cpu), series_stats(mem), q.size()};
  }

 private:
  double horizon_s_;
  std::unordered_map<std::string, std::deque<TelemetrySample>> series_;
};

struct NodeContext {
  double cpu_usage = 0.0;
  double mem_usage = 0.0;
  double cpu_overcommit = 0.0;
  double mem_overcommit = 0.0;
};
using ClusterContext = NodeContext;

namespace detail {
struct UsageTotals {
  double cpu_used_ghz = 0, cpu_cap_ghz = 0, cpu_alloc_ghz = 0;
  double mem_used_mib = 0, mem_cap_mib = 0, mem_alloc_mib = 0;

  NodeContext to_context() const {
    NodeContext c;
    c.cpu_usage = cpu_cap_ghz > 0 ? std::clamp(cpu_used_ghz / cpu_cap_ghz, 0.0, 1.0) : 0.0;
    c.mem_usage = mem_cap_mib > 0 ? std::clamp(mem_used_mib / mem_cap_mib, 0.0, 1.0) : 0.0;
    c.cpu_overcommit = cpu_cap_ghz > 0 ? cpu_alloc_ghz / cpu_cap_ghz : 0.0;
    c.mem_overcommit = mem_cap_mib > 0 ? mem_alloc_mib / mem_cap_mib : 0.0;
    return c;
  }
};
}  // namespace detail

struct ClusterView {
  std::vector<NodeContext> nodes;  // indexed like Simulator::nodes()
  ClusterContext cluster;
};

// Aggregates the simulator's last tick into node- and cluster-level context.
inline ClusterView cluster_view(const Simulator& sim) {
  std::vector<detail::UsageTotals> per_node(sim.nodes().size());
  for (std::size_t ni = 0; ni < sim.nodes().size(); ++ni) {
    per_node[ni].cpu_cap_ghz = sim.nodes()[ni].capacity_ghz();
    per_node[ni].mem_cap_mib = static_cast<double>(sim.nodes()[ni].mem_mib);
  }
  for (std::size_t i = 0; i < sim.vms().size(); ++i) {
    const auto& vm = sim.vms()[i];
    const auto& node = sim.node_of(i);
    const auto& m = sim.last_metrics(i);
    auto& t = per_node[sim.node_index_of(i)];
    const double alloc_ghz = vm.vcpus * node.core_ghz;
    t.cpu_alloc_ghz += alloc_ghz;
    t.cpu_used_ghz += m.cpu_usage * alloc_ghz;
    t.mem_alloc_mib += static_cast<double>(vm.mem_mib);
    t.mem_used_mib += m.mem_usage * static_cast<double>(vm.mem_mib);
  }
  ClusterView view;
  detail::UsageTotals all;
  for (const auto& t : per_node) {
    view.nodes.push_back(t.to_context());
    all.cpu_used_ghz += t.cpu_used_ghz;
    all.cpu_cap_ghz += t.cpu_cap_ghz;
    all.cpu_alloc_ghz += t.cpu_alloc_ghz;
    all.mem_used_mib += t.mem_used_mib;
    all.mem_cap_mib += t.mem_cap_mib;
    all.mem_alloc_mib += t.mem_alloc_mib;
  }
  view.cluster = all.to_context();
  return view;
}

struct FeatureScales {
  double latency_cap_ms = 50.0;
  double swap_full_scale = 1000.0;  // pages/s mapped to 1.0
  double overcommit_full_scale = 4.0;
};

inline ContextVector build_context(const VmState& vm, const RollingStats& stats,
                                   const VmInstantMetrics& last, const NodeContext& node,
                                   const ClusterContext& cluster, double clock_s,
                                   double io_service_rate, const FeatureScales& scales = {}) {
  if (stats.count == 0) throw std::invalid_argument("build_context needs at least one sample");
  auto unit = [](double v) { return std::clamp(v, 0.0, 1.0); };
  ContextVector x = ContextVector::Zero(kContextDim);
  using namespace feature;
  x[Bias] = 1.0;
  x[VcpuFraction] = unit(static_cast<double>(vm.vcpus) / vm.type.max_vcpus);
  x[MemFraction] = unit(static_cast<double>(vm.mem_mib) / static_cast<double>(vm.type.max_mem_mib));
  x[CpuUsage] = unit(last.cpu_usage);
  x[MemUsage] = unit(last.mem_usage);
  x[CpuMean] = unit(stats.cpu.mean);
  x[CpuMax] = unit(stats.cpu.max);
  x[CpuP95] = unit(stats.cpu.p95);
  x[MemMean] = unit(stats.mem.mean);
  x[MemMax] = unit(stats.mem.max);
  x[MemP95] = unit(stats.mem.p95);
  x[Swap] = unit(last.swap_rate / scales.swap_full_scale);
  x[CpuReady] = unit(last.cpu_ready);
  x[Latency] = unit(last.io_latency_ms / scales.latency_cap_ms);
  x[Iops] = io_service_rate > 0 ? unit(last.achieved_iops / io_service_rate) : 0.0;
  if (vm.type.name == "large") x[TypeLarge] = 1.0;
  else if (vm.type.name == "xlarge") x[TypeXlarge] = 1.0;
  else if (vm.type.name == "2xlarge") x[Type2xlarge] = 1.0;
  x[NodeCpuUsage] = unit(node.cpu_usage);
  x[NodeMemUsage] = unit(node.mem_usage);
  x[NodeCpuOvercommit] = unit(node.cpu_overcommit / scales.overcommit_full_scale);
  x[NodeMemOvercommit] = unit(node.mem_overcommit / scales.overcommit_full_scale);
  x[ClusterCpuUsage] = unit(cluster.cpu_usage);
  x[ClusterMemUsage] = unit(cluster.mem_usage);
  const double phase = 2.0 * std::numbers::pi * clock_s / 86400.0;
  x[DaySin] = std::sin(phase);
  x[DayCos] = std::cos(phase);
  return x;
}

// Sensing service: owns the telemetry window and turns it into contexts.
class Sensing {
 public:
  explicit Sensing(double horizon_s = 3600.0, FeatureScales scales = {})
      : store_(horizon_s), scales_(scales) {}

  void ingest(std::span<const TelemetrySample> samples) { store_.ingest(samples); }
  const TelemetryStore& store() const { return store_; }
  const FeatureScales& scales() const { return scales_; }

  // One context per VM, in Simulator::vms() order.
  std::vector<ContextVector> sense(const Simulator& sim) const {
    const auto view = cluster_view(sim);
    std::vector<ContextVector> out;
    out.reserve(sim.vms().size());
    for (std::size_t i = 0; i < sim.vms().size(); ++i) out.push_back(context_for(sim, view, i));
    return out;
  }

  ContextVector context_for(const Simulator& sim, const ClusterView& view, std::size_t i) const {
    const auto& vm = sim.vms()[i];
    const auto& node = sim.node_of(i);
    const auto io_type = sim.workloads().at(vm.workload_id).io_type;
    return build_context(vm, store_.stats(vm.vm_id), sim.last_metrics(i),
                         view.nodes[sim.node_index_of(i)], view.cluster, sim.clock(),
                         node.service_rate(io_type), scales_);
  }

 private:
  TelemetryStore store_;
  FeatureScales scales_;
};

}  // namespace vmtune
