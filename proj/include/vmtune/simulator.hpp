#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vmtune/core.hpp"
#include "vmtune/metrics.hpp"
#include "vmtune/reward.hpp"

namespace vmtune {

// ---------------------------------------------------------------------------
// Deterministic counter-based randomness
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL));
}

inline constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Uniform in [0, 1) from a 64-bit key.
inline constexpr double unit_from_key(std::uint64_t key) {
  return static_cast<double>(splitmix64(key) >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// Workloads
// ---------------------------------------------------------------------------

enum class WorkloadKind { Static, IncreasingWss, PeriodicCpu };

inline constexpr std::string_view workload_kind_name(WorkloadKind k) {
  switch (k) {
    case WorkloadKind::Static: return "static";
    case WorkloadKind::IncreasingWss: return "increasing_wss";
    case WorkloadKind::PeriodicCpu: return "periodic_cpu";
  }
  return "?";
}

inline WorkloadKind workload_kind_from_name(std::string_view s) {
  for (auto k : {WorkloadKind::Static, WorkloadKind::IncreasingWss, WorkloadKind::PeriodicCpu})
    if (workload_kind_name(k) == s) return k;
  throw std::invalid_argument("unknown workload kind '" + std::string(s) + "'");
}

struct WorkloadPattern {
  WorkloadKind kind = WorkloadKind::Static;
  double cpu_base_ghz = 0.0;
  double cpu_amplitude_ghz = 0.0;
  double period_s = 3600.0;
  double duty_fraction = 0.5;
  double wss_base_mib = 2048.0;
  double wss_step_mib = 0.0;
  double wss_step_interval_s = 1200.0;
  double io_rate_iops = 0.0;
  IoType io_type = IoType::RandRead8k;
  double noise_fraction = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    for (double v : {cpu_base_ghz, cpu_amplitude_ghz, wss_base_mib, wss_step_mib, io_rate_iops,
                     noise_fraction})
      if (!(v >= 0.0)) throw std::invalid_argument("workload magnitudes must be >= 0");
    if (!(duty_fraction >= 0.0 && duty_fraction <= 1.0))
      throw std::invalid_argument("duty_fraction must lie in [0, 1]");
    if (kind == WorkloadKind::PeriodicCpu && !(period_s > 0.0))
      throw std::invalid_argument("period_s must be > 0 for periodic_cpu");
    if (kind == WorkloadKind::IncreasingWss && !(wss_step_interval_s > 0.0))
      throw std::invalid_argument("wss_step_interval_s must be > 0 for increasing_wss");
    if (noise_fraction > 1.0) throw std::invalid_argument("noise_fraction must be <= 1");
  }
};

struct Demand {
  double cpu_demand_ghz = 0.0;
  double wss_mib = 0.0;
  double offered_iops = 0.0;
  IoType io_type = IoType::RandRead8k;
};

// `stream` separates the noise of VMs that share a pattern.
inline Demand demand_at(const WorkloadPattern& p, double t, std::uint64_t stream = 0) {
  Demand d;
  d.io_type = p.io_type;
  d.offered_iops = p.io_rate_iops;
  d.cpu_demand_ghz = p.cpu_base_ghz;
  d.wss_mib = p.wss_base_mib;
  switch (p.kind) {
    case WorkloadKind::Static: break;
    case WorkloadKind::IncreasingWss:
      d.wss_mib = p.wss_base_mib + p.wss_step_mib * std::floor(t / p.wss_step_interval_s);
      break;
    case WorkloadKind::PeriodicCpu:
      if (std::fmod(t, p.period_s) < p.duty_fraction * p.period_s)
        d.cpu_demand_ghz = p.cpu_base_ghz + p.cpu_amplitude_ghz;
      break;
  }
  if (p.noise_fraction > 0.0) {
    const auto key = hash_combine(hash_combine(p.seed, stream),
                                  static_cast<std::uint64_t>(std::llround(t)));
    auto factor = [&](std::uint64_t salt) {
      return 1.0 + p.noise_fraction * (2.0 * unit_from_key(hash_combine(key, salt)) - 1.0);
    };
    d.cpu_demand_ghz *= factor(1);
    d.wss_mib *= factor(2);
    d.offered_iops *= factor(3);
  }
  return d;
}

// ---------------------------------------------------------------------------
// CPU: per-node round-robin approximated by max-min fair progressive filling
// ---------------------------------------------------------------------------

struct CpuRequest {
  std::string vm_id;
  double demand_ghz = 0.0;
  int vcpus = 1;
};

struct CpuGrant {
  std::string vm_id;
  double request_ghz = 0.0;  // demand capped by the VM's vCPUs
  double granted_ghz = 0.0;
  double ready_fraction = 0.0;
};

inline std::vector<CpuGrant> schedule_cpu(const NodeSpec& node, std::span<const CpuRequest> reqs) {
  std::vector<CpuGrant> out(reqs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    out[i].vm_id = reqs[i].vm_id;
    out[i].request_ghz = std::min(reqs[i].demand_ghz, reqs[i].vcpus * node.core_ghz);
    total += out[i].request_ghz;
  }
  const double capacity = node.capacity_ghz();
  if (total <= capacity) {
    for (auto& g : out) g.granted_ghz = g.request_ghz;
  } else {
    std::vector<std::size_t> order(out.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return out[a].request_ghz < out[b].request_ghz;
    });
    double remaining = capacity;
    std::size_t left = order.size();
    for (std::size_t idx : order) {
      const double share = remaining / static_cast<double>(left);
      out[idx].granted_ghz = std::min(out[idx].request_ghz, share);
      remaining -= out[idx].granted_ghz;
      --left;
    }
  }
  for (auto& g : out)
    g.ready_fraction = g.request_ghz > 0.0 ? (g.request_ghz - g.granted_ghz) / g.request_ghz : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Memory
// ---------------------------------------------------------------------------

struct MemoryOutcome {
  double mem_usage = 0.0;
  double swap_rate = 0.0;
};

inline MemoryOutcome memory_model(double mem_mib, double wss_mib, double swap_per_deficit_gib) {
  if (!(mem_mib > 0.0)) throw std::invalid_argument("memory_model: mem_mib must be > 0");
  return {std::min(wss_mib, mem_mib) / mem_mib,
          std::max(0.0, (wss_mib - mem_mib) / 1024.0) * swap_per_deficit_gib};
}

// ---------------------------------------------------------------------------
// I/O: one M/M/1 server per node
// ---------------------------------------------------------------------------

struct IoOffer {
  std::string vm_id;
  double iops = 0.0;
  IoType io_type = IoType::RandRead8k;
};

struct IoOutcome {
  double service_rate = 0.0;  // effective mu
  double node_latency_ms = 0.0;
  std::vector<double> achieved_iops;  // parallel to the offers
};

// Effective service rate: harmonic mean of the per-type rates weighted by the
// offered mix. With nothing offered the offers (or, failing that, every type)
// are weighted equally.
inline double effective_service_rate(const NodeSpec& node, std::span<const IoOffer> offered) {
  const double lambda = std::accumulate(offered.begin(), offered.end(), 0.0,
                                        [](double s, const IoOffer& o) { return s + o.iops; });
  double inv = 0.0;
  if (lambda > 0.0) {
    std::array<double, kIoTypeCount> load{};
    for (const auto& o : offered) load[static_cast<int>(o.io_type)] += o.iops;
    // A single-type mix is served at exactly that type's rate.
    if (std::count_if(load.begin(), load.end(), [](double l) { return l > 0.0; }) == 1)
      for (int k = 0; k < kIoTypeCount; ++k)
        if (load[k] > 0.0) return node.io_service_iops[k];
    for (int k = 0; k < kIoTypeCount; ++k) inv += (load[k] / lambda) / node.io_service_iops[k];
  } else if (!offered.empty()) {
    for (const auto& o : offered) inv += 1.0 / node.service_rate(o.io_type);
    inv /= static_cast<double>(offered.size());
  } else {
    for (double r : node.io_service_iops) inv += 1.0 / r;
    inv /= static_cast<double>(kIoTypeCount);
  }
  return 1.0 / inv;
}

inline IoOutcome io_model(const NodeSpec& node, std::span<const IoOffer> offered, double rho_max,
                          double latency_cap_ms) {
  IoOutcome out;
  out.service_rate = effective_service_rate(node, offered);
  const double lambda = std::accumulate(offered.begin(), offered.end(), 0.0,
                                        [](double s, const IoOffer& o) { return s + o.iops; });
  out.achieved_iops.reserve(offered.size());
  if (lambda <= rho_max * out.service_rate) {
    out.node_latency_ms = 1000.0 / (out.service_rate - lambda);
    for (const auto& o : offered) out.achieved_iops.push_back(o.iops);
  } else {
    const double scale = rho_max * out.service_rate / lambda;
    out.node_latency_ms = latency_cap_ms;
    for (const auto& o : offered) out.achieved_iops.push_back(o.iops * scale);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cluster environment
// ---------------------------------------------------------------------------

struct SimConstants {
  double tick_s = 30.0;
  double swap_rate_per_deficit_gib = 256.0;
  double swap_latency_penalty_ms_per_page_s = 0.01;
  double rho_max = 0.99;
  double latency_cap_ms = 50.0;

  void validate() const {
    if (!(tick_s > 0)) throw std::invalid_argument("tick_s must be > 0");
    if (!(swap_rate_per_deficit_gib >= 0)) throw std::invalid_argument("swap rate must be >= 0");
    if (!(swap_latency_penalty_ms_per_page_s >= 0))
      throw std::invalid_argument("swap latency penalty must be >= 0");
    if (!(rho_max > 0 && rho_max < 1)) throw std::invalid_argument("rho_max must lie in (0, 1)");
    if (!(latency_cap_ms > 0)) throw std::invalid_argument("latency_cap_ms must be > 0");
  }
};

// Discrete-time cluster. Single writer; copy it to branch a what-if.
class Simulator {
 public:
  Simulator(std::vector<NodeSpec> nodes, std::vector<VmState> vms,
            std::map<std::string, WorkloadPattern> workloads, SimConstants constants = {},
            std::uint64_t seed = 0)
      : nodes_(std::move(nodes)),
        vms_(std::move(vms)),
        workloads_(std::move(workloads)),
        constants_(constants),
        seed_(seed) {
    constants_.validate();
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      nodes_[i].validate();
      if (!node_index_.emplace(nodes_[i].node_id, i).second)
        throw std::invalid_argument("duplicate node id '" + nodes_[i].node_id + "'");
    }
    vm_node_.reserve(vms_.size());
    vm_pattern_.reserve(vms_.size());
    vm_stream_.reserve(vms_.size());
    for (std::size_t i = 0; i < vms_.size(); ++i) {
      const auto& vm = vms_[i];
      if (!vm.within_bounds())
        throw std::invalid_argument("vm '" + vm.vm_id + "' allocation outside its bounds");
      if (!vm_index_.emplace(vm.vm_id, i).second)
        throw std::invalid_argument("duplicate vm id '" + vm.vm_id + "'");
      auto n = node_index_.find(vm.node_id);
      if (n == node_index_.end())
        throw std::invalid_argument("vm '" + vm.vm_id + "' refers to unknown node '" +
                                    vm.node_id + "'");
      auto w = workloads_.find(vm.workload_id);
      if (w == workloads_.end())
        throw std::invalid_argument("vm '" + vm.vm_id + "' refers to unknown workload '" +
                                    vm.workload_id + "'");
      w->second.validate();
      vm_node_.push_back(n->second);
      vm_pattern_.push_back(&w->second);
      vm_stream_.push_back(hash_combine(seed_, fnv1a(vm.vm_id)));
    }
    last_.resize(vms_.size());
  }

  Simulator(const Simulator& o) { *this = o; }
  Simulator& operator=(const Simulator& o) {
    if (this == &o) return *this;
    nodes_ = o.nodes_;
    vms_ = o.vms_;
    workloads_ = o.workloads_;
    constants_ = o.constants_;
    seed_ = o.seed_;
    ticks_ = o.ticks_;
    node_index_ = o.node_index_;
    vm_index_ = o.vm_index_;
    vm_node_ = o.vm_node_;
    vm_stream_ = o.vm_stream_;
    last_ = o.last_;
    rebind_patterns();
    return *this;
  }
  Simulator(Simulator&&) = default;
  Simulator& operator=(Simulator&&) = default;

  double clock() const { return static_cast<double>(ticks_) * constants_.tick_s; }
  std::uint64_t seed() const { return seed_; }
  const SimConstants& constants() const { return constants_; }
  const std::vector<NodeSpec>& nodes() const { return nodes_; }
  const std::vector<VmState>& vms() const { return vms_; }
  const std::map<std::string, WorkloadPattern>& workloads() const { return workloads_; }

  std::size_t vm_index(std::string_view vm_id) const {
    auto it = vm_index_.find(std::string(vm_id));
    if (it == vm_index_.end()) throw std::out_of_range("unknown vm '" + std::string(vm_id) + "'");
    return it->second;
  }
  const VmState& vm(std::string_view vm_id) const { return vms_[vm_index(vm_id)]; }
  const NodeSpec& node_of(std::size_t vm_idx) const { return nodes_[vm_node_[vm_idx]]; }
  std::size_t node_index_of(std::size_t vm_idx) const { return vm_node_[vm_idx]; }

  // Metrics from the most recent observe() or step() tick.
  const VmInstantMetrics& last_metrics(std::size_t vm_idx) const { return last_[vm_idx]; }
  const VmInstantMetrics& last_metrics(std::string_view vm_id) const {
    return last_[vm_index(vm_id)];
  }

  ClampFlags apply(std::string_view vm_id, const AllocationDelta& delta) {
    auto& vm = vms_[vm_index(vm_id)];
    auto res = apply_delta(vm, delta);
    vm = std::move(res.vm);
    return res.clamped;
  }

  // Samples the cluster at the current clock without advancing it.
  std::vector<TelemetrySample> observe() {
    std::vector<TelemetrySample> out;
    out.reserve(vms_.size());
    evaluate(clock(), out);
    return out;
  }

  // Advances by dt (a positive multiple of tick_s), one sample per VM per tick.
  std::vector<TelemetrySample> step(double dt) {
    const double ratio = dt / constants_.tick_s;
    const auto n = std::llround(ratio);
    if (n <= 0 || std::abs(ratio - static_cast<double>(n)) > 1e-9)
      throw std::invalid_argument("step: dt must be a positive multiple of tick_s");
    std::vector<TelemetrySample> out;
    out.reserve(vms_.size() * static_cast<std::size_t>(n));
    for (long long k = 0; k < n; ++k) {
      ++ticks_;
      evaluate(clock(), out);
    }
    return out;
  }

 private:
  void rebind_patterns() {
    vm_pattern_.clear();
    for (const auto& vm : vms_) vm_pattern_.push_back(&workloads_.at(vm.workload_id));
  }

  void evaluate(double t, std::vector<TelemetrySample>& out) {
    const std::size_t n_vms = vms_.size();
    std::vector<Demand> demand(n_vms);
    for (std::size_t i = 0; i < n_vms; ++i) demand[i] = demand_at(*vm_pattern_[i], t, vm_stream_[i]);

    std::vector<VmInstantMetrics> m(n_vms);
    std::vector<std::vector<std::size_t>> members(nodes_.size());
    for (std::size_t i = 0; i < n_vms; ++i) members[vm_node_[i]].push_back(i);

    for (std::size_t ni = 0; ni < nodes_.size(); ++ni) {
      const auto& node = nodes_[ni];
      const auto& idx = members[ni];
      std::vector<CpuRequest> reqs;
      std::vector<IoOffer> offers;
      reqs.reserve(idx.size());
      offers.reserve(idx.size());
      for (std::size_t i : idx) {
        reqs.push_back({vms_[i].vm_id, demand[i].cpu_demand_ghz, vms_[i].vcpus});
        offers.push_back({vms_[i].vm_id, demand[i].offered_iops, demand[i].io_type});
      }
      const auto grants = schedule_cpu(node, reqs);
      const auto io = io_model(node, offers, constants_.rho_max, constants_.latency_cap_ms);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const std::size_t i = idx[k];
        const auto& vm = vms_[i];
        auto& vm_m = m[i];
        vm_m.cpu_usage = std::clamp(grants[k].granted_ghz / (vm.vcpus * node.core_ghz), 0.0, 1.0);
        vm_m.cpu_ready = std::clamp(grants[k].ready_fraction, 0.0, 1.0);
        const auto mem = memory_model(static_cast<double>(vm.mem_mib), demand[i].wss_mib,
                                      constants_.swap_rate_per_deficit_gib);
        vm_m.mem_usage = mem.mem_usage;
        vm_m.swap_rate = mem.swap_rate;
        vm_m.achieved_iops = io.achieved_iops[k];
        vm_m.io_latency_ms =
            io.node_latency_ms + constants_.swap_latency_penalty_ms_per_page_s * mem.swap_rate;
      }
    }
    for (std::size_t i = 0; i < n_vms; ++i) {
      last_[i] = m[i];
      out.push_back({vms_[i].vm_id, t, m[i]});
    }
  }

  std::vector<NodeSpec> nodes_;
  std::vector<VmState> vms_;
  std::map<std::string, WorkloadPattern> workloads_;
  SimConstants constants_;
  std::uint64_t seed_ = 0;
  std::int64_t ticks_ = 0;

  std::unordered_map<std::string, std::size_t> node_index_;
  std::unordered_map<std::string, std::size_t> vm_index_;
  std::vector<std::size_t> vm_node_;
  std::vector<const WorkloadPattern*> vm_pattern_;
  std::vector<std::uint64_t> vm_stream_;
  std::vector<VmInstantMetrics> last_;
};

// ---------------------------------------------------------------------------
// Brute-force oracle used for regret diagnostics
// ---------------------------------------------------------------------------

struct OracleSettings {
  TuningStep step;
  double decision_interval_s = 300.0;
  Thresholds band;
  BadCriteria bad;
};

// Reward each of the nine actions would earn for `vm_id` if applied alone to
// a copy of `sim` and the copy advanced one decision interval.
inline std::array<int, Action::kCount> oracle_rewards(const Simulator& sim, std::string_view vm_id,
                                                      const OracleSettings& cfg = {}) {
  const std::size_t idx = sim.vm_index(vm_id);
  const auto prev = reward_context(sim.last_metrics(idx), cfg.bad);
  std::array<int, Action::kCount> rewards{};
  for (Action a : all_actions()) {
    Simulator branch = sim;
    const auto clamped = branch.apply(vm_id, action_to_delta(a, cfg.step));
    branch.step(cfg.decision_interval_s);
    const auto next = classify(branch.last_metrics(idx), cfg.bad);
    rewards[a.index()] = compute_reward(prev, a, next, clamped, cfg.band);
  }
  return rewards;
}

inline Action oracle_best_action(const Simulator& sim, std::string_view vm_id,
                                 const OracleSettings& cfg = {}) {
  const auto r = oracle_rewards(sim, vm_id, cfg);
  return Action::from_index(static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin()));
}

}  // namespace vmtune
