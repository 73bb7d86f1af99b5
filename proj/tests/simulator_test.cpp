#include "vmtune/simulator.hpp"

#include <random>

#include "gtest/gtest.h"

namespace vmtune {
namespace {

// Water-level oracle for max-min fair sharing: bisect the level L such that
// sum_i min(request_i, L) equals the capacity.
std::vector<double> water_level_oracle(const std::vector<double>& requests, double capacity) {
  double total = 0.0;
  for (double r : requests) total += r;
  if (total <= capacity) return requests;
  double lo = 0.0, hi = *std::max_element(requests.begin(), requests.end());
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    double used = 0.0;
    for (double r : requests) used += std::min(r, mid);
    (used < capacity ? lo : hi) = mid;
  }
  std::vector<double> out;
  for (double r : requests) out.push_back(std::min(r, 0.5 * (lo + hi)));
  return out;
}

NodeSpec small_node() {
  NodeSpec n = default_node("n0");
  n.cores = 4;
  return n;
}

WorkloadPattern static_load(double cpu, double wss, double iops = 0.0) {
  WorkloadPattern p;
  p.kind = WorkloadKind::Static;
  p.cpu_base_ghz = cpu;
  p.wss_base_mib = wss;
  p.io_rate_iops = iops;
  return p;
}

TEST(DemandAt, IncreasingWss) {
  WorkloadPattern p;
  p.kind = WorkloadKind::IncreasingWss;
  p.wss_base_mib = 2048;
  p.wss_step_mib = 512;
  p.wss_step_interval_s = 1200;
  EXPECT_DOUBLE_EQ(demand_at(p, 3600).wss_mib, 3584);
  EXPECT_DOUBLE_EQ(demand_at(p, 1199).wss_mib, 2048);
  EXPECT_DOUBLE_EQ(demand_at(p, 1200).wss_mib, 2560);
}

TEST(DemandAt, PeriodicSquareWave) {
  WorkloadPattern p;
  p.kind = WorkloadKind::PeriodicCpu;
  p.cpu_base_ghz = 1.0;
  p.cpu_amplitude_ghz = 3.0;
  p.period_s = 7200;
  p.duty_fraction = 0.5;
  EXPECT_DOUBLE_EQ(demand_at(p, 1800).cpu_demand_ghz, 4.0);
  EXPECT_DOUBLE_EQ(demand_at(p, 3600).cpu_demand_ghz, 1.0);
  EXPECT_DOUBLE_EQ(demand_at(p, 7200 + 100).cpu_demand_ghz, 4.0);
}

TEST(DemandAt, StaticWithoutNoiseIsConstant) {
  const auto p = static_load(2.0, 1024);
  for (double t : {0.0, 30.0, 12345.0, 86400.0}) EXPECT_DOUBLE_EQ(demand_at(p, t).cpu_demand_ghz, 2.0);
}

TEST(DemandAt, NoiseIsBoundedAndReplayable) {
  auto p = static_load(2.0, 1000, 100);
  p.noise_fraction = 0.1;
  p.seed = 42;
  bool varied = false;
  for (int k = 0; k < 200; ++k) {
    const auto a = demand_at(p, 30.0 * k, 5);
    const auto b = demand_at(p, 30.0 * k, 5);
    EXPECT_EQ(a.cpu_demand_ghz, b.cpu_demand_ghz);
    EXPECT_GE(a.cpu_demand_ghz, 1.8);
    EXPECT_LE(a.cpu_demand_ghz, 2.2);
    EXPECT_GE(a.wss_mib, 900);
    EXPECT_LE(a.wss_mib, 1100);
    varied |= a.cpu_demand_ghz != 2.0;
  }
  EXPECT_TRUE(varied);
  EXPECT_NE(demand_at(p, 30, 5).cpu_demand_ghz, demand_at(p, 30, 6).cpu_demand_ghz);
}

TEST(WorkloadPattern, Validation) {
  WorkloadPattern p;
  p.duty_fraction = 1.5;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.kind = WorkloadKind::PeriodicCpu;
  p.period_s = 0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.cpu_base_ghz = -1;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(ScheduleCpu, Undersubscribed) {
  const auto node = small_node();
  const std::vector<CpuRequest> reqs{{"a", 3.0, 2}, {"b", 3.0, 2}};
  const auto g = schedule_cpu(node, reqs);
  for (const auto& x : g) {
    EXPECT_DOUBLE_EQ(x.granted_ghz, 3.0);
    EXPECT_DOUBLE_EQ(x.ready_fraction, 0.0);
    EXPECT_DOUBLE_EQ(x.granted_ghz / (2 * node.core_ghz), 0.625);
  }
}

TEST(ScheduleCpu, OversubscribedEqualShares) {
  const auto node = small_node();
  const std::vector<CpuRequest> reqs{{"a", 4.8, 2}, {"b", 4.8, 2}, {"c", 4.8, 2}};
  const auto g = schedule_cpu(node, reqs);
  const auto oracle = water_level_oracle({4.8, 4.8, 4.8}, 9.6);
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_NEAR(g[i].granted_ghz, 3.2, 1e-12);
    EXPECT_NEAR(g[i].granted_ghz, oracle[i], 1e-9);
    EXPECT_NEAR(g[i].ready_fraction, 1.0 / 3.0, 1e-12);
  }
}

TEST(ScheduleCpu, VcpuCapBindsFirst) {
  const auto node = small_node();
  const std::vector<CpuRequest> reqs{{"a", 10.0, 2}};
  const auto g = schedule_cpu(node, reqs);
  EXPECT_DOUBLE_EQ(g[0].request_ghz, 4.8);
  EXPECT_DOUBLE_EQ(g[0].granted_ghz, 4.8);
  EXPECT_DOUBLE_EQ(g[0].ready_fraction, 0.0);
  EXPECT_DOUBLE_EQ(g[0].granted_ghz / (2 * node.core_ghz), 1.0);
}

TEST(ScheduleCpu, ZeroDemandHasNoReadyTime) {
  const std::vector<CpuRequest> reqs{{"a", 0.0, 2}};
  EXPECT_EQ(schedule_cpu(small_node(), reqs)[0].ready_fraction, 0.0);
}

TEST(ScheduleCpu, RandomInstancesMatchOracleAndInvariants) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> demand(0.0, 12.0);
  std::uniform_int_distribution<int> vcpus(1, 6), count(1, 10), cores(1, 16);
  for (int trial = 0; trial < 300; ++trial) {
    NodeSpec node = default_node("n");
    node.cores = cores(rng);
    std::vector<CpuRequest> reqs;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) reqs.push_back({"v" + std::to_string(i), demand(rng), vcpus(rng)});
    const auto g = schedule_cpu(node, reqs);
    std::vector<double> caps;
    double total_req = 0, total_granted = 0;
    for (int i = 0; i < n; ++i) {
      caps.push_back(std::min(reqs[i].demand_ghz, reqs[i].vcpus * node.core_ghz));
      total_req += caps.back();
      total_granted += g[i].granted_ghz;
      EXPECT_LE(g[i].granted_ghz, g[i].request_ghz + 1e-12);
      EXPECT_GE(g[i].ready_fraction, 0.0);
      EXPECT_LE(g[i].ready_fraction, 1.0);
    }
    const auto oracle = water_level_oracle(caps, node.capacity_ghz());
    for (int i = 0; i < n; ++i) EXPECT_NEAR(g[i].granted_ghz, oracle[i], 1e-9);
    EXPECT_LE(total_granted, node.capacity_ghz() + 1e-9);
    if (total_req > node.capacity_ghz()) EXPECT_NEAR(total_granted, node.capacity_ghz(), 1e-9);

    // Adding a vCPU to VM 0 never lowers what it receives.
    auto more = reqs;
    more[0].vcpus += 1;
    EXPECT_GE(schedule_cpu(node, more)[0].granted_ghz + 1e-12, g[0].granted_ghz);
  }
}

TEST(ScheduleCpu, FairUnderEqualCaps) {
  const auto node = small_node();
  std::vector<CpuRequest> reqs;
  for (int i = 0; i < 7; ++i) reqs.push_back({"v" + std::to_string(i), 6.0, 4});
  const auto g = schedule_cpu(node, reqs);
  for (const auto& x : g) EXPECT_NEAR(x.granted_ghz, g[0].granted_ghz, 1e-12);
}

TEST(MemoryModel, Examples) {
  auto a = memory_model(4096, 2048, 256);
  EXPECT_DOUBLE_EQ(a.mem_usage, 0.5);
  EXPECT_DOUBLE_EQ(a.swap_rate, 0.0);
  auto b = memory_model(4096, 6144, 256);
  EXPECT_DOUBLE_EQ(b.mem_usage, 1.0);
  EXPECT_DOUBLE_EQ(b.swap_rate, 512.0);
  auto c = memory_model(4096, 4096, 256);
  EXPECT_DOUBLE_EQ(c.mem_usage, 1.0);
  EXPECT_DOUBLE_EQ(c.swap_rate, 0.0);
  EXPECT_THROW(memory_model(0, 1, 256), std::invalid_argument);
}

TEST(MemoryModel, MoreMemoryNeverSwapsMore) {
  for (double wss = 0; wss < 20000; wss += 333)
    for (double mem = 2048; mem < 16000; mem += 512)
      EXPECT_LE(memory_model(mem + 512, wss, 256).swap_rate, memory_model(mem, wss, 256).swap_rate);
}

NodeSpec read_node(double mu) {
  NodeSpec n = default_node("n");
  n.io_service_iops = {mu, mu, mu, mu};
  return n;
}

TEST(IoModel, ClosedFormBelowSaturation) {
  const std::vector<IoOffer> offers{{"a", 6000, IoType::RandRead8k}, {"b", 4000, IoType::RandRead8k}};
  const auto r = io_model(read_node(20000), offers, 0.99, 50);
  EXPECT_DOUBLE_EQ(r.node_latency_ms, 0.1);
  EXPECT_DOUBLE_EQ(r.achieved_iops[0], 6000);
  EXPECT_DOUBLE_EQ(r.achieved_iops[1], 4000);
}

TEST(IoModel, SaturationScalesThroughput) {
  const std::vector<IoOffer> offers{{"a", 15000, IoType::RandRead8k}, {"b", 10000, IoType::RandRead8k}};
  const auto r = io_model(read_node(20000), offers, 0.99, 50);
  EXPECT_DOUBLE_EQ(r.node_latency_ms, 50);
  EXPECT_NEAR(r.achieved_iops[0] + r.achieved_iops[1], 19800, 1e-9);
  EXPECT_NEAR(r.achieved_iops[0], 15000 * 19800.0 / 25000, 1e-9);
}

TEST(IoModel, EmptySystemLatencyIsServiceTime) {
  const std::vector<IoOffer> offers{{"a", 0, IoType::RandRead8k}};
  const auto r = io_model(read_node(20000), offers, 0.99, 50);
  EXPECT_DOUBLE_EQ(r.node_latency_ms, 1000.0 / 20000);
  EXPECT_DOUBLE_EQ(r.achieved_iops[0], 0.0);
}

TEST(IoModel, HarmonicMixOfServiceRates) {
  NodeSpec n = default_node("n");
  n.io_service_iops = {20000, 10000, 18000, 3000};
  const std::vector<IoOffer> offers{{"a", 1000, IoType::RandRead8k}, {"b", 1000, IoType::RandWrite8k}};
  // 1/mu = 0.5/20000 + 0.5/10000
  EXPECT_NEAR(effective_service_rate(n, offers), 1.0 / (0.5 / 20000 + 0.5 / 10000), 1e-9);
}

TEST(IoModel, LatencyMonotoneInLoad) {
  // Unsaturated latency tops out at 1000 / ((1 - rho_max) mu), which stays
  // below the cap whenever mu >= 2000 with the default constants.
  for (double mu : {2000.0, 3000.0, 20000.0, 50000.0}) {
    double prev = 0.0;
    for (double lambda = 0; lambda <= 1.5 * mu; lambda += mu / 97) {
      const std::vector<IoOffer> offers{{"a", lambda, IoType::RandRead8k}};
      const double lat = io_model(read_node(mu), offers, 0.99, 50).node_latency_ms;
      EXPECT_GE(lat + 1e-12, prev);
      prev = lat;
    }
  }
}

Simulator one_vm_sim(const WorkloadPattern& w, const InstanceTypeSpec& type = presets::large()) {
  return Simulator({default_node("n0")}, {make_vm("vm0", "n0", type, "w")}, {{"w", w}});
}

TEST(Simulator, StationaryWorkloadRepeatsMetrics) {
  auto sim = one_vm_sim(static_load(2.0, 1920, 1000));
  const auto s = sim.step(60);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].metrics, s[1].metrics);
  EXPECT_DOUBLE_EQ(s[0].timestamp_s, 30);
  EXPECT_DOUBLE_EQ(s[1].timestamp_s, 60);
  EXPECT_DOUBLE_EQ(sim.clock(), 60);
  EXPECT_NEAR(s[0].metrics.cpu_usage, 2.0 / 4.8, 1e-12);
  EXPECT_DOUBLE_EQ(s[0].metrics.mem_usage, 0.5);
}

TEST(Simulator, StepRejectsFractionalTicks) {
  auto sim = one_vm_sim(static_load(2.0, 1920));
  EXPECT_THROW(sim.step(45), std::invalid_argument);
  EXPECT_THROW(sim.step(0), std::invalid_argument);
}

Simulator noisy_cluster(std::uint64_t seed) {
  std::vector<NodeSpec> nodes{default_node("n0"), default_node("n1")};
  nodes[0].cores = 8;
  std::map<std::string, WorkloadPattern> w;
  auto a = static_load(6.0, 5000, 4000);
  a.noise_fraction = 0.2;
  a.seed = 3;
  WorkloadPattern b;
  b.kind = WorkloadKind::IncreasingWss;
  b.wss_base_mib = 3000;
  b.wss_step_mib = 512;
  b.cpu_base_ghz = 3;
  b.noise_fraction = 0.1;
  b.io_rate_iops = 9000;
  WorkloadPattern c;
  c.kind = WorkloadKind::PeriodicCpu;
  c.cpu_base_ghz = 1;
  c.cpu_amplitude_ghz = 9;
  c.period_s = 1800;
  c.io_rate_iops = 20000;
  c.io_type = IoType::RandWrite8k;
  w = {{"a", a}, {"b", b}, {"c", c}};
  std::vector<VmState> vms;
  for (int i = 0; i < 9; ++i) {
    const char* wl[] = {"a", "b", "c"};
    const auto types = presets::instance_types();
    vms.push_back(make_vm("vm" + std::to_string(i), i % 2 ? "n1" : "n0", types[i % 3], wl[i % 3]));
  }
  return Simulator(nodes, vms, w, SimConstants{}, seed);
}

TEST(Simulator, SplitStepsEqualOneLongStep) {
  auto a = noisy_cluster(1);
  auto b = a;
  auto s1 = a.step(300);
  auto s2 = a.step(300);
  s1.insert(s1.end(), s2.begin(), s2.end());
  EXPECT_EQ(s1, b.step(600));
}

TEST(Simulator, SeedReplayIsBitIdentical) {
  auto a = noisy_cluster(5);
  auto b = noisy_cluster(5);
  auto c = noisy_cluster(6);
  const auto sa = a.step(3000);
  EXPECT_EQ(sa, b.step(3000));
  EXPECT_NE(sa, c.step(3000));
}

TEST(Simulator, MetricsStayInRange) {
  auto sim = noisy_cluster(9);
  for (const auto& s : sim.step(7200)) {
    EXPECT_GE(s.metrics.cpu_usage, 0.0);
    EXPECT_LE(s.metrics.cpu_usage, 1.0);
    EXPECT_GE(s.metrics.cpu_ready, 0.0);
    EXPECT_LE(s.metrics.cpu_ready, 1.0);
    EXPECT_GE(s.metrics.mem_usage, 0.0);
    EXPECT_LE(s.metrics.mem_usage, 1.0);
    EXPECT_GE(s.metrics.swap_rate, 0.0);
    EXPECT_GE(s.metrics.io_latency_ms, 0.0);
  }
}

TEST(Simulator, RejectsDanglingReferences) {
  auto w = static_load(1, 1000);
  EXPECT_THROW(Simulator({default_node("n0")}, {make_vm("v", "nX", presets::large(), "w")}, {{"w", w}}),
               std::invalid_argument);
  EXPECT_THROW(Simulator({default_node("n0")}, {make_vm("v", "n0", presets::large(), "q")}, {{"w", w}}),
               std::invalid_argument);
}

TEST(Simulator, CopiesAreIndependent) {
  auto a = noisy_cluster(2);
  auto b = a;
  b.apply("vm0", {1, 512});
  EXPECT_EQ(a.vm("vm0").vcpus, presets::large().initial_vcpus);
  EXPECT_EQ(b.vm("vm0").vcpus, presets::large().initial_vcpus + 1);
  a.step(30);
  b.step(30);
  EXPECT_NE(a.last_metrics("vm0"), b.last_metrics("vm0"));
}

TEST(Oracle, SwappingVmPrefersMemoryUp) {
  auto sim = one_vm_sim(static_load(2.0, 4300));  // large: 3840 MiB allocated
  sim.observe();
  ASSERT_GT(sim.last_metrics("vm0").swap_rate, 0.0);
  const auto r = oracle_rewards(sim, "vm0");
  const auto best = oracle_best_action(sim, "vm0");
  EXPECT_EQ(best.mem, Direction::Up);
  EXPECT_EQ(r[best.index()], 1);
  // Leaving memory alone or shrinking it keeps the VM swapping: no arm pays.
  for (Action a : all_actions())
    if (a.mem != Direction::Up) EXPECT_EQ(r[a.index()], 0) << a.name();
}

TEST(Oracle, HealthyInBandVmKeepsNoopAmongMaximizers) {
  auto sim = one_vm_sim(static_load(2.4, 1920));  // cpu 0.5, mem 0.5
  sim.observe();
  const auto r = oracle_rewards(sim, "vm0");
  const int best = *std::max_element(r.begin(), r.end());
  EXPECT_EQ(r[Action::noop().index()], best);
  EXPECT_EQ(best, 1);
  // Shrinking to one vCPU would overload the VM.
  EXPECT_EQ(r[(Action{Direction::Down, Direction::Noop}).index()], 0);
}

TEST(Oracle, ContendedVmScalesCpuUp) {
  NodeSpec node = default_node("n0");
  node.cores = 4;
  const auto w = static_load(4.8, 1920);
  std::vector<VmState> vms;
  for (int i = 0; i < 3; ++i) vms.push_back(make_vm("v" + std::to_string(i), "n0", presets::large(), "w"));
  Simulator sim({node}, vms, {{"w", w}});
  sim.observe();
  ASSERT_GT(sim.last_metrics("v0").cpu_ready, 0.0);
  const auto best = oracle_best_action(sim, "v0");
  EXPECT_EQ(best.cpu, Direction::Up);
}

}  // namespace
}  // namespace vmtune
