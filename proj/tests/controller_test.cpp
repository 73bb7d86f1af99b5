#include "vmtune/controller.hpp"

#include <set>

#include "gtest/gtest.h"

namespace vmtune {
namespace {

RewardContext prev_state(bool swapping, bool overloaded, double cpu = 0.5, double mem = 0.5) {
  return {{swapping, overloaded}, cpu, mem};
}

TEST(Reward, Examples) {
  const Action mem_up{Direction::Noop, Direction::Up};
  const Action mem_down{Direction::Noop, Direction::Down};
  const Action cpu_down{Direction::Down, Direction::Noop};
  EXPECT_EQ(compute_reward(prev_state(true, false), mem_up, {false, false}, {}), 1);
  EXPECT_EQ(compute_reward(prev_state(false, false), mem_down, {true, false}, {}), 0);
  EXPECT_EQ(compute_reward(prev_state(false, false, 0.15, 0.5), cpu_down, {false, false}, {}), 1);
}

TEST(Reward, ClampedIsAlwaysZero) {
  for (Action a : all_actions())
    for (bool pb : {false, true})
      for (bool nb : {false, true}) {
        EXPECT_EQ(compute_reward(prev_state(pb, false), a, {nb, false}, {true, true}), 0);
        EXPECT_EQ(compute_reward(prev_state(pb, false), a, {nb, false}, {true, false}), 0);
      }
}

TEST(Reward, NoopOutsideBandEarnsNothing) {
  EXPECT_EQ(compute_reward(prev_state(false, false, 0.9, 0.5), Action::noop(), {}, {}), 0);
  EXPECT_EQ(compute_reward(prev_state(false, false, 0.1, 0.5), Action::noop(), {}, {}), 0);
  EXPECT_EQ(compute_reward(prev_state(false, false, 0.75, 0.25), Action::noop(), {}, {}), 1);
}

TEST(GoodBad, Classification) {
  VmInstantMetrics m;
  EXPECT_FALSE(classify(m).bad());
  m.swap_rate = 0.1;
  EXPECT_TRUE(classify(m).swapping);
  m = {};
  m.cpu_usage = 0.95;
  EXPECT_TRUE(classify(m).cpu_overloaded);
  m = {};
  m.cpu_ready = 0.05;
  EXPECT_TRUE(classify(m).cpu_overloaded);
  m.cpu_ready = 0.049;
  EXPECT_FALSE(classify(m).bad());
}

std::vector<ContextVector> contexts_with_usage(const std::vector<std::pair<double, double>>& u) {
  std::vector<ContextVector> out;
  for (auto [c, m] : u) {
    ContextVector x = ContextVector::Zero(kContextDim);
    x[feature::CpuUsage] = c;
    x[feature::MemUsage] = m;
    out.push_back(x);
  }
  return out;
}

TEST(Filter, All) {
  std::vector<std::pair<double, double>> u(36, {0.5, 0.5});
  EXPECT_EQ(filter(FilterAll{}, contexts_with_usage(u)).size(), 36u);
}

TEST(Filter, RandomFractionIsDeterministic) {
  std::vector<std::pair<double, double>> u(36, {0.5, 0.5});
  const auto ctx = contexts_with_usage(u);
  const FilterRandomFraction f{0.5, 99};
  const auto a = filter(f, ctx, 3), b = filter(f, ctx, 3);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 18u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 18u);
  bool differs = false;
  for (std::uint64_t r = 4; r < 10 && !differs; ++r) differs = filter(f, ctx, r) != a;
  EXPECT_TRUE(differs);
}

TEST(Filter, UsageThreshold) {
  const auto ctx = contexts_with_usage({{0.8, 0.1}, {0.6, 0.9}});
  EXPECT_EQ(filter(FilterUsageThreshold{Resource::Cpu, Comparator::Greater, 0.75}, ctx),
            (std::vector<std::size_t>{0}));
  EXPECT_EQ(filter(FilterUsageThreshold{Resource::Mem, Comparator::GreaterEqual, 0.9}, ctx),
            (std::vector<std::size_t>{1}));
}

TEST(Filter, TopKBreaksTiesByOrder) {
  const auto ctx = contexts_with_usage({{0.3, 0}, {0.9, 0}, {0.3, 0}, {0.9, 0}, {0.1, 0}});
  EXPECT_EQ(filter(FilterTopK{feature::CpuUsage, 3}, ctx), (std::vector<std::size_t>{0, 1, 3}));
  EXPECT_THROW(validate(FilterStrategy{FilterTopK{feature::CpuUsage, 0}}), std::invalid_argument);
  EXPECT_THROW(validate(FilterStrategy{FilterRandomFraction{0.0, 1}}), std::invalid_argument);
}

ArmScores flat_scores(double v = 1.0) {
  ArmScores s{};
  for (auto& x : s) x = {v, 0.0, v};
  return s;
}

TEST(Decide, PicksUniqueMax) {
  auto s = flat_scores();
  const auto target = action_from_name("CPU_NOOP_MEM_UP");
  s[target.index()].score = 2.0;
  const auto vm = make_vm("v", "n", presets::large(), "w");
  const auto d = decide(s, vm, DomainRules{}, 0.5, 0.5);
  EXPECT_EQ(d.action, target);
  EXPECT_FALSE(d.overridden);
}

TEST(Decide, TiesGoToLowestIndex) {
  const auto vm = make_vm("v", "n", presets::large(), "w");
  EXPECT_EQ(decide(flat_scores(), vm, DomainRules{}, 0.5, 0.5).action.index(), 0);
}

TEST(Decide, ForcedScaleUpOverridesModel) {
  auto s = flat_scores();
  s[action_from_name("CPU_DOWN_MEM_NOOP").index()].score = 3.0;
  DomainRules rules;
  rules.force_scale_up = ForceScaleUp{Resource::Cpu, 0.90};
  const auto vm = make_vm("v", "n", presets::large(), "w");
  const auto d = decide(s, vm, rules, 0.93, 0.5);
  EXPECT_EQ(d.action.name(), "CPU_UP_MEM_NOOP");
  EXPECT_TRUE(d.overridden);
  EXPECT_FALSE(decide(s, vm, rules, 0.85, 0.5).overridden);
  rules.force_scale_up->threshold = 0.7;
  EXPECT_THROW(rules.validate(Thresholds{}), std::invalid_argument);
}

TEST(Regret, Sums) {
  RegretTracker t;
  t = track_regret(t, {1, 0, 1}, {1, 0, 1});
  EXPECT_EQ(t.regret(), 0.0);
  RegretTracker u;
  for (int i = 0; i < 10; ++i) u = track_regret(u, {0}, {1});
  EXPECT_EQ(u.regret(), 10.0);
  EXPECT_EQ(u.rounds, 10u);
  EXPECT_THROW(track_regret(u, {1}, {0}), std::logic_error);
}

WorkloadPattern static_load(double cpu, double wss) {
  WorkloadPattern p;
  p.cpu_base_ghz = cpu;
  p.wss_base_mib = wss;
  p.io_rate_iops = 500;
  return p;
}

Simulator mixed_cluster(int n = 12) {
  std::vector<VmState> vms;
  const auto types = presets::instance_types();
  const char* wl[] = {"idle", "busy", "swap"};
  for (int i = 0; i < n; ++i)
    vms.push_back(make_vm("vm" + std::to_string(i), i % 2 ? "n1" : "n0", types[i % 3], wl[i % 3]));
  return Simulator({default_node("n0"), default_node("n1")}, vms,
                   {{"idle", static_load(0.5, 1500)}, {"busy", static_load(9.0, 3000)},
                    {"swap", static_load(8.0, 17000)}});
}

TEST(Controller, PassiveNeverChangesAllocations) {
  Controller c(mixed_cluster(), std::make_unique<PassivePolicy>(), {});
  const auto before = c.env().vms();
  for (int r = 0; r < 20; ++r) c.run_round();
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(c.env().vms()[i].vcpus, before[i].vcpus);
    EXPECT_EQ(c.env().vms()[i].mem_mib, before[i].mem_mib);
  }
  EXPECT_DOUBLE_EQ(c.env().clock(), 20 * 300.0);
}

// Counts learn() calls while delegating to a real bandit.
class CountingBandit final : public Policy {
 public:
  explicit CountingBandit(int* calls) : inner_(LinUcbModel(kContextDim, 0.5, 0.01)), calls_(calls) {}
  PolicyKind kind() const override { return PolicyKind::Bandits; }
  PolicyChoice choose(const PolicyInput& in) override { return inner_.choose(in); }
  void learn(const ContextVector& x, Action a, int r) override {
    ++*calls_;
    inner_.learn(x, a, r);
  }

 private:
  BanditPolicy inner_;
  int* calls_;
};

TEST(Controller, BanditLearnsOncePerFilteredVm) {
  int calls = 0;
  ControllerSettings s;
  Controller c(mixed_cluster(), std::make_unique<CountingBandit>(&calls), s);
  const auto r = c.run_round();
  EXPECT_EQ(calls, 12);
  EXPECT_EQ(r.records.size(), 12u);
  for (const auto& rec : r.records) {
    ASSERT_TRUE(rec.scores.has_value());
    EXPECT_TRUE(rec.reward == 0 || rec.reward == 1);
  }
}

TEST(Controller, RewardsOnlyForFilteredSubset) {
  int calls = 0;
  ControllerSettings s;
  s.filter = FilterRandomFraction{0.5, 17};
  Controller c(mixed_cluster(), std::make_unique<CountingBandit>(&calls), s);
  const auto expected = filter(s.filter, c.contexts(), 0);
  const auto r = c.run_round();
  ASSERT_EQ(r.records.size(), 6u);
  EXPECT_EQ(calls, 6);
  for (std::size_t k = 0; k < expected.size(); ++k)
    EXPECT_EQ(r.records[k].vm_id, c.env().vms()[expected[k]].vm_id);
}

TEST(Controller, AllocationsStayInBoundsUnderAnyPolicy) {
  for (auto make : std::vector<std::function<std::unique_ptr<Policy>()>>{
           [] { return std::make_unique<ReactivePolicy>(); },
           [] { return std::make_unique<ProactivePolicy>(); },
           [] { return std::make_unique<BanditPolicy>(LinUcbModel(kContextDim, 0.5, 0.01)); }}) {
    Controller c(mixed_cluster(), make(), {});
    for (int r = 0; r < 40; ++r) {
      c.run_round();
      for (const auto& vm : c.env().vms()) ASSERT_TRUE(vm.within_bounds()) << vm.vm_id;
    }
  }
}

TEST(Controller, ReactiveScalesDownIdleVms) {
  Controller c(mixed_cluster(), std::make_unique<ReactivePolicy>(), {});
  const int before = c.env().vms()[0].vcpus;  // idle large VM
  c.run_round();
  EXPECT_EQ(c.env().vms()[0].vcpus, before - 1);
}

class FailingExecution final : public ExecutionService {
 public:
  std::optional<ClampFlags> execute(Simulator& env, const std::string& vm_id,
                                    const AllocationDelta& d) override {
    if (vm_id == "vm1") return std::nullopt;
    return env.apply(vm_id, d);
  }
};

TEST(Controller, ExecutionFailureSkipsLearningForThatVm) {
  int calls = 0;
  Controller c(mixed_cluster(), std::make_unique<CountingBandit>(&calls), {},
               std::make_unique<FailingExecution>());
  const auto r = c.run_round();
  EXPECT_EQ(calls, 11);
  int failed = 0;
  for (const auto& rec : r.records) {
    if (rec.failed) {
      ++failed;
      EXPECT_EQ(rec.vm_id, "vm1");
      EXPECT_EQ(rec.reward, 0);
    }
  }
  EXPECT_EQ(failed, 1);
  EXPECT_EQ(c.env().vm("vm1").vcpus, presets::xlarge().initial_vcpus);
}

TEST(Controller, RegretIsNonNegativeAndNonDecreasing) {
  ControllerSettings s;
  s.track_regret = true;
  Controller c(mixed_cluster(6), std::make_unique<BanditPolicy>(LinUcbModel(kContextDim, 0.5, 0.01)), s);
  double prev = 0.0;
  for (int r = 0; r < 15; ++r) {
    c.run_round();
    EXPECT_GE(c.regret().regret(), prev);
    prev = c.regret().regret();
  }
  EXPECT_EQ(c.regret().rounds, 15u);
  EXPECT_GE(c.regret().oracle_sum, c.regret().chosen_sum);
}

TEST(Controller, PassiveOnHealthyInBandClusterHasZeroRegret) {
  // Every VM sits at 50% usage for both resources; NOOP earns the maximum.
  std::vector<VmState> vms;
  for (int i = 0; i < 4; ++i) vms.push_back(make_vm("v" + std::to_string(i), "n0", presets::large(), "w"));
  Simulator sim({default_node("n0")}, vms, {{"w", static_load(2.4, 1920)}});
  ControllerSettings s;
  s.track_regret = true;
  Controller c(sim, std::make_unique<PassivePolicy>(), s);
  for (int r = 0; r < 10; ++r) c.run_round();
  EXPECT_EQ(c.regret().regret(), 0.0);
  EXPECT_EQ(c.regret().chosen_sum, 40.0);
}

TEST(Controller, RejectsIntervalNotMultipleOfTick) {
  ControllerSettings s;
  s.decision_interval_s = 45;
  EXPECT_THROW(Controller(mixed_cluster(), std::make_unique<PassivePolicy>(), s), std::invalid_argument);
}

}  // namespace
}  // namespace vmtune
