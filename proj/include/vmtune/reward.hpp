#pragma once

#include "vmtune/core.hpp"
#include "vmtune/metrics.hpp"

namespace vmtune {

// Cut-offs that make a VM "bad".
struct BadCriteria {
  double cpu_usage = 0.95;
  double cpu_ready = 0.05;
};

struct GoodBadState {
  bool swapping = false;
  bool cpu_overloaded = false;

  bool bad() const { return swapping || cpu_overloaded; }
};

inline GoodBadState classify(const VmInstantMetrics& m, const BadCriteria& c = {}) {
  return {m.swap_rate > 0.0, m.cpu_usage >= c.cpu_usage || m.cpu_ready >= c.cpu_ready};
}

// What the reward needs to know about the VM before the action was taken.
struct RewardContext {
  GoodBadState state;
  double cpu_usage = 0.0;
  double mem_usage = 0.0;
};

inline RewardContext reward_context(const VmInstantMetrics& m, const BadCriteria& c = {}) {
  return {classify(m, c), m.cpu_usage, m.mem_usage};
}

namespace detail {

inline int component_reward(Direction d, bool prev_bad, bool next_bad, double usage,
                            const Thresholds& band) {
  switch (d) {
    case Direction::Down: return next_bad ? 0 : 1;
    case Direction::Up: return prev_bad ? 1 : 0;
    case Direction::Noop: return (usage >= band.over && usage <= band.under) ? 1 : 0;
  }
  return 0;
}

}  // namespace detail

// Binary reward for one VM and one round. Rules, in priority order:
//   1. a direction refused by hard bounds earns nothing;
//   2. bad -> good earns 1 regardless of the action;
//   3. good -> bad earns 0;
//   4. otherwise each resource is scored on its own and the minimum is taken:
//      DOWN pays when the VM ends up good, UP pays when the VM started bad,
//      NOOP pays when that resource's usage sits inside [over, under].
inline int compute_reward(const RewardContext& prev, Action a, const GoodBadState& next,
                          const ClampFlags& clamped, const Thresholds& band = {}) {
  if (clamped.any()) return 0;
  const bool prev_bad = prev.state.bad();
  const bool next_bad = next.bad();
  if (prev_bad && !next_bad) return 1;
  if (!prev_bad && next_bad) return 0;
  const int cpu = detail::component_reward(a.cpu, prev_bad, next_bad, prev.cpu_usage, band);
  const int mem = detail::component_reward(a.mem, prev_bad, next_bad, prev.mem_usage, band);
  return std::min(cpu, mem);
}

}  // namespace vmtune
