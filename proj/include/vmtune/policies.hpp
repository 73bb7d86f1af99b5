#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "vmtune/core.hpp"
#include "vmtune/sensing.hpp"

namespace vmtune {

enum class PolicyKind { Passive, Reactive, Proactive, Bandits };

inline constexpr std::string_view policy_kind_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::Passive: return "passive";
    case PolicyKind::Reactive: return "reactive";
    case PolicyKind::Proactive: return "proactive";
    case PolicyKind::Bandits: return "bandits";
  }
  return "?";
}

inline PolicyKind policy_kind_from_name(std::string_view s) {
  for (auto k : {PolicyKind::Passive, PolicyKind::Reactive, PolicyKind::Proactive,
                 PolicyKind::Bandits})
    if (policy_kind_name(k) == s) return k;
  throw std::invalid_argument("unknown method '" + std::string(s) + "'");
}

// Strictly above `under` scales up, strictly below `over` scales down.
inline Direction threshold_direction(double usage, const Thresholds& th) {
  if (usage > th.under) return Direction::Up;
  if (usage < th.over) return Direction::Down;
  return Direction::Noop;
}

inline std::map<std::string, Action> passive_decide(const std::vector<VmState>& vms) {
  std::map<std::string, Action> out;
  for (const auto& vm : vms) out.emplace(vm.vm_id, Action::noop());
  return out;
}

struct UsageReading {
  std::string vm_id;
  double cpu_usage = 0.0;
  double mem_usage = 0.0;
};

inline Action reactive_action(double cpu_usage, double mem_usage, const Thresholds& th) {
  return {threshold_direction(cpu_usage, th), threshold_direction(mem_usage, th)};
}

inline std::map<std::string, Action> reactive_decide(const std::vector<UsageReading>& usages,
                                                     const Thresholds& th) {
  std::map<std::string, Action> out;
  for (const auto& u : usages) out.emplace(u.vm_id, reactive_action(u.cpu_usage, u.mem_usage, th));
  return out;
}

// Linear model trained by plain SGD on squared loss with an l2 penalty.
struct OnlineLinearRegressor {
  Eigen::VectorXd weights;
  double learning_rate = 0.01;
  double l2_coeff = 1e-4;
  std::uint64_t n_steps = 0;

  OnlineLinearRegressor() = default;
  OnlineLinearRegressor(int d, double lr, double l2)
      : weights(Eigen::VectorXd::Zero(d)), learning_rate(lr), l2_coeff(l2) {}

  double predict(const ContextVector& x) const { return weights.dot(x); }
};

inline OnlineLinearRegressor sgd_update(OnlineLinearRegressor reg, const ContextVector& x,
                                        double y) {
  if (x.size() != reg.weights.size())
    throw std::invalid_argument("sgd_update: dimension mismatch");
  const double residual = reg.weights.dot(x) - y;
  reg.weights -= reg.learning_rate * (residual * x + reg.l2_coeff * reg.weights);
  ++reg.n_steps;
  return reg;
}

inline Action proactive_action(const ContextVector& x, const OnlineLinearRegressor& cpu,
                               const OnlineLinearRegressor& mem, const Thresholds& th,
                               bool warmed) {
  if (!warmed) return Action::noop();
  const double pc = std::clamp(cpu.predict(x), 0.0, 1.0);
  const double pm = std::clamp(mem.predict(x), 0.0, 1.0);
  return {threshold_direction(pc, th), threshold_direction(pm, th)};
}

inline std::map<std::string, Action> proactive_decide(
    const std::vector<std::pair<std::string, ContextVector>>& contexts,
    const OnlineLinearRegressor& cpu, const OnlineLinearRegressor& mem, const Thresholds& th,
    bool warmed) {
  std::map<std::string, Action> out;
  for (const auto& [id, x] : contexts) out.emplace(id, proactive_action(x, cpu, mem, th, warmed));
  return out;
}

struct PendingPair {
  std::string vm_id;
  ContextVector x;
  double decision_time_s = 0.0;
};

struct TrainingPair {
  std::string vm_id;
  ContextVector x;
  double y_cpu = 0.0;
  double y_mem = 0.0;
};

// Contexts waiting for the realised max usage over the following horizon.
struct LagBuffer {
  double horizon_s = 600.0;
  std::deque<PendingPair> pending;

  void push(std::string vm_id, ContextVector x, double t) {
    pending.push_back({std::move(vm_id), std::move(x), t});
  }
};

// Emits every pair whose horizon (t, t + horizon] has fully elapsed by `now`.
// Pairs without any sample in their window are dropped.
inline std::vector<TrainingPair> harvest_targets(LagBuffer& lag, const TelemetryStore& telemetry,
                                                 double now) {
  std::vector<TrainingPair> out;
  std::deque<PendingPair> keep;
  for (auto& p : lag.pending) {
    const double end = p.decision_time_s + lag.horizon_s;
    if (end > now) {
      keep.push_back(std::move(p));
      continue;
    }
    double max_cpu = -1.0, max_mem = -1.0;
    for (const auto& s : telemetry.samples(p.vm_id)) {
      if (s.timestamp_s > p.decision_time_s && s.timestamp_s <= end) {
        max_cpu = std::max(max_cpu, s.metrics.cpu_usage);
        max_mem = std::max(max_mem, s.metrics.mem_usage);
      }
    }
    if (max_cpu >= 0.0) out.push_back({std::move(p.vm_id), std::move(p.x), max_cpu, max_mem});
  }
  lag.pending = std::move(keep);
  return out;
}

struct ProactiveSettings {
  double learning_rate = 0.01;
  double l2_coeff = 1e-4;
  std::uint64_t warmup_min_pairs = 24;
  double horizon_s = 600.0;
};

// Per-experiment proactive state: two regressors plus the lag buffer.
struct ProactiveState {
  OnlineLinearRegressor cpu;
  OnlineLinearRegressor mem;
  LagBuffer lag;
  ProactiveSettings settings;
  std::uint64_t pairs_seen = 0;

  explicit ProactiveState(int d = kContextDim, ProactiveSettings s = {})
      : cpu(d, s.learning_rate, s.l2_coeff),
        mem(d, s.learning_rate, s.l2_coeff),
        lag{s.horizon_s, {}},
        settings(s) {}

  bool warmed() const { return pairs_seen >= settings.warmup_min_pairs; }

  void train(const std::vector<TrainingPair>& pairs) {
    for (const auto& p : pairs) {
      cpu = sgd_update(std::move(cpu), p.x, p.y_cpu);
      mem = sgd_update(std::move(mem), p.x, p.y_mem);
      ++pairs_seen;
    }
  }
};

}  // namespace vmtune
