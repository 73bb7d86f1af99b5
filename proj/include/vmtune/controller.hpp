#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "vmtune/bandit.hpp"
#include "vmtune/core.hpp"
#include "vmtune/policies.hpp"
#include "vmtune/reward.hpp"
#include "vmtune/sensing.hpp"
#include "vmtune/simulator.hpp"

namespace vmtune {

// ---------------------------------------------------------------------------
// Filtering
// ---------------------------------------------------------------------------

enum class Resource { Cpu, Mem };
enum class Comparator { Greater, GreaterEqual, Less, LessEqual };

inline Resource resource_from_name(std::string_view s) {
  if (s == "cpu") return Resource::Cpu;
  if (s == "mem") return Resource::Mem;
  throw std::invalid_argument("unknown resource '" + std::string(s) + "'");
}

inline Comparator comparator_from_name(std::string_view s) {
  if (s == ">") return Comparator::Greater;
  if (s == ">=") return Comparator::GreaterEqual;
  if (s == "<") return Comparator::Less;
  if (s == "<=") return Comparator::LessEqual;
  throw std::invalid_argument("unknown comparator '" + std::string(s) + "'");
}

inline bool compare(double lhs, Comparator c, double rhs) {
  switch (c) {
    case Comparator::Greater: return lhs > rhs;
    case Comparator::GreaterEqual: return lhs >= rhs;
    case Comparator::Less: return lhs < rhs;
    case Comparator::LessEqual: return lhs <= rhs;
  }
  return false;
}

struct FilterAll {};
struct FilterRandomFraction {
  double p = 1.0;
  std::uint64_t seed = 0;
};
struct FilterUsageThreshold {
  Resource resource = Resource::Cpu;
  Comparator comparator = Comparator::Greater;
  double value = 0.0;
};
// Metric is a context feature index (feature::CpuUsage, feature::Swap, ...).
struct FilterTopK {
  int metric = feature::CpuUsage;
  std::size_t k = 1;
};

using FilterStrategy = std::variant<FilterAll, FilterRandomFraction, FilterUsageThreshold, FilterTopK>;

inline void validate(const FilterStrategy& f) {
  if (const auto* r = std::get_if<FilterRandomFraction>(&f); r && !(r->p > 0.0 && r->p <= 1.0))
    throw std::invalid_argument("random_fraction: p must lie in (0, 1]");
  if (const auto* t = std::get_if<FilterTopK>(&f)) {
    if (t->k < 1) throw std::invalid_argument("top_k: k must be >= 1");
    if (t->metric < 0 || t->metric >= kContextDim)
      throw std::invalid_argument("top_k: unknown metric");
  }
}

// Selects the VMs tuned this round; returns ascending indices into `contexts`.
inline std::vector<std::size_t> filter(const FilterStrategy& strategy,
                                       const std::vector<ContextVector>& contexts,
                                       std::uint64_t round_index = 0) {
  const std::size_t n = contexts.size();
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});

  return std::visit(
      [&](const auto& s) -> std::vector<std::size_t> {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, FilterAll>) {
          return all;
        } else if constexpr (std::is_same_v<S, FilterRandomFraction>) {
          const auto take = static_cast<std::size_t>(std::llround(s.p * static_cast<double>(n)));
          const std::uint64_t key = hash_combine(s.seed, round_index);
          for (std::size_t i = n; i > 1; --i) {
            const auto j = static_cast<std::size_t>(splitmix64(hash_combine(key, i)) % i);
            std::swap(all[i - 1], all[j]);
          }
          all.resize(std::min(take, n));
          std::sort(all.begin(), all.end());
          return all;
        } else if constexpr (std::is_same_v<S, FilterUsageThreshold>) {
          const int f = s.resource == Resource::Cpu ? feature::CpuUsage : feature::MemUsage;
          std::vector<std::size_t> out;
          for (std::size_t i : all)
            if (compare(contexts[i][f], s.comparator, s.value)) out.push_back(i);
          return out;
        } else {
          std::stable_sort(all.begin(), all.end(), [&](std::size_t a, std::size_t b) {
            return contexts[a][s.metric] > contexts[b][s.metric];
          });
          all.resize(std::min(s.k, n));
          std::sort(all.begin(), all.end());
          return all;
        }
      },
      strategy);
}

// ---------------------------------------------------------------------------
// Decision service
// ---------------------------------------------------------------------------

struct ForceScaleUp {
  Resource resource = Resource::Cpu;
  double threshold = 0.9;
};

struct DomainRules {
  TuningStep step;
  std::optional<ForceScaleUp> force_scale_up;

  void validate(const Thresholds& band) const {
    step.validate();
    if (force_scale_up && !(force_scale_up->threshold > band.under))
      throw std::invalid_argument("force_scale_up threshold must exceed the under threshold");
  }
};

struct Decision {
  Action action;
  bool overridden = false;
};

inline Decision apply_domain_rules(Action base, const DomainRules& rules, double cpu_usage,
                                   double mem_usage) {
  Decision d{base, false};
  if (const auto& f = rules.force_scale_up) {
    const double usage = f->resource == Resource::Cpu ? cpu_usage : mem_usage;
    Direction& dir = f->resource == Resource::Cpu ? d.action.cpu : d.action.mem;
    if (usage >= f->threshold && dir != Direction::Up) {
      dir = Direction::Up;
      d.overridden = true;
    }
  }
  return d;
}

// Highest score wins (lowest index on ties), then domain rules apply.
// Clamping to instance bounds happens at execution.
inline Decision decide(const ArmScores& scores, const VmState& /*vm*/, const DomainRules& rules,
                       double cpu_usage, double mem_usage) {
  return apply_domain_rules(Action::from_index(argmax_score(scores)), rules, cpu_usage, mem_usage);
}

// ---------------------------------------------------------------------------
// Regret
// ---------------------------------------------------------------------------

struct RegretTracker {
  double chosen_sum = 0.0;
  double oracle_sum = 0.0;
  std::uint64_t rounds = 0;

  double regret() const { return oracle_sum - chosen_sum; }
};

inline RegretTracker track_regret(RegretTracker t, const std::vector<int>& chosen,
                                  const std::vector<int>& oracle) {
  if (chosen.size() != oracle.size())
    throw std::invalid_argument("track_regret: reward vectors differ in length");
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    if (oracle[i] < chosen[i])
      throw std::logic_error("track_regret: oracle reward below chosen reward");
    t.chosen_sum += chosen[i];
    t.oracle_sum += oracle[i];
  }
  ++t.rounds;
  return t;
}

// ---------------------------------------------------------------------------
// Policies behind one interface
// ---------------------------------------------------------------------------

struct PolicyInput {
  std::size_t vm_index = 0;
  const VmState* vm = nullptr;
  const ContextVector* context = nullptr;
  const VmInstantMetrics* last = nullptr;
};

struct PolicyChoice {
  Action action;
  std::optional<ArmScores> scores;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual PolicyKind kind() const = 0;
  virtual PolicyChoice choose(const PolicyInput& in) = 0;
  // Feedback for one filtered VM whose action executed.
  virtual void learn(const ContextVector& /*x*/, Action /*a*/, int /*reward*/) {}
  // Called once per round after rewards, with the contexts the round started from.
  virtual void end_round(const Simulator& /*env*/, const Sensing& /*sensing*/,
                         const std::vector<ContextVector>& /*decision_contexts*/,
                         double /*decision_time_s*/) {}
};

class PassivePolicy final : public Policy {
 public:
  PolicyKind kind() const override { return PolicyKind::Passive; }
  PolicyChoice choose(const PolicyInput&) override { return {Action::noop(), std::nullopt}; }
};

class ReactivePolicy final : public Policy {
 public:
  explicit ReactivePolicy(Thresholds th = {}) : th_(th) { th_.validate(); }
  PolicyKind kind() const override { return PolicyKind::Reactive; }
  PolicyChoice choose(const PolicyInput& in) override {
    return {reactive_action(in.last->cpu_usage, in.last->mem_usage, th_), std::nullopt};
  }

 private:
  Thresholds th_;
};

class ProactivePolicy final : public Policy {
 public:
  explicit ProactivePolicy(Thresholds th = {}, ProactiveSettings s = {})
      : th_(th), state_(kContextDim, s) {
    th_.validate();
  }
  PolicyKind kind() const override { return PolicyKind::Proactive; }
  PolicyChoice choose(const PolicyInput& in) override {
    return {proactive_action(*in.context, state_.cpu, state_.mem, th_, state_.warmed()),
            std::nullopt};
  }
  void end_round(const Simulator& env, const Sensing& sensing,
                 const std::vector<ContextVector>& decision_contexts,
                 double decision_time_s) override {
    for (std::size_t i = 0; i < env.vms().size(); ++i)
      state_.lag.push(env.vms()[i].vm_id, decision_contexts[i], decision_time_s);
    state_.train(harvest_targets(state_.lag, sensing.store(), env.clock()));
  }
  const ProactiveState& state() const { return state_; }

 private:
  Thresholds th_;
  ProactiveState state_;
};

class BanditPolicy final : public Policy {
 public:
  explicit BanditPolicy(LinUcbModel model) : model_(std::move(model)) {}
  PolicyKind kind() const override { return PolicyKind::Bandits; }
  PolicyChoice choose(const PolicyInput& in) override {
    auto scores = model_.predict(*in.context);
    return {Action::from_index(argmax_score(scores)), scores};
  }
  void learn(const ContextVector& x, Action a, int reward) override {
    model_.learn(x, a, static_cast<double>(reward));
  }
  void end_round(const Simulator&, const Sensing&, const std::vector<ContextVector>&,
                 double) override {
    model_.count_round();
  }
  const LinUcbModel& model() const { return model_; }

 private:
  LinUcbModel model_;
};

// ---------------------------------------------------------------------------
// Execution service
// ---------------------------------------------------------------------------

// Narrow port to whatever applies allocation changes. Returns nullopt when the
// change could not be executed.
class ExecutionService {
 public:
  virtual ~ExecutionService() = default;
  virtual std::optional<ClampFlags> execute(Simulator& env, const std::string& vm_id,
                                            const AllocationDelta& delta) = 0;
};

class SimulatorExecution final : public ExecutionService {
 public:
  std::optional<ClampFlags> execute(Simulator& env, const std::string& vm_id,
                                    const AllocationDelta& delta) override {
    return env.apply(vm_id, delta);
  }
};

// ---------------------------------------------------------------------------
// Controller loop
// ---------------------------------------------------------------------------

struct ControllerSettings {
  DomainRules rules;
  FilterStrategy filter = FilterAll{};
  Thresholds band;
  BadCriteria bad;
  double decision_interval_s = 300.0;
  bool track_regret = false;
};

struct VmRoundRecord {
  std::string vm_id;
  ContextVector context;
  Action base_action;
  Action action;
  bool overridden = false;
  ClampFlags clamped;
  bool failed = false;
  int reward = 0;
  std::optional<ArmScores> scores;
};

struct RoundResult {
  std::uint64_t round = 0;
  double time_s = 0.0;
  std::vector<VmRoundRecord> records;
};

class Controller {
 public:
  Controller(Simulator env, std::unique_ptr<Policy> policy, ControllerSettings settings,
             std::unique_ptr<ExecutionService> exec = nullptr)
      : env_(std::move(env)),
        sensing_(3600.0, FeatureScales{env_.constants().latency_cap_ms}),
        policy_(std::move(policy)),
        exec_(exec ? std::move(exec) : std::make_unique<SimulatorExecution>()),
        settings_(std::move(settings)) {
    if (!policy_) throw std::invalid_argument("controller needs a policy");
    settings_.band.validate();
    settings_.rules.validate(settings_.band);
    validate(settings_.filter);
    const double ticks = settings_.decision_interval_s / env_.constants().tick_s;
    if (!(ticks >= 1.0) || std::abs(ticks - std::round(ticks)) > 1e-9)
      throw std::invalid_argument("decision_interval_s must be a positive multiple of tick_s");
    const auto first = env_.observe();
    sensing_.ingest(first);
    contexts_ = sensing_.sense(env_);
  }

  RoundResult run_round() {
    RoundResult result;
    result.round = round_;
    const auto selected = filter(settings_.filter, contexts_, round_);

    std::vector<RewardContext> prev;
    prev.reserve(selected.size());
    for (std::size_t i : selected) {
      const auto& vm = env_.vms()[i];
      const auto& last = env_.last_metrics(i);
      auto choice = policy_->choose({i, &vm, &contexts_[i], &last});
      const auto d = apply_domain_rules(choice.action, settings_.rules, last.cpu_usage,
                                        last.mem_usage);
      VmRoundRecord rec;
      rec.vm_id = vm.vm_id;
      rec.context = contexts_[i];
      rec.base_action = choice.action;
      rec.action = d.action;
      rec.overridden = d.overridden;
      rec.scores = std::move(choice.scores);
      result.records.push_back(std::move(rec));
      prev.push_back(reward_context(last, settings_.bad));
    }

    if (settings_.track_regret) {
      const OracleSettings oc{settings_.rules.step, settings_.decision_interval_s, settings_.band,
                              settings_.bad};
      std::vector<int> chosen, oracle;
      for (const auto& rec : result.records) {
        const auto r = oracle_rewards(env_, rec.vm_id, oc);
        chosen.push_back(r[rec.action.index()]);
        oracle.push_back(*std::max_element(r.begin(), r.end()));
      }
      regret_ = track_regret(regret_, chosen, oracle);
    }

    for (auto& rec : result.records) {
      auto clamped = exec_->execute(env_, rec.vm_id, action_to_delta(rec.action, settings_.rules.step));
      if (clamped) rec.clamped = *clamped;
      else rec.failed = true;
    }

    const double decision_time = env_.clock();
    const auto samples = env_.step(settings_.decision_interval_s);
    sensing_.ingest(samples);
    auto next_contexts = sensing_.sense(env_);

    for (std::size_t k = 0; k < selected.size(); ++k) {
      auto& rec = result.records[k];
      if (rec.failed) continue;
      const auto next = classify(env_.last_metrics(selected[k]), settings_.bad);
      rec.reward = compute_reward(prev[k], rec.action, next, rec.clamped, settings_.band);
      cumulative_reward_ += rec.reward;
      policy_->learn(rec.context, rec.action, rec.reward);
    }
    policy_->end_round(env_, sensing_, contexts_, decision_time);

    contexts_ = std::move(next_contexts);
    ++round_;
    result.time_s = env_.clock();
    return result;
  }

  const Simulator& env() const { return env_; }
  const Sensing& sensing() const { return sensing_; }
  const Policy& policy() const { return *policy_; }
  const ControllerSettings& settings() const { return settings_; }
  const std::vector<ContextVector>& contexts() const { return contexts_; }
  std::uint64_t rounds() const { return round_; }
  double cumulative_reward() const { return cumulative_reward_; }
  const RegretTracker& regret() const { return regret_; }

 private:
  Simulator env_;
  Sensing sensing_;
  std::unique_ptr<Policy> policy_;
  std::unique_ptr<ExecutionService> exec_;
  ControllerSettings settings_;
  std::vector<ContextVector> contexts_;
  std::uint64_t round_ = 0;
  double cumulative_reward_ = 0.0;
  RegretTracker regret_;
};

}  // namespace vmtune
