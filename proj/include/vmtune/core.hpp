#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vmtune {

// Memory is tracked in MiB everywhere inside the library.
using Mib = std::int64_t;

struct InstanceTypeSpec {
  std::string name;
  int initial_vcpus = 1;
  Mib initial_mem_mib = 2048;
  int min_vcpus = 1;
  int max_vcpus = 1;
  Mib min_mem_mib = 2048;
  Mib max_mem_mib = 2048;

  void validate() const {
    if (min_vcpus < 1) throw std::invalid_argument(name + ": min_vcpus must be >= 1");
    if (min_mem_mib < 2048) throw std::invalid_argument(name + ": min_mem_mib must be >= 2048");
    if (!(min_vcpus <= initial_vcpus && initial_vcpus <= max_vcpus))
      throw std::invalid_argument(name + ": vcpus must satisfy min <= initial <= max");
    if (!(min_mem_mib <= initial_mem_mib && initial_mem_mib <= max_mem_mib))
      throw std::invalid_argument(name + ": mem_mib must satisfy min <= initial <= max");
  }
};

namespace presets {

inline InstanceTypeSpec large() { return {"large", 2, 3840, 1, 4, 2048, 7680}; }
inline InstanceTypeSpec xlarge() { return {"xlarge", 4, 7680, 1, 8, 2048, 15360}; }
inline InstanceTypeSpec xlarge2() { return {"2xlarge", 8, 15360, 1, 16, 2048, 30720}; }

inline std::vector<InstanceTypeSpec> instance_types() { return {large(), xlarge(), xlarge2()}; }

}  // namespace presets

enum class IoType : int { RandRead8k = 0, RandWrite8k, RandMixed8k, SeqWrite1m };
inline constexpr int kIoTypeCount = 4;

inline constexpr std::string_view io_type_name(IoType t) {
  switch (t) {
    case IoType::RandRead8k: return "rand_read_8k";
    case IoType::RandWrite8k: return "rand_write_8k";
    case IoType::RandMixed8k: return "rand_mixed_8k";
    case IoType::SeqWrite1m: return "seq_write_1m";
  }
  return "?";
}

inline IoType io_type_from_name(std::string_view s) {
  for (int i = 0; i < kIoTypeCount; ++i) {
    auto t = static_cast<IoType>(i);
    if (io_type_name(t) == s) return t;
  }
  throw std::invalid_argument("unknown io_type '" + std::string(s) + "'");
}

struct NodeSpec {
  std::string node_id;
  int cores = 48;
  double core_ghz = 2.4;
  Mib mem_mib = 512 * 1024;
  // Service rate in IOPS, indexed by IoType.
  std::array<double, kIoTypeCount> io_service_iops{25000.0, 15000.0, 18000.0, 3000.0};

  double capacity_ghz() const { return cores * core_ghz; }
  double service_rate(IoType t) const { return io_service_iops[static_cast<int>(t)]; }

  void validate() const {
    if (cores < 1) throw std::invalid_argument(node_id + ": cores must be >= 1");
    if (!(core_ghz > 0)) throw std::invalid_argument(node_id + ": core_ghz must be > 0");
    if (mem_mib <= 0) throw std::invalid_argument(node_id + ": mem_mib must be > 0");
    for (double r : io_service_iops)
      if (!(r > 0)) throw std::invalid_argument(node_id + ": io service rates must be > 0");
  }
};

// 48 cores at 115.2 GHz total and 512 GiB of RAM.
inline NodeSpec default_node(std::string id) {
  NodeSpec n;
  n.node_id = std::move(id);
  return n;
}

struct VmState {
  std::string vm_id;
  std::string node_id;
  InstanceTypeSpec type;
  int vcpus = 1;
  Mib mem_mib = 2048;
  std::string workload_id;

  bool within_bounds() const {
    return type.min_vcpus <= vcpus && vcpus <= type.max_vcpus && type.min_mem_mib <= mem_mib &&
           mem_mib <= type.max_mem_mib;
  }
};

inline VmState make_vm(std::string vm_id, std::string node_id, const InstanceTypeSpec& type,
                       std::string workload_id) {
  return VmState{std::move(vm_id), std::move(node_id), type, type.initial_vcpus,
                 type.initial_mem_mib, std::move(workload_id)};
}

// Ordered so that DOWN < NOOP < UP compares naturally; the action index uses
// the opposite order (UP first), see Action::index().
enum class Direction : int { Down = -1, Noop = 0, Up = 1 };

inline constexpr std::string_view direction_name(Direction d) {
  switch (d) {
    case Direction::Up: return "UP";
    case Direction::Noop: return "NOOP";
    case Direction::Down: return "DOWN";
  }
  return "?";
}

inline constexpr int direction_slot(Direction d) { return 1 - static_cast<int>(d); }
inline constexpr Direction direction_from_slot(int s) { return static_cast<Direction>(1 - s); }

struct Action {
  Direction cpu = Direction::Noop;
  Direction mem = Direction::Noop;

  static constexpr int kCount = 9;

  constexpr int index() const { return direction_slot(cpu) * 3 + direction_slot(mem); }

  static constexpr Action from_index(int i) {
    if (i < 0 || i >= kCount) throw std::out_of_range("action index out of range");
    return Action{direction_from_slot(i / 3), direction_from_slot(i % 3)};
  }

  static constexpr Action noop() { return {}; }

  std::string name() const {
    return "CPU_" + std::string(direction_name(cpu)) + "_MEM_" + std::string(direction_name(mem));
  }

  friend constexpr bool operator==(Action, Action) = default;
};

inline std::array<Action, Action::kCount> all_actions() {
  std::array<Action, Action::kCount> out{};
  for (int i = 0; i < Action::kCount; ++i) out[i] = Action::from_index(i);
  return out;
}

inline Action action_from_name(std::string_view name) {
  for (Action a : all_actions())
    if (a.name() == name) return a;
  throw std::invalid_argument("unknown action '" + std::string(name) + "'");
}

struct TuningStep {
  int cpu_step = 1;
  Mib mem_step_mib = 512;

  void validate() const {
    if (cpu_step <= 0 || mem_step_mib <= 0)
      throw std::invalid_argument("tuning steps must be > 0");
  }
};

struct AllocationDelta {
  int d_vcpus = 0;
  Mib d_mem_mib = 0;
  friend constexpr bool operator==(const AllocationDelta&, const AllocationDelta&) = default;
};

struct ClampFlags {
  bool cpu = false;
  bool mem = false;
  bool any() const { return cpu || mem; }
  friend constexpr bool operator==(const ClampFlags&, const ClampFlags&) = default;
};

inline AllocationDelta action_to_delta(Action a, const TuningStep& step) {
  return {static_cast<int>(a.cpu) * step.cpu_step, static_cast<int>(a.mem) * step.mem_step_mib};
}

struct ApplyResult {
  VmState vm;
  ClampFlags clamped;
};

inline ApplyResult apply_delta(VmState vm, const AllocationDelta& d) {
  ClampFlags flags;
  const std::int64_t want_cpu = static_cast<std::int64_t>(vm.vcpus) + d.d_vcpus;
  const Mib want_mem = vm.mem_mib + d.d_mem_mib;
  flags.cpu = want_cpu < vm.type.min_vcpus || want_cpu > vm.type.max_vcpus;
  flags.mem = want_mem < vm.type.min_mem_mib || want_mem > vm.type.max_mem_mib;
  vm.vcpus = static_cast<int>(std::clamp<std::int64_t>(want_cpu, vm.type.min_vcpus, vm.type.max_vcpus));
  vm.mem_mib = std::clamp(want_mem, vm.type.min_mem_mib, vm.type.max_mem_mib);
  return {std::move(vm), flags};
}

// Usage band for threshold decisions: above `under` is underprovisioned,
// below `over` is overprovisioned.
struct Thresholds {
  double under = 0.75;
  double over = 0.25;

  void validate() const {
    if (!(0.0 <= over && over < under && under <= 1.0))
      throw std::invalid_argument("thresholds must satisfy 0 <= over < under <= 1");
  }
};

}  // namespace vmtune
