#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vmtune/controller.hpp"
#include "vmtune/core.hpp"
#include "vmtune/policies.hpp"
#include "vmtune/simulator.hpp"

namespace vmtune {

// Raised for malformed experiment configs; path() names the offending field,
// e.g. "vm_groups[2].count".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& msg)
      : std::runtime_error((path.empty() ? std::string("config") : path) + ": " + msg),
        path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct NodeGroup {
  std::string id;
  int count = 1;
  NodeSpec spec;
};

struct VmGroup {
  std::string name;
  int count = 1;
  std::string instance_type;
  std::string workload;
  std::optional<int> initial_vcpus;
  std::optional<Mib> initial_mem_mib;
};

struct MethodConfig {
  PolicyKind kind = PolicyKind::Passive;
  double alpha = 0.5;
  double lambda = 0.01;
  ProactiveSettings proactive;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  double duration_s = 0.0;
  double decision_interval_s = 300.0;
  SimConstants simulator;
  std::map<std::string, InstanceTypeSpec> instance_types;
  std::vector<NodeGroup> nodes;
  std::map<std::string, WorkloadPattern> workloads;
  std::vector<VmGroup> vm_groups;
  std::vector<MethodConfig> methods;  // "method" gives one entry, "methods" a list
  FilterStrategy filter = FilterAll{};
  DomainRules rules;
  Thresholds thresholds;
  BadCriteria bad;
  bool track_regret = false;
  std::optional<std::string> checkpoint_in;
  std::optional<std::string> checkpoint_out;
  std::optional<std::string> metrics_out;

  const MethodConfig& method() const { return methods.front(); }
  std::size_t rounds() const {
    return static_cast<std::size_t>(std::floor(duration_s / decision_interval_s + 1e-9));
  }
};

namespace detail {

using nlohmann::json;

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

// Reads fields of one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& at(const std::string& key) {
    if (!has(key)) throw ConfigError(join(path_, key), "missing required field");
    return j_.at(key);
  }

  template <class T>
  T get(const std::string& key) {
    const json& v = at(key);
    return convert<T>(v, join(path_, key));
  }

  template <class T>
  T get_or(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return convert<T>(j_.at(key), join(path_, key));
  }

  std::string path(const std::string& key) const { return join(path_, key); }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(join(path_, k), "unknown key");
  }

  template <class T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path, "expected a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path, "expected a string");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
      if (std::is_unsigned_v<T> && v.get<std::int64_t>() < 0 && !v.is_number_unsigned())
        throw ConfigError(path, "expected a non-negative integer");
    } else {
      if (!v.is_number()) throw ConfigError(path, "expected a number");
    }
    return v.get<T>();
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Runs f and rewraps domain validation errors with the field path.
template <class F>
auto at_path(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path, e.what());
  }
}

inline const json& array_at(ObjectReader& r, const std::string& key) {
  const json& v = r.at(key);
  if (!v.is_array()) throw ConfigError(r.path(key), "expected an array");
  return v;
}

inline std::string index_path(const std::string& base, std::size_t i) {
  return base + "[" + std::to_string(i) + "]";
}

inline InstanceTypeSpec parse_instance_type(const json& j, const std::string& path,
                                            const std::string& name) {
  ObjectReader r(j, path);
  InstanceTypeSpec t;
  t.name = name;
  t.initial_vcpus = r.get<int>("initial_vcpus");
  t.initial_mem_mib = r.get<Mib>("initial_mem_mib");
  t.min_vcpus = r.get<int>("min_vcpus");
  t.max_vcpus = r.get<int>("max_vcpus");
  t.min_mem_mib = r.get<Mib>("min_mem_mib");
  t.max_mem_mib = r.get<Mib>("max_mem_mib");
  r.finish();
  at_path(path, [&] { t.validate(); return 0; });
  return t;
}

inline NodeGroup parse_node(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  NodeGroup g;
  g.id = r.get<std::string>("id");
  g.count = r.get_or<int>("count", 1);
  if (g.count < 1) throw ConfigError(r.path("count"), "must be >= 1");
  g.spec = default_node(g.id);
  g.spec.cores = r.get_or<int>("cores", g.spec.cores);
  g.spec.core_ghz = r.get_or<double>("core_ghz", g.spec.core_ghz);
  g.spec.mem_mib = r.get_or<Mib>("mem_mib", g.spec.mem_mib);
  if (r.has("io_service_iops")) {
    ObjectReader io(j.at("io_service_iops"), r.path("io_service_iops"));
    for (int k = 0; k < kIoTypeCount; ++k) {
      const auto t = static_cast<IoType>(k);
      const std::string key(io_type_name(t));
      g.spec.io_service_iops[k] = io.get_or<double>(key, g.spec.io_service_iops[k]);
    }
    io.finish();
  }
  r.finish();
  at_path(path, [&] { g.spec.validate(); return 0; });
  return g;
}

inline WorkloadPattern parse_workload(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  WorkloadPattern p;
  p.kind = at_path(r.path("kind"), [&] { return workload_kind_from_name(r.get<std::string>("kind")); });
  p.cpu_base_ghz = r.get_or("cpu_base_ghz", p.cpu_base_ghz);
  p.cpu_amplitude_ghz = r.get_or("cpu_amplitude_ghz", p.cpu_amplitude_ghz);
  p.period_s = r.get_or("period_s", p.period_s);
  p.duty_fraction = r.get_or("duty_fraction", p.duty_fraction);
  p.wss_base_mib = r.get_or("wss_base_mib", p.wss_base_mib);
  p.wss_step_mib = r.get_or("wss_step_mib", p.wss_step_mib);
  p.wss_step_interval_s = r.get_or("wss_step_interval_s", p.wss_step_interval_s);
  p.io_rate_iops = r.get_or("io_rate_iops", p.io_rate_iops);
  if (r.has("io_type"))
    p.io_type = at_path(r.path("io_type"), [&] { return io_type_from_name(r.get<std::string>("io_type")); });
  p.noise_fraction = r.get_or("noise_fraction", p.noise_fraction);
  p.seed = r.get_or<std::uint64_t>("seed", p.seed);
  r.finish();
  at_path(path, [&] { p.validate(); return 0; });
  return p;
}

inline Thresholds parse_thresholds(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  Thresholds t;
  t.under = r.get_or("under", t.under);
  t.over = r.get_or("over", t.over);
  r.finish();
  at_path(path, [&] { t.validate(); return 0; });
  return t;
}

inline MethodConfig parse_method(const json& j, const std::string& path) {
  MethodConfig m;
  if (j.is_string()) {
    m.kind = at_path(path, [&] { return policy_kind_from_name(j.get<std::string>()); });
    return m;
  }
  ObjectReader r(j, path);
  m.kind = at_path(r.path("kind"), [&] { return policy_kind_from_name(r.get<std::string>("kind")); });
  m.alpha = r.get_or("alpha", m.alpha);
  m.lambda = r.get_or("lambda", m.lambda);
  if (!(m.alpha >= 0)) throw ConfigError(r.path("alpha"), "must be >= 0");
  if (!(m.lambda > 0)) throw ConfigError(r.path("lambda"), "must be > 0");
  auto& p = m.proactive;
  p.learning_rate = r.get_or("learning_rate", p.learning_rate);
  p.l2_coeff = r.get_or("l2_coeff", p.l2_coeff);
  p.warmup_min_pairs = r.get_or<std::uint64_t>("warmup_min_pairs", p.warmup_min_pairs);
  p.horizon_s = r.get_or("horizon_s", p.horizon_s);
  if (!(p.learning_rate > 0)) throw ConfigError(r.path("learning_rate"), "must be > 0");
  if (!(p.l2_coeff >= 0)) throw ConfigError(r.path("l2_coeff"), "must be >= 0");
  if (!(p.horizon_s > 0)) throw ConfigError(r.path("horizon_s"), "must be > 0");
  r.finish();
  return m;
}

inline FilterStrategy parse_filter(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  const auto kind = r.get<std::string>("kind");
  FilterStrategy f;
  if (kind == "all") {
    f = FilterAll{};
  } else if (kind == "random_fraction") {
    f = FilterRandomFraction{r.get<double>("p"), r.get_or<std::uint64_t>("seed", 0)};
  } else if (kind == "usage_threshold") {
    FilterUsageThreshold t;
    t.resource = at_path(r.path("resource"), [&] { return resource_from_name(r.get<std::string>("resource")); });
    t.comparator = at_path(r.path("comparator"),
                           [&] { return comparator_from_name(r.get<std::string>("comparator")); });
    t.value = r.get<double>("value");
    f = t;
  } else if (kind == "top_k") {
    FilterTopK t;
    t.metric = at_path(r.path("metric"), [&] { return feature::from_name(r.get<std::string>("metric")); });
    const auto k = r.get<std::int64_t>("k");
    if (k < 1) throw ConfigError(r.path("k"), "must be >= 1");
    t.k = static_cast<std::size_t>(k);
    f = t;
  } else {
    throw ConfigError(r.path("kind"), "unknown filter '" + kind + "'");
  }
  r.finish();
  at_path(path, [&] { validate(f); return 0; });
  return f;
}

inline DomainRules parse_rules(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  DomainRules d;
  d.step.cpu_step = r.get_or("cpu_step", d.step.cpu_step);
  d.step.mem_step_mib = r.get_or<Mib>("mem_step_mib", d.step.mem_step_mib);
  if (d.step.cpu_step < 1) throw ConfigError(r.path("cpu_step"), "must be >= 1");
  if (d.step.mem_step_mib < 1) throw ConfigError(r.path("mem_step_mib"), "must be >= 1");
  if (r.has("force_scale_up")) {
    ObjectReader f(j.at("force_scale_up"), r.path("force_scale_up"));
    ForceScaleUp fs;
    fs.resource = at_path(f.path("resource"), [&] { return resource_from_name(f.get<std::string>("resource")); });
    fs.threshold = f.get_or("threshold", fs.threshold);
    f.finish();
    d.force_scale_up = fs;
  }
  r.finish();
  return d;
}

inline SimConstants parse_sim_constants(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  SimConstants c;
  c.tick_s = r.get_or("tick_s", c.tick_s);
  c.swap_rate_per_deficit_gib = r.get_or("swap_rate_per_deficit_gib", c.swap_rate_per_deficit_gib);
  c.swap_latency_penalty_ms_per_page_s =
      r.get_or("swap_latency_penalty_ms_per_page_s", c.swap_latency_penalty_ms_per_page_s);
  c.rho_max = r.get_or("rho_max", c.rho_max);
  c.latency_cap_ms = r.get_or("latency_cap_ms", c.latency_cap_ms);
  r.finish();
  at_path(path, [&] { c.validate(); return 0; });
  return c;
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::ObjectReader;
  ObjectReader r(j, "");
  ExperimentConfig c;
  c.seed = r.get_or<std::uint64_t>("seed", 0);
  c.duration_s = r.get<double>("duration_s");
  c.decision_interval_s = r.get_or("decision_interval_s", c.decision_interval_s);
  if (!(c.decision_interval_s > 0)) throw ConfigError("decision_interval_s", "must be > 0");
  if (!(c.duration_s >= c.decision_interval_s))
    throw ConfigError("duration_s", "must be >= decision_interval_s");
  if (r.has("simulator")) c.simulator = detail::parse_sim_constants(j.at("simulator"), "simulator");

  for (const auto& t : presets::instance_types()) c.instance_types[t.name] = t;
  if (r.has("instance_types")) {
    const auto& types = j.at("instance_types");
    if (!types.is_object()) throw ConfigError("instance_types", "expected an object");
    for (const auto& [name, spec] : types.items())
      c.instance_types[name] = detail::parse_instance_type(spec, "instance_types." + name, name);
  }

  {
    ObjectReader cluster(r.at("cluster"), "cluster");
    const auto& nodes = detail::array_at(cluster, "nodes");
    if (nodes.empty()) throw ConfigError("cluster.nodes", "needs at least one node");
    for (std::size_t i = 0; i < nodes.size(); ++i)
      c.nodes.push_back(detail::parse_node(nodes[i], detail::index_path("cluster.nodes", i)));
    cluster.finish();
  }

  {
    const auto& w = r.at("workloads");
    if (!w.is_object() || w.empty()) throw ConfigError("workloads", "expected a non-empty object");
    for (const auto& [name, spec] : w.items())
      c.workloads[name] = detail::parse_workload(spec, "workloads." + name);
  }

  const auto& groups = detail::array_at(r, "vm_groups");
  if (groups.empty()) throw ConfigError("vm_groups", "needs at least one group");
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto path = detail::index_path("vm_groups", i);
    ObjectReader g(groups[i], path);
    VmGroup vg;
    vg.name = g.get<std::string>("name");
    vg.count = g.get<int>("count");
    if (vg.count < 1) throw ConfigError(g.path("count"), "must be >= 1");
    vg.instance_type = g.get<std::string>("instance_type");
    if (!c.instance_types.count(vg.instance_type))
      throw ConfigError(g.path("instance_type"), "unknown instance type '" + vg.instance_type + "'");
    vg.workload = g.get<std::string>("workload");
    if (!c.workloads.count(vg.workload))
      throw ConfigError(g.path("workload"), "unknown workload '" + vg.workload + "'");
    if (g.has("initial_vcpus")) vg.initial_vcpus = g.get<int>("initial_vcpus");
    if (g.has("initial_mem_mib")) vg.initial_mem_mib = g.get<Mib>("initial_mem_mib");
    const auto& t = c.instance_types.at(vg.instance_type);
    if (vg.initial_vcpus && (*vg.initial_vcpus < t.min_vcpus || *vg.initial_vcpus > t.max_vcpus))
      throw ConfigError(g.path("initial_vcpus"), "outside the instance type bounds");
    if (vg.initial_mem_mib &&
        (*vg.initial_mem_mib < t.min_mem_mib || *vg.initial_mem_mib > t.max_mem_mib))
      throw ConfigError(g.path("initial_mem_mib"), "outside the instance type bounds");
    g.finish();
    for (const auto& other : c.vm_groups)
      if (other.name == vg.name) throw ConfigError(g.path("name"), "duplicate group name");
    c.vm_groups.push_back(std::move(vg));
  }

  const bool one = r.has("method"), many = r.has("methods");
  if (one && many) throw ConfigError("methods", "give either method or methods, not both");
  if (one) {
    c.methods.push_back(detail::parse_method(j.at("method"), "method"));
  } else if (many) {
    const auto& ms = detail::array_at(r, "methods");
    for (std::size_t i = 0; i < ms.size(); ++i)
      c.methods.push_back(detail::parse_method(ms[i], detail::index_path("methods", i)));
    if (c.methods.empty()) throw ConfigError("methods", "needs at least one method");
  } else {
    c.methods.push_back({});
  }

  if (r.has("filter")) c.filter = detail::parse_filter(j.at("filter"), "filter");
  if (r.has("thresholds")) c.thresholds = detail::parse_thresholds(j.at("thresholds"), "thresholds");
  if (r.has("domain_rules")) c.rules = detail::parse_rules(j.at("domain_rules"), "domain_rules");
  detail::at_path("domain_rules", [&] { c.rules.validate(c.thresholds); return 0; });
  c.track_regret = r.get_or("track_regret", false);
  if (r.has("checkpoint_in")) c.checkpoint_in = r.get<std::string>("checkpoint_in");
  if (r.has("checkpoint_out")) c.checkpoint_out = r.get<std::string>("checkpoint_out");
  if (r.has("metrics_out")) c.metrics_out = r.get<std::string>("metrics_out");
  r.finish();

  const double ticks = c.decision_interval_s / c.simulator.tick_s;
  if (std::abs(ticks - std::round(ticks)) > 1e-9)
    throw ConfigError("decision_interval_s", "must be a multiple of simulator.tick_s");
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", std::string("'") + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

}  // namespace vmtune
