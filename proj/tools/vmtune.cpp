// Command-line experiment runner: warmup | run | compare | explain.

#include <filesystem>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "vmtune/experiment.hpp"

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string checkpoint_in;
  std::string checkpoint_out;
  std::string metrics_out;
  std::optional<std::uint64_t> seed;
  std::string vm;
  double at_s = 0.0;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "experiment config (JSON)")->required();
  cmd->add_option("--checkpoint-in", o.checkpoint_in, "bandit checkpoint to start from");
  cmd->add_option("--checkpoint-out", o.checkpoint_out, "where to write the trained bandit");
  cmd->add_option("--metrics-out", o.metrics_out, "metrics CSV path");
  cmd->add_option("--seed", o.seed, "override the config seed");
}

vmtune::ExperimentConfig load(const Options& o) {
  auto c = vmtune::load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.checkpoint_in.empty()) c.checkpoint_in = o.checkpoint_in;
  if (!o.checkpoint_out.empty()) c.checkpoint_out = o.checkpoint_out;
  if (!o.metrics_out.empty()) c.metrics_out = o.metrics_out;
  return c;
}

void emit_metrics(const vmtune::ExperimentConfig& c, const std::vector<vmtune::MetricsRow>& rows) {
  if (c.metrics_out) vmtune::write_metrics(*c.metrics_out, rows);
  else vmtune::write_metrics(std::cout, rows);
}

int cmd_warmup(const Options& o) {
  const auto c = load(o);
  if (!c.checkpoint_out) throw std::runtime_error("warmup needs --checkpoint-out or checkpoint_out");
  const auto out = vmtune::warmup(c);
  vmtune::save_checkpoint(*out.model, *c.checkpoint_out);
  if (c.metrics_out) vmtune::write_metrics(*c.metrics_out, out.rows);
  std::cout << "rounds " << out.rows.size() << "\ncumulative_reward " << out.cumulative_reward << '\n';
  return 0;
}

int cmd_run(const Options& o) {
  const auto c = load(o);
  const auto out = vmtune::run(c);
  emit_metrics(c, out.rows);
  if (c.checkpoint_out && out.model) vmtune::save_checkpoint(*out.model, *c.checkpoint_out);
  return 0;
}

int cmd_compare(const Options& o) {
  const auto c = load(o);
  const auto out = vmtune::compare(c);
  // Per-method files sit next to the metrics path: base_passive.csv, ...
  const fs::path base = c.metrics_out.value_or("compare.csv");
  std::map<std::string, int> seen;
  for (std::size_t i = 0; i < out.runs.size(); ++i) {
    std::string name = out.summary[i].method;
    if (const int n = seen[name]++; n > 0) name += "_" + std::to_string(n);
    fs::path p = base.parent_path() / (base.stem().string() + "_" + name + ".csv");
    vmtune::write_metrics(p.string(), out.runs[i].rows);
  }
  vmtune::write_summary(std::cout, out.summary);
  std::ofstream summary(base.parent_path() / (base.stem().string() + "_summary.csv"));
  vmtune::write_summary(summary, out.summary);
  return 0;
}

int cmd_explain(const Options& o) {
  const auto c = load(o);
  if (!c.checkpoint_in) throw std::runtime_error("explain needs a checkpoint (--checkpoint-in)");
  const auto model = vmtune::load_checkpoint(*c.checkpoint_in);
  vmtune::write_explain(std::cout, vmtune::explain(c, model, o.vm, o.at_s));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive VM resource tuning experiments"};
  app.require_subcommand(1);
  Options o;
  auto* warmup = app.add_subcommand("warmup", "train a bandit in the simulator and write a checkpoint");
  auto* run = app.add_subcommand("run", "run one method and write per-round metrics");
  auto* compare = app.add_subcommand("compare", "run every listed method on identical clusters");
  auto* explain = app.add_subcommand("explain", "print per-arm scores for one VM");
  for (auto* cmd : {warmup, run, compare, explain}) add_common(cmd, o);
  explain->add_option("--vm", o.vm, "VM id, e.g. web-0")->required();
  explain->add_option("--at-s", o.at_s, "simulated time of the context");

  CLI11_PARSE(app, argc, argv);
  try {
    if (warmup->parsed()) return cmd_warmup(o);
    if (run->parsed()) return cmd_run(o);
    if (compare->parsed()) return cmd_compare(o);
    return cmd_explain(o);
  } catch (const std::exception& e) {
    std::cerr << "vmtune: " << e.what() << '\n';
    return 1;
  }
}
