#include <cmath>
#include <iostream>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "topoattn/commands.hpp"

namespace {

// Accepts "inf", "-inf" and ordinary numbers.
std::optional<double> parse_threshold(const std::string& s) {
  if (s.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || std::isnan(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw CLI::ValidationError("--threshold", "not a number: " + s);
  }
}

}  // namespace

int main(int argc, char** argv) {
  using namespace topoattn::cli;
  CLI::App app{"Attention-based network topology inference for multi-agent systems"};
  app.require_subcommand(1);

  Options o;
  std::uint64_t seed = 0;
  std::string threshold;
  o.threads = std::max(1u, std::thread::hardware_concurrency());

  auto add_seed = [&](CLI::App* c) {
    c->add_option("--seed", seed, "Master seed (overrides the config)");
  };

  auto* sim = app.add_subcommand("simulate", "Sample a graph and simulate trajectories");
  sim->add_option("--config", o.config, "Experiment config (JSON)")->required();
  sim->add_option("--out", o.out, "Output directory");
  add_seed(sim);

  auto* tr = app.add_subcommand("train", "Train the attention model on a simulated dataset");
  tr->add_option("--data", o.data, "Dataset directory written by 'simulate'")->required();
  tr->add_option("--config", o.config, "Config whose train/model sections override the dataset's");
  tr->add_option("--out", o.out, "Output directory")->required();

  auto* inf = app.add_subcommand("infer", "Threshold learned attention and score it");
  inf->add_option("--checkpoint", o.checkpoint, "checkpoint.json from 'train'")->required();
  inf->add_option("--truth", o.truth, "Ground-truth graph JSON")->required();
  inf->add_option("--config", o.config, "Config whose inference section overrides the checkpoint's");
  inf->add_option("--threshold", threshold, "Threshold override (accepts inf/-inf)");
  inf->add_option("--out", o.out, "Output directory")->required();

  auto* sw = app.add_subcommand("sweep", "Run the agent-count x simulation-count grid");
  sw->add_option("--config", o.config, "Experiment config (JSON)")->required();
  sw->add_option("--out", o.out, "Output directory");
  sw->add_option("--threads", o.threads, "Worker threads (cell-level)")->check(CLI::PositiveNumber);
  add_seed(sw);

  auto* rep = app.add_subcommand("report", "Re-render charts from a sweep CSV");
  rep->add_option("--csv", o.csv, "sweep.csv")->required();
  rep->add_option("--out", o.out, "Output directory (defaults to the CSV's directory)");

  try {
    app.parse(argc, argv);
    o.threshold = parse_threshold(threshold);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }
  if (sim->count("--seed") + sw->count("--seed") > 0) o.seed = seed;

  if (*sim) return cmd_simulate(o);
  if (*tr) return cmd_train(o);
  if (*inf) return cmd_infer(o);
  if (*sw) return cmd_sweep(o);
  return cmd_report(o);
}
