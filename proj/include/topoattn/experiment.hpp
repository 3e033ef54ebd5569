#pragma once

// Experiment configuration, seed lineage, the simulate -> train -> infer
// pipeline for one sweep cell, the sweep driver and CSV/SVG reporting.
//
// Seed lineage (all via derive_seed):
//   system = derive(derive(master, "n", n), "repeat", r)
//     graph    = derive(system, "graph")
//     sim k    = derive(system, "sim", k)
//     init     = derive(system, "init")
//     baseline = derive(system, "baseline")
//   cell   = derive(system, "sims", sims)        (the row seed)
//     shuffle  = derive(cell, "shuffle")
// A given (n, repeat) therefore always sees the same hidden graph, and the
// dataset of a smaller simulation count is a prefix of a larger one.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "topoattn/dynamics.hpp"
#include "topoattn/errors.hpp"
#include "topoattn/graph.hpp"
#include "topoattn/model.hpp"
#include "topoattn/rng.hpp"
#include "topoattn/svg.hpp"
#include "topoattn/topology.hpp"
#include "topoattn/train.hpp"

namespace topoattn {

struct SweepAxes {
  std::vector<std::size_t> agent_counts{5, 10, 15, 20};
  std::vector<std::size_t> sim_counts{10, 25, 50, 100, 200};
  std::size_t repeats = 3;
};

struct ExperimentConfig {
  std::uint64_t master_seed = 42;
  GraphSpec graph;                 // seed field is derived, not read
  SimConfig sim;                   // seed field is derived, not read
  std::size_t simulations = 100;   // per single run (simulate command)
  std::size_t latent_dim = 64;
  TrainConfig train;               // shuffle_seed is derived, not read
  InferenceConfig inference;
  std::size_t baseline_trials = 1000;
  SweepAxes sweep;
  std::string output = "out";

  void validate() const {
    graph.validate();
    sim.validate();
    train.validate();
    inference.validate();
    if (simulations < 1) throw ConfigError("simulation.count must be >= 1");
    if (latent_dim < 1) throw ConfigError("model.d must be >= 1");
    if (baseline_trials < 1) throw ConfigError("inference.baseline_trials must be >= 1");
    auto ascending = [](const std::vector<std::size_t>& v) {
      return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
    };
    if (sweep.agent_counts.empty() || sweep.sim_counts.empty())
      throw ConfigError("sweep: axes must be non-empty");
    if (!ascending(sweep.agent_counts) || !ascending(sweep.sim_counts))
      throw ConfigError("sweep: axes must be strictly ascending");
    if (sweep.agent_counts.front() < 2) throw ConfigError("sweep: agent counts must be >= 2");
    if (sweep.sim_counts.front() < 1) throw ConfigError("sweep: simulation counts must be >= 1");
    if (sweep.repeats < 1) throw ConfigError("sweep: repeats must be >= 1");
  }
};

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json sim = c.sim;
  sim.erase("seed");
  sim["count"] = c.simulations;
  nlohmann::json train = c.train;
  train.erase("shuffle_seed");
  nlohmann::json inference = c.inference;
  inference["baseline_trials"] = c.baseline_trials;
  return {{"seed", c.master_seed},
          {"graph", {{"n", c.graph.n}, {"p", c.graph.p}}},
          {"simulation", std::move(sim)},
          {"model", {{"d", c.latent_dim}}},
          {"train", std::move(train)},
          {"inference", std::move(inference)},
          {"sweep",
           {{"agent_counts", c.sweep.agent_counts},
            {"sim_counts", c.sweep.sim_counts},
            {"repeats", c.sweep.repeats}}},
          {"output", c.output}};
}

/// Parses and validates; every section and key is optional. Throws ConfigError.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    c.master_seed = j.value("seed", c.master_seed);
    if (j.contains("graph")) {
      const auto& g = j.at("graph");
      c.graph.n = g.value("n", c.graph.n);
      c.graph.p = g.value("p", c.graph.p);
    }
    if (j.contains("simulation")) {
      const auto& s = j.at("simulation");
      c.sim = s.get<SimConfig>();
      c.simulations = s.value("count", c.simulations);
    }
    if (j.contains("model")) c.latent_dim = j.at("model").value("d", c.latent_dim);
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    if (j.contains("inference")) {
      c.inference = j.at("inference").get<InferenceConfig>();
      c.baseline_trials = j.at("inference").value("baseline_trials", c.baseline_trials);
    }
    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      c.sweep.agent_counts = s.value("agent_counts", c.sweep.agent_counts);
      c.sweep.sim_counts = s.value("sim_counts", c.sweep.sim_counts);
      c.sweep.repeats = s.value("repeats", c.sweep.repeats);
    }
    c.output = j.value("output", c.output);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("'" + path + "': " + ex.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  return config_from_json(read_json_file(path));
}

struct SeedLineage {
  std::uint64_t master = 0;
  std::uint64_t system = 0;
  std::uint64_t cell = 0;
  std::uint64_t graph = 0;
  std::uint64_t init = 0;
  std::uint64_t shuffle = 0;
  std::uint64_t baseline = 0;

  std::uint64_t simulation(std::size_t k) const { return derive_seed(system, "sim", k); }

  static SeedLineage make(std::uint64_t master, std::size_t n, std::size_t sims,
                          std::size_t repeat) {
    SeedLineage s;
    s.master = master;
    s.system = derive_seed(derive_seed(master, "n", n), "repeat", repeat);
    s.cell = derive_seed(s.system, "sims", sims);
    s.graph = derive_seed(s.system, "graph");
    s.init = derive_seed(s.system, "init");
    s.baseline = derive_seed(s.system, "baseline");
    s.shuffle = derive_seed(s.cell, "shuffle");
    return s;
  }
};

inline nlohmann::json lineage_to_json(const SeedLineage& s) {
  return {{"master", s.master}, {"system", s.system},   {"cell", s.cell},
          {"graph", s.graph},   {"init", s.init},       {"shuffle", s.shuffle},
          {"baseline", s.baseline}};
}

inline SeedLineage lineage_from_json(const nlohmann::json& j) {
  SeedLineage s;
  s.master = j.at("master").get<std::uint64_t>();
  s.system = j.at("system").get<std::uint64_t>();
  s.cell = j.at("cell").get<std::uint64_t>();
  s.graph = j.at("graph").get<std::uint64_t>();
  s.init = j.at("init").get<std::uint64_t>();
  s.shuffle = j.at("shuffle").get<std::uint64_t>();
  s.baseline = j.at("baseline").get<std::uint64_t>();
  return s;
}

// ---- pipeline stages -------------------------------------------------------

struct SimulationRun {
  AdjacencyMatrix graph{2};
  std::vector<Trajectory> trajectories;
  SeedLineage seeds;
};

inline SimulationRun run_simulations(const ExperimentConfig& cfg, std::size_t n, std::size_t sims,
                                     std::size_t repeat) {
  SimulationRun run;
  run.seeds = SeedLineage::make(cfg.master_seed, n, sims, repeat);
  GraphSpec spec = cfg.graph;
  spec.n = n;
  spec.seed = run.seeds.graph;
  run.graph = generate_erdos_renyi(spec);
  run.trajectories.reserve(sims);
  for (std::size_t k = 0; k < sims; ++k) {
    SimConfig sc = cfg.sim;
    sc.seed = run.seeds.simulation(k);
    run.trajectories.push_back(simulate(run.graph, sc));
  }
  return run;
}

inline TrainConfig resolved_train_config(const ExperimentConfig& cfg, const SeedLineage& seeds) {
  TrainConfig tc = cfg.train;
  tc.shuffle_seed = seeds.shuffle;
  return tc;
}

struct CellResult {
  std::size_t n = 0;
  std::size_t sims = 0;
  std::size_t repeat = 0;
  SeedLineage seeds;
  bool ok = false;
  std::string status = "ok";
  MetricsReport metrics;
  double final_loss = std::nan("");
  double wall_seconds = 0.0;
  MatrixD final_logits;
};

/// Full pipeline for one (n, sims, repeat) cell; never throws library errors,
/// they are captured in `status`.
inline CellResult run_cell(const ExperimentConfig& cfg, std::size_t n, std::size_t sims,
                           std::size_t repeat) {
  const auto t0 = std::chrono::steady_clock::now();
  CellResult r;
  r.n = n;
  r.sims = sims;
  r.repeat = repeat;
  r.seeds = SeedLineage::make(cfg.master_seed, n, sims, repeat);
  try {
    const SimulationRun run = run_simulations(cfg, n, sims, repeat);
    const Dataset data = build_dataset(run.trajectories);
    auto [params, report] = train(init_params(n, cfg.latent_dim, r.seeds.init), data,
                                  resolved_train_config(cfg, r.seeds));
    r.final_logits = attention_logits(params);
    r.final_loss = report.loss.back();
    r.metrics = precision_recall_f1(binarize_attention(r.final_logits, cfg.inference), run.graph);
    const auto base = random_baseline_f1(run.graph, cfg.graph.p, cfg.baseline_trials, r.seeds.baseline);
    r.metrics.baseline_f1_mean = base.mean;
    r.metrics.baseline_f1_std = base.std;
    r.ok = true;
  } catch (const DivergenceError&) {
    r.status = "error:divergence";
  } catch (const ConfigError&) {
    r.status = "error:config";
  } catch (const Error&) {
    r.status = "error:input";
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

struct SweepResult {
  std::vector<CellResult> rows;  // order: n, then sims, then repeat

  std::size_t succeeded() const {
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [](const CellResult& c) { return c.ok; }));
  }
};

/// Runs every cell on a pool of `threads` workers. Output order and contents
/// do not depend on the thread count.
inline SweepResult run_sweep(const ExperimentConfig& cfg, std::size_t threads = 1,
                             const std::function<void(const CellResult&)>& on_cell = {}) {
  cfg.validate();
  struct Job {
    std::size_t n, sims, repeat;
  };
  std::vector<Job> jobs;
  for (auto n : cfg.sweep.agent_counts)
    for (auto s : cfg.sweep.sim_counts)
      for (std::size_t r = 0; r < cfg.sweep.repeats; ++r) jobs.push_back({n, s, r});

  SweepResult out;
  out.rows.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex report_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      out.rows[i] = run_cell(cfg, jobs[i].n, jobs[i].sims, jobs[i].repeat);
      if (on_cell) {
        std::lock_guard lock(report_mutex);
        on_cell(out.rows[i]);
      }
    }
  };
  const std::size_t k = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(jobs.size(), 1));
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < k; ++t) pool.emplace_back(worker);
    worker();
  }
  return out;
}

// ---- sweep CSV ---------------------------------------------------------------

inline constexpr const char* kSweepCsvHeader =
    "n,sims,repeat,seed,f1,precision,recall,baseline_mean,baseline_std,final_loss,status";

/// Wall time is deliberately not part of the CSV so reruns are byte-identical.
inline void write_sweep_csv(std::ostream& os, const SweepResult& s) {
  os << kSweepCsvHeader << '\n';
  for (const auto& c : s.rows) {
    os << c.n << ',' << c.sims << ',' << c.repeat << ',' << c.seeds.cell << ',';
    if (c.ok) {
      const auto& m = c.metrics;
      os << format_double(m.f1) << ',' << format_double(m.precision) << ','
         << format_double(m.recall) << ',' << format_double(m.baseline_f1_mean) << ','
         << format_double(m.baseline_f1_std) << ',' << format_double(c.final_loss);
    } else {
      os << "nan,nan,nan,nan,nan,nan";
    }
    os << ',' << c.status << '\n';
  }
}

/// Summary rows read back from a sweep CSV (for re-rendering charts).
struct SweepRow {
  std::size_t n = 0, sims = 0, repeat = 0;
  std::uint64_t seed = 0;
  double f1 = 0, precision = 0, recall = 0, baseline_mean = 0, baseline_std = 0, final_loss = 0;
  std::string status;
  bool ok() const { return status == "ok"; }
};

inline std::vector<SweepRow> read_sweep_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kSweepCsvHeader)
    throw InputError("sweep csv: unexpected header");
  std::vector<SweepRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 11) throw InputError("sweep csv: expected 11 columns");
    try {
      SweepRow r;
      r.n = std::stoul(cells[0]);
      r.sims = std::stoul(cells[1]);
      r.repeat = std::stoul(cells[2]);
      r.seed = std::stoull(cells[3]);
      r.f1 = std::stod(cells[4]);
      r.precision = std::stod(cells[5]);
      r.recall = std::stod(cells[6]);
      r.baseline_mean = std::stod(cells[7]);
      r.baseline_std = std::stod(cells[8]);
      r.final_loss = std::stod(cells[9]);
      r.status = cells[10];
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw InputError("sweep csv: malformed row '" + line + "'");
    }
  }
  return rows;
}

inline std::vector<SweepRow> to_rows(const SweepResult& s) {
  std::stringstream ss;
  write_sweep_csv(ss, s);
  return read_sweep_csv(ss);
}

// ---- charts -------------------------------------------------------------------

/// F1 vs agent count at one simulation count (100 if swept, else the largest),
/// with the random-graph baseline as a dashed reference.
inline std::string render_f1_vs_agents(const std::vector<SweepRow>& rows) {
  std::vector<std::size_t> sims_values;
  for (const auto& r : rows)
    if (r.ok()) sims_values.push_back(r.sims);
  if (sims_values.empty()) return SvgChart{"F1 vs number of agents", "agents", "F1", {}}.render();
  std::size_t target = *std::max_element(sims_values.begin(), sims_values.end());
  if (std::find(sims_values.begin(), sims_values.end(), 100) != sims_values.end()) target = 100;

  std::map<std::size_t, std::pair<double, std::size_t>> f1, base;
  for (const auto& r : rows) {
    if (!r.ok() || r.sims != target) continue;
    f1[r.n].first += r.f1;
    f1[r.n].second += 1;
    base[r.n].first += r.baseline_mean;
    base[r.n].second += 1;
  }
  SvgChart chart{"F1 vs number of agents (" + std::to_string(target) + " simulations)",
                 "agents", "F1", {}};
  Series model{"attention model", {}, false};
  Series baseline{"random graph baseline", {}, true};
  for (const auto& [n, acc] : f1) model.points.emplace_back(double(n), acc.first / double(acc.second));
  for (const auto& [n, acc] : base)
    baseline.points.emplace_back(double(n), acc.first / double(acc.second));
  chart.series = {model, baseline};
  return chart.render();
}

/// F1 vs simulation count, one line per agent count (legend ordered by n).
inline std::string render_f1_vs_sims(const std::vector<SweepRow>& rows) {
  std::map<std::size_t, std::map<std::size_t, std::pair<double, std::size_t>>> acc;
  for (const auto& r : rows) {
    if (!r.ok()) continue;
    auto& a = acc[r.n][r.sims];
    a.first += r.f1;
    a.second += 1;
  }
  SvgChart chart{"F1 vs number of simulations", "simulations", "F1", {}};
  for (const auto& [n, by_sims] : acc) {
    Series s{"N = " + std::to_string(n), {}, false};
    for (const auto& [sims, a] : by_sims) s.points.emplace_back(double(sims), a.first / double(a.second));
    chart.series.push_back(std::move(s));
  }
  return chart.render();
}

}  // namespace topoattn
