#pragma once

// The command-line workflows as callable functions returning process exit
// codes: 0 success, 2 config/input error, 3 numerical divergence, 4 every
// sweep cell failed.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "topoattn/dynamics.hpp"
#include "topoattn/errors.hpp"
#include "topoattn/experiment.hpp"
#include "topoattn/graph.hpp"
#include "topoattn/model.hpp"
#include "topoattn/topology.hpp"
#include "topoattn/train.hpp"

namespace topoattn::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kConfigError = 2, kDiverged = 3, kSweepFailed = 4 };

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  // train
  std::string data;
  // infer
  std::string checkpoint;
  std::string truth;
  std::optional<double> threshold;
  // report
  std::string csv;
};

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write '" + path.string() + "'");
  os << text;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline fs::path prepare_out(const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required");
  fs::create_directories(out);
  return fs::path(out);
}

inline std::string sim_file_name(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sim_%03zu.csv", k);
  return buf;
}

template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON: " << e.what() << "\n";
    return kConfigError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }
}

inline ExperimentConfig load_with_overrides(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  nlohmann::json j = read_json_file(o.config);
  if (o.seed) j["seed"] = *o.seed;
  return config_from_json(j);
}

}  // namespace detail

/// Graph JSON, one trajectory CSV per simulation and meta.json into `out`.
inline int cmd_simulate(const Options& o, std::ostream& log = std::cout,
                        std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    const ExperimentConfig cfg = detail::load_with_overrides(o);
    const fs::path out = detail::prepare_out(o.out.empty() ? cfg.output : o.out);
    const SimulationRun run = run_simulations(cfg, cfg.graph.n, cfg.simulations, 0);

    nlohmann::json sims = nlohmann::json::array();
    for (std::size_t k = 0; k < run.trajectories.size(); ++k) {
      const auto& t = run.trajectories[k];
      std::ofstream csv(out / detail::sim_file_name(k), std::ios::binary);
      write_trajectory_csv(csv, t.states);
      nlohmann::json entry{{"file", detail::sim_file_name(k)}, {"seed", t.config.seed}};
      if (!t.omega.empty()) entry["omega"] = t.omega;
      sims.push_back(std::move(entry));
    }
    const nlohmann::json graph = graph_to_json(run.graph);
    detail::write_json(out / "graph.json", graph);
    detail::write_json(out / "meta.json", {{"config", config_to_json(cfg)},
                                           {"seeds", lineage_to_json(run.seeds)},
                                           {"graph", graph},
                                           {"simulations", std::move(sims)}});
    log << "wrote " << run.trajectories.size() << " simulations (N=" << cfg.graph.n << ", "
        << run.graph.edge_count() << " edges) to " << out.string() << "\n";
    return kOk;
  });
}

/// Loads a dataset directory written by cmd_simulate.
struct LoadedDataset {
  nlohmann::json meta;
  ExperimentConfig config;
  SeedLineage seeds;
  Dataset data;
  std::size_t simulations = 0;
};

inline LoadedDataset load_dataset_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("--data is required");
  const fs::path root(dir);
  if (!fs::exists(root / "meta.json")) throw InputError("'" + dir + "' has no meta.json");
  LoadedDataset ld;
  ld.meta = read_json_file((root / "meta.json").string());
  try {
    ld.config = config_from_json(ld.meta.at("config"));
    ld.seeds = lineage_from_json(ld.meta.at("seeds"));
    std::vector<Trajectory> trajectories;
    for (const auto& s : ld.meta.at("simulations")) {
      std::ifstream in(root / s.at("file").get<std::string>());
      if (!in) throw InputError("missing trajectory file " + s.at("file").get<std::string>());
      Trajectory t;
      t.states = read_trajectory_csv(in);
      trajectories.push_back(std::move(t));
    }
    if (trajectories.empty()) throw InputError("'" + dir + "' contains no simulations");
    ld.simulations = trajectories.size();
    ld.data = build_dataset(trajectories);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("meta.json: ") + e.what());
  }
  if (ld.data.empty()) throw InputError("'" + dir + "' yields no training pairs");
  return ld;
}

/// checkpoint.json, loss.csv and report.json (logit snapshots) into `out`.
inline int cmd_train(const Options& o, std::ostream& log = std::cout,
                     std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    LoadedDataset ld = load_dataset_dir(o.data);
    ExperimentConfig cfg = ld.config;
    if (!o.config.empty()) {
      const ExperimentConfig over = load_config(o.config);
      cfg.train = over.train;
      cfg.latent_dim = over.latent_dim;
    }
    const fs::path out = detail::prepare_out(o.out);
    const TrainConfig tc = resolved_train_config(cfg, ld.seeds);
    auto [params, report] = train(init_params(ld.data.n, cfg.latent_dim, ld.seeds.init), ld.data, tc);

    nlohmann::json ckpt = params_to_json(params, lineage_to_json(ld.seeds));
    ckpt["config"] = config_to_json(cfg);
    ckpt["simulations"] = ld.simulations;
    detail::write_json(out / "checkpoint.json", ckpt);
    {
      std::ofstream csv(out / "loss.csv", std::ios::binary);
      write_loss_csv(csv, report);
    }
    nlohmann::json rep = report_to_json(report);
    rep["experiment"] = config_to_json(cfg);
    rep["seeds"] = lineage_to_json(ld.seeds);
    detail::write_json(out / "report.json", rep);
    log << "trained " << report.loss.size() << " epochs on " << ld.data.size()
        << " pairs; final loss " << format_double(report.loss.back()) << "\n";
    return kOk;
  });
}

/// Thresholds the checkpoint's logits, scores against the truth graph and
/// writes predicted_graph.json, metrics.json and metrics.csv. Prints F1.
inline int cmd_infer(const Options& o, std::ostream& log = std::cout,
                     std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
    if (o.truth.empty()) throw ConfigError("--truth is required");
    const nlohmann::json ckpt = read_json_file(o.checkpoint);
    const ModelParams params = params_from_json(ckpt);
    const AdjacencyMatrix truth = graph_from_json(read_json_file(o.truth));
    if (truth.n() != params.n())
      throw ShapeError("checkpoint has N=" + std::to_string(params.n()) + " but truth graph has N=" +
                       std::to_string(truth.n()));

    ExperimentConfig cfg =
        ckpt.contains("config") ? config_from_json(ckpt.at("config")) : ExperimentConfig{};
    if (!o.config.empty()) {
      const ExperimentConfig over = load_config(o.config);
      cfg.inference = over.inference;
      cfg.baseline_trials = over.baseline_trials;
    }
    if (o.threshold) cfg.inference.threshold = *o.threshold;
    cfg.inference.validate();

    SeedLineage seeds;
    if (ckpt.contains("seeds") && ckpt.at("seeds").contains("baseline"))
      seeds = lineage_from_json(ckpt.at("seeds"));
    else
      seeds = SeedLineage::make(o.seed.value_or(cfg.master_seed), truth.n(), 0, 0);
    const std::size_t sims = ckpt.value("simulations", std::size_t{0});

    const fs::path out = detail::prepare_out(o.out);
    const MatrixD logits = attention_logits(params);
    const AdjacencyMatrix predicted = binarize_attention(logits, cfg.inference);
    MetricsReport m = precision_recall_f1(predicted, truth);
    const auto base = random_baseline_f1(truth, cfg.graph.p, cfg.baseline_trials, seeds.baseline);
    m.baseline_f1_mean = base.mean;
    m.baseline_f1_std = base.std;

    detail::write_json(out / "predicted_graph.json", graph_to_json(predicted));
    nlohmann::json mj = metrics_to_json(m);
    // JSON has no infinities; a +/-inf threshold is recorded as a string.
    nlohmann::json inference = cfg.inference;
    if (!std::isfinite(cfg.inference.threshold))
      inference["threshold"] = cfg.inference.threshold > 0 ? "inf" : "-inf";
    mj["inference"] = inference;
    mj["seeds"] = lineage_to_json(seeds);
    mj["diagonal_dominance"] = diagonal_dominance(logits).fraction;
    detail::write_json(out / "metrics.json", mj);
    {
      std::ofstream csv(out / "metrics.csv", std::ios::binary);
      csv << kMetricsCsvHeader << '\n';
      write_metrics_csv_row(csv, m, sims, seeds.cell, cfg.inference.threshold);
    }
    log << "F1 " << format_double(m.f1) << " (precision " << format_double(m.precision)
        << ", recall " << format_double(m.recall) << ", baseline "
        << format_double(base.mean) << ")\n";
    return kOk;
  });
}

inline void write_charts(const fs::path& out, const std::vector<SweepRow>& rows) {
  detail::write_text(out / "f1_vs_agents.svg", render_f1_vs_agents(rows));
  detail::write_text(out / "f1_vs_sims.svg", render_f1_vs_sims(rows));
}

/// Every (n, sims, repeat) cell: sweep.csv, sweep_config.json,
/// sweep_timing.json and the two charts.
inline int cmd_sweep(const Options& o, std::ostream& log = std::cout,
                     std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    const ExperimentConfig cfg = detail::load_with_overrides(o);
    const fs::path out = detail::prepare_out(o.out.empty() ? cfg.output : o.out);
    const SweepResult result = run_sweep(cfg, o.threads, [&](const CellResult& c) {
      log << "n=" << c.n << " sims=" << c.sims << " repeat=" << c.repeat << " "
          << (c.ok ? "f1=" + format_double(c.metrics.f1) : c.status) << "\n";
    });

    {
      std::ofstream csv(out / "sweep.csv", std::ios::binary);
      write_sweep_csv(csv, result);
    }
    nlohmann::json lineage = nlohmann::json::array();
    nlohmann::json timing = nlohmann::json::array();
    for (const auto& c : result.rows) {
      lineage.push_back({{"n", c.n}, {"sims", c.sims}, {"repeat", c.repeat},
                         {"seeds", lineage_to_json(c.seeds)}});
      timing.push_back({{"n", c.n}, {"sims", c.sims}, {"repeat", c.repeat},
                        {"wall_seconds", c.wall_seconds}});
    }
    detail::write_json(out / "sweep_config.json",
                       {{"config", config_to_json(cfg)}, {"cells", std::move(lineage)}});
    detail::write_json(out / "sweep_timing.json", timing);
    write_charts(out, to_rows(result));

    const std::size_t ok = result.succeeded();
    log << ok << "/" << result.rows.size() << " cells succeeded\n";
    if (ok == 0) {
      err << "error: every sweep cell failed\n";
      return kSweepFailed;
    }
    return kOk;
  });
}

/// Re-renders the charts from an existing sweep.csv.
inline int cmd_report(const Options& o, std::ostream& log = std::cout,
                      std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    if (o.csv.empty()) throw ConfigError("--csv is required");
    std::ifstream in(o.csv);
    if (!in) throw InputError("cannot open '" + o.csv + "'");
    const auto rows = read_sweep_csv(in);
    const fs::path out = detail::prepare_out(o.out.empty() ? fs::path(o.csv).parent_path().string() : o.out);
    write_charts(out, rows);
    log << "rendered charts for " << rows.size() << " rows into " << out.string() << "\n";
    return kOk;
  });
}

}  // namespace topoattn::cli
