#pragma once

// Multi-agent dynamics on a fixed graph and the one-step supervised dataset
// built from simulated trajectories.
//
//   consensus:  dx/dt   = -L x
//   Kuramoto:   dphi/dt = omega_i + (K/N) sum_j m_ij sin(phi_j - phi_i)
//               with m_ij = a_ij (masked) or 1 (all-to-all).

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "topoattn/errors.hpp"
#include "topoattn/graph.hpp"
#include "topoattn/matrix.hpp"
#include "topoattn/rng.hpp"

namespace topoattn {

enum class DynamicsKind { Consensus, Kuramoto };
enum class Integrator { Euler, RK4 };

NLOHMANN_JSON_SERIALIZE_ENUM(DynamicsKind, {{DynamicsKind::Consensus, "consensus"},
                                            {DynamicsKind::Kuramoto, "kuramoto"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Integrator, {{Integrator::Euler, "euler"},
                                          {Integrator::RK4, "rk4"}})

struct SimConfig {
  DynamicsKind kind = DynamicsKind::Consensus;
  Integrator integrator = Integrator::Euler;
  double dt = 0.01;
  std::size_t steps = 1000;  // recorded rows, including the initial state
  double init_low = -10.0;
  double init_high = 10.0;
  double coupling_k = 2.0;
  double omega_low = -1.0;
  double omega_high = 1.0;
  bool masked_coupling = true;
  std::uint64_t seed = 0;

  static SimConfig consensus() { return {}; }

  static SimConfig kuramoto() {
    SimConfig c;
    c.kind = DynamicsKind::Kuramoto;
    c.init_low = -std::numbers::pi;
    c.init_high = std::numbers::pi;
    return c;
  }

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("sim: dt must be > 0");
    if (steps < 2) throw ConfigError("sim: steps must be >= 2");
    if (!(init_low < init_high)) throw ConfigError("sim: init_low must be < init_high");
    if (kind == DynamicsKind::Kuramoto) {
      if (!(coupling_k >= 0.0)) throw ConfigError("sim: coupling_k must be >= 0");
      if (!(omega_low <= omega_high)) throw ConfigError("sim: omega_low must be <= omega_high");
    }
  }
};

inline void to_json(nlohmann::json& j, const SimConfig& c) {
  j = {{"kind", c.kind},           {"integrator", c.integrator},
       {"dt", c.dt},               {"steps", c.steps},
       {"init_low", c.init_low},   {"init_high", c.init_high},
       {"coupling_k", c.coupling_k}, {"omega_low", c.omega_low},
       {"omega_high", c.omega_high}, {"masked_coupling", c.masked_coupling},
       {"seed", c.seed}};
}

/// Missing keys keep their defaults; init bounds default per dynamics kind.
inline void from_json(const nlohmann::json& j, SimConfig& c) {
  const auto kind = j.value("kind", DynamicsKind::Consensus);
  c = kind == DynamicsKind::Kuramoto ? SimConfig::kuramoto() : SimConfig::consensus();
  c.integrator = j.value("integrator", c.integrator);
  c.dt = j.value("dt", c.dt);
  c.steps = j.value("steps", c.steps);
  c.init_low = j.value("init_low", c.init_low);
  c.init_high = j.value("init_high", c.init_high);
  c.coupling_k = j.value("coupling_k", c.coupling_k);
  c.omega_low = j.value("omega_low", c.omega_low);
  c.omega_high = j.value("omega_high", c.omega_high);
  c.masked_coupling = j.value("masked_coupling", c.masked_coupling);
  c.seed = j.value("seed", c.seed);
}

inline std::uint64_t fingerprint(const nlohmann::json& j) {
  return fnv1a64(j.dump());
}

struct Trajectory {
  MatrixD states;  // steps x N
  Vector omega;    // natural frequencies (Kuramoto only)
  SimConfig config;
  std::uint64_t config_fingerprint = 0;
  std::uint64_t graph_fingerprint = 0;

  std::size_t steps() const noexcept { return states.rows(); }
  std::size_t n() const noexcept { return states.cols(); }
};

/// Supervised pairs: row k of `inputs` is x(t), row k of `targets` is x(t+1).
struct Dataset {
  MatrixD inputs;
  MatrixD targets;
  std::size_t n = 0;
  std::vector<std::uint64_t> provenance;

  std::size_t size() const noexcept { return inputs.rows(); }
  bool empty() const noexcept { return inputs.rows() == 0; }
};

namespace detail {

inline void check_finite_state(std::span<const double> x, const char* what) {
  if (!all_finite(x)) throw InputError(std::string(what) + ": non-finite state");
}

inline void check_consensus_dt(const LaplacianMatrix& lap, double dt) {
  if (!(dt > 0.0)) throw ConfigError("consensus: dt must be > 0");
  // Forward Euler is stable for dt * lambda_max < 2; lambda_max <= 2 max_degree.
  if (dt * lap.spectral_upper_bound() >= 2.0) {
    throw ConfigError("consensus: dt violates the Euler stability bound dt < 1/max_degree");
  }
}

inline Vector consensus_rhs(std::span<const double> x, const LaplacianMatrix& lap) {
  const std::size_t n = x.size();
  Vector out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = lap.dense().row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += row[j] * x[j];
    out[i] = -s;
  }
  return out;
}

inline Vector kuramoto_rhs(std::span<const double> phi, const AdjacencyMatrix& a,
                           std::span<const double> omega, double k, bool masked) {
  const std::size_t n = phi.size();
  const double scale = k / static_cast<double>(n);
  Vector out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (masked && !a.has_edge(i, j)) continue;
      s += std::sin(phi[j] - phi[i]);
    }
    out[i] = omega[i] + scale * s;
  }
  return out;
}

template <class Rhs>
Vector rk4(std::span<const double> x, double dt, Rhs&& f) {
  const std::size_t n = x.size();
  auto axpy = [&](const Vector& k, double h) {
    Vector y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] + h * k[i];
    return y;
  };
  const Vector k1 = f(x);
  const Vector k2 = f(axpy(k1, dt / 2));
  const Vector k3 = f(axpy(k2, dt / 2));
  const Vector k4 = f(axpy(k3, dt));
  Vector out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  return out;
}

}  // namespace detail

/// One forward-Euler step x' = x - dt L x. Throws ConfigError when dt exceeds
/// the stability bound instead of letting the run blow up.
inline Vector step_consensus(std::span<const double> x, const LaplacianMatrix& lap, double dt) {
  if (x.size() != lap.n()) throw ShapeError("step_consensus: state length != N");
  detail::check_finite_state(x, "step_consensus");
  detail::check_consensus_dt(lap, dt);
  const Vector f = detail::consensus_rhs(x, lap);
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + dt * f[i];
  return out;
}

/// One forward-Euler step of the Kuramoto model. Phases are not wrapped.
inline Vector step_kuramoto(std::span<const double> phi, const AdjacencyMatrix& a,
                            std::span<const double> omega, double k, double dt,
                            bool masked) {
  if (phi.size() != a.n() || omega.size() != a.n())
    throw ShapeError("step_kuramoto: phase/frequency length != N");
  detail::check_finite_state(phi, "step_kuramoto");
  detail::check_finite_state(omega, "step_kuramoto");
  if (!(k >= 0.0)) throw ConfigError("step_kuramoto: coupling must be >= 0");
  const Vector f = detail::kuramoto_rhs(phi, a, omega, k, masked);
  Vector out(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) out[i] = phi[i] + dt * f[i];
  return out;
}

/// Kuramoto order parameter r = |mean_j exp(i phi_j)|.
inline double order_parameter(std::span<const double> phi) {
  std::complex<double> s{0.0, 0.0};
  for (double p : phi) s += std::polar(1.0, p);
  return std::abs(s) / static_cast<double>(phi.size());
}

/// Advance one recorded step with the configured integrator.
inline Vector advance(std::span<const double> x, const AdjacencyMatrix& graph,
                      const LaplacianMatrix& lap, std::span<const double> omega,
                      const SimConfig& cfg) {
  if (cfg.kind == DynamicsKind::Consensus) {
    if (cfg.integrator == Integrator::Euler) return step_consensus(x, lap, cfg.dt);
    detail::check_consensus_dt(lap, cfg.dt);
    return detail::rk4(x, cfg.dt, [&](std::span<const double> y) {
      return detail::consensus_rhs(y, lap);
    });
  }
  if (cfg.integrator == Integrator::Euler)
    return step_kuramoto(x, graph, omega, cfg.coupling_k, cfg.dt, cfg.masked_coupling);
  return detail::rk4(x, cfg.dt, [&](std::span<const double> y) {
    return detail::kuramoto_rhs(y, graph, omega, cfg.coupling_k, cfg.masked_coupling);
  });
}

/// Simulate `cfg.steps` recorded rows starting from x(0) ~ U[init_low, init_high]^N.
/// Draw order from Rng(cfg.seed): N initial states, then N natural frequencies
/// (Kuramoto only).
inline Trajectory simulate(const AdjacencyMatrix& graph, const SimConfig& cfg) {
  cfg.validate();
  const std::size_t n = graph.n();
  const LaplacianMatrix lap = laplacian_of(graph);
  if (cfg.kind == DynamicsKind::Consensus) detail::check_consensus_dt(lap, cfg.dt);

  Rng rng(cfg.seed);
  Trajectory traj;
  traj.config = cfg;
  traj.config_fingerprint = fingerprint(nlohmann::json(cfg));
  traj.graph_fingerprint = fingerprint(graph_to_json(graph));
  traj.states = MatrixD(cfg.steps, n);

  Vector x(n);
  for (auto& v : x) v = rng.uniform(cfg.init_low, cfg.init_high);
  if (cfg.kind == DynamicsKind::Kuramoto) {
    traj.omega.resize(n);
    for (auto& w : traj.omega) w = rng.uniform(cfg.omega_low, cfg.omega_high);
  }

  std::copy(x.begin(), x.end(), traj.states.row(0).begin());
  for (std::size_t t = 1; t < cfg.steps; ++t) {
    x = advance(x, graph, lap, traj.omega, cfg);
    if (!all_finite(x))
      throw DivergenceError("simulation diverged at step " + std::to_string(t), t);
    std::copy(x.begin(), x.end(), traj.states.row(t).begin());
  }
  return traj;
}

/// Consecutive-row pairs of every trajectory, in trajectory then time order.
inline Dataset build_dataset(const std::vector<Trajectory>& trajectories) {
  Dataset ds;
  if (trajectories.empty()) return ds;
  ds.n = trajectories.front().n();
  std::size_t pairs = 0;
  for (const auto& t : trajectories) {
    if (t.n() != ds.n) throw ShapeError("build_dataset: trajectories disagree on N");
    if (t.steps() >= 1) pairs += t.steps() - 1;
  }
  ds.inputs = MatrixD(pairs, ds.n);
  ds.targets = MatrixD(pairs, ds.n);
  std::size_t k = 0;
  for (const auto& t : trajectories) {
    for (std::size_t s = 0; s + 1 < t.steps(); ++s, ++k) {
      std::copy_n(t.states.row(s).begin(), ds.n, ds.inputs.row(k).begin());
      std::copy_n(t.states.row(s + 1).begin(), ds.n, ds.targets.row(k).begin());
    }
    ds.provenance.push_back(t.config_fingerprint ^ t.graph_fingerprint);
  }
  return ds;
}

// ---- CSV persistence -------------------------------------------------------

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Header `t,x0,...,x{N-1}`; values with 17 significant digits.
inline void write_trajectory_csv(std::ostream& os, const MatrixD& states) {
  os << "t";
  for (std::size_t i = 0; i < states.cols(); ++i) os << ",x" << i;
  os << "\n";
  for (std::size_t t = 0; t < states.rows(); ++t) {
    os << t;
    for (double v : states.row(t)) os << ',' << format_double(v);
    os << "\n";
  }
}

inline MatrixD read_trajectory_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("t", 0) != 0)
    throw InputError("trajectory csv: missing header");
  std::size_t n = 0;
  for (char c : line) n += (c == ',');
  if (n == 0) throw InputError("trajectory csv: no state columns");

  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');  // time index
    std::size_t cols = 0;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) throw InputError("trajectory csv: bad number '" + cell + "'");
      values.push_back(v);
      ++cols;
    }
    if (cols != n) throw InputError("trajectory csv: ragged row " + std::to_string(rows));
    ++rows;
  }
  MatrixD m(rows, n);
  std::copy(values.begin(), values.end(), m.flat().begin());
  return m;
}

}  // namespace topoattn
