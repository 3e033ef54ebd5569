#pragma once

// Undirected simple graphs: adjacency matrices, Erdos-Renyi sampling and the
// combinatorial Laplacian L = D - A.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "topoattn/errors.hpp"
#include "topoattn/matrix.hpp"
#include "topoattn/rng.hpp"

namespace topoattn {

using Edge = std::pair<std::size_t, std::size_t>;

/// Binary, symmetric, zero-diagonal N x N matrix. Immutable once built; every
/// constructor path validates the invariants.
class AdjacencyMatrix {
 public:
  /// Empty graph on n nodes.
  explicit AdjacencyMatrix(std::size_t n) : entries_(n, n, 0) {}

  /// From an explicit edge list. Throws ConfigError on self-loops or
  /// out-of-range endpoints; duplicate edges are merged.
  static AdjacencyMatrix from_edges(std::size_t n, const std::vector<Edge>& edges) {
    AdjacencyMatrix a(n);
    for (auto [i, j] : edges) {
      if (i >= n || j >= n) throw ConfigError("edge endpoint out of range");
      if (i == j) throw ConfigError("self-loop in edge list");
      a.entries_(i, j) = 1;
      a.entries_(j, i) = 1;
    }
    return a;
  }

  /// From a dense 0/1 matrix. Throws ConfigError if any invariant fails.
  static AdjacencyMatrix from_dense(const Matrix<std::uint8_t>& m) {
    if (m.rows() != m.cols()) throw ShapeError("adjacency matrix must be square");
    const std::size_t n = m.rows();
    for (std::size_t i = 0; i < n; ++i) {
      if (m(i, i) != 0) throw ConfigError("adjacency diagonal must be zero");
      for (std::size_t j = 0; j < n; ++j) {
        if (m(i, j) > 1) throw ConfigError("adjacency entries must be 0 or 1");
        if (m(i, j) != m(j, i)) throw ConfigError("adjacency must be symmetric");
      }
    }
    AdjacencyMatrix a(n);
    a.entries_ = m;
    return a;
  }

  std::size_t n() const noexcept { return entries_.rows(); }
  std::uint8_t operator()(std::size_t i, std::size_t j) const noexcept {
    return entries_(i, j);
  }
  bool has_edge(std::size_t i, std::size_t j) const noexcept {
    return entries_(i, j) != 0;
  }
  const Matrix<std::uint8_t>& dense() const noexcept { return entries_; }

  std::size_t degree(std::size_t i) const noexcept {
    std::size_t d = 0;
    for (auto v : entries_.row(i)) d += v;
    return d;
  }

  std::size_t max_degree() const noexcept {
    std::size_t m = 0;
    for (std::size_t i = 0; i < n(); ++i) m = std::max(m, degree(i));
    return m;
  }

  std::size_t edge_count() const noexcept {
    std::size_t s = 0;
    for (auto v : entries_.flat()) s += v;
    return s / 2;
  }

  friend bool operator==(const AdjacencyMatrix&, const AdjacencyMatrix&) = default;

 private:
  Matrix<std::uint8_t> entries_;
};

struct GraphSpec {
  std::size_t n = 5;
  double p = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 2) throw ConfigError("graph: n must be >= 2");
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("graph: p must lie in [0, 1]");
  }
};

/// Combinatorial Laplacian. Built from integer degrees so row sums are exactly 0.
class LaplacianMatrix {
 public:
  explicit LaplacianMatrix(const AdjacencyMatrix& a) : entries_(a.n(), a.n()) {
    const std::size_t n = a.n();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j)
        if (a.has_edge(i, j)) entries_(i, j) = -1.0;
      entries_(i, i) = static_cast<double>(a.degree(i));
    }
    max_degree_ = a.max_degree();
  }

  std::size_t n() const noexcept { return entries_.rows(); }
  double operator()(std::size_t i, std::size_t j) const noexcept {
    return entries_(i, j);
  }
  const MatrixD& dense() const noexcept { return entries_; }

  /// Gershgorin bound: lambda_max(L) <= 2 * max_degree.
  double spectral_upper_bound() const noexcept {
    return 2.0 * static_cast<double>(max_degree_);
  }

 private:
  MatrixD entries_;
  std::size_t max_degree_ = 0;
};

/// G(n, p): each unordered pair {i, j}, i < j, visited in row-major order and
/// kept with probability p using one Rng stream seeded by spec.seed.
inline AdjacencyMatrix generate_erdos_renyi(const GraphSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < spec.n; ++i)
    for (std::size_t j = i + 1; j < spec.n; ++j)
      if (rng.bernoulli(spec.p)) edges.emplace_back(i, j);
  return AdjacencyMatrix::from_edges(spec.n, edges);
}

inline LaplacianMatrix laplacian_of(const AdjacencyMatrix& a) {
  return LaplacianMatrix(a);
}

/// Edges as (i, j) with i < j, sorted lexicographically.
inline std::vector<Edge> edge_set(const AdjacencyMatrix& a) {
  std::vector<Edge> out;
  for (std::size_t i = 0; i < a.n(); ++i)
    for (std::size_t j = i + 1; j < a.n(); ++j)
      if (a.has_edge(i, j)) out.emplace_back(i, j);
  return out;
}

/// True when every node is reachable from node 0.
inline bool is_connected(const AdjacencyMatrix& a) {
  const std::size_t n = a.n();
  if (n == 0) return true;
  std::vector<bool> seen(n, false);
  std::vector<std::size_t> stack{0};
  seen[0] = true;
  while (!stack.empty()) {
    const auto u = stack.back();
    stack.pop_back();
    for (std::size_t v = 0; v < n; ++v) {
      if (a.has_edge(u, v) && !seen[v]) {
        seen[v] = true;
        stack.push_back(v);
      }
    }
  }
  return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
}

// {"n": int, "edges": [[i, j], ...]} with i < j, sorted.
inline nlohmann::json graph_to_json(const AdjacencyMatrix& a) {
  nlohmann::json edges = nlohmann::json::array();
  for (auto [i, j] : edge_set(a)) edges.push_back({i, j});
  return {{"n", a.n()}, {"edges", std::move(edges)}};
}

inline AdjacencyMatrix graph_from_json(const nlohmann::json& j) {
  try {
    const auto n = j.at("n").get<std::size_t>();
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw ConfigError("graph json: edge must be [i, j]");
      edges.emplace_back(e[0].get<std::size_t>(), e[1].get<std::size_t>());
    }
    return AdjacencyMatrix::from_edges(n, edges);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("graph json: ") + ex.what());
  }
}

}  // namespace topoattn
