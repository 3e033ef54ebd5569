#pragma once

// From learned attention scores to a predicted graph, and edge-level scoring
// against the ground truth.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "topoattn/dynamics.hpp"
#include "topoattn/errors.hpp"
#include "topoattn/graph.hpp"
#include "topoattn/matrix.hpp"
#include "topoattn/model.hpp"
#include "topoattn/rng.hpp"

namespace topoattn {

enum class ScoreSource { PreSoftmaxLogits, SoftmaxWeights };
enum class Symmetrization { Mean, Max, None };

NLOHMANN_JSON_SERIALIZE_ENUM(ScoreSource, {{ScoreSource::PreSoftmaxLogits, "logits"},
                                           {ScoreSource::SoftmaxWeights, "softmax"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Symmetrization, {{Symmetrization::Mean, "mean"},
                                              {Symmetrization::Max, "max"},
                                              {Symmetrization::None, "none"}})

struct InferenceConfig {
  double threshold = -0.4;
  ScoreSource source = ScoreSource::PreSoftmaxLogits;
  Symmetrization symmetrization = Symmetrization::Mean;
  bool exclude_diagonal = true;

  void validate() const {
    // +/-inf are allowed: they give the empty and the complete prediction.
    if (std::isnan(threshold)) throw ConfigError("inference: threshold must not be NaN");
    if (!exclude_diagonal)
      throw ConfigError("inference: self-loops cannot be predicted (exclude_diagonal must be true)");
  }
};

inline void to_json(nlohmann::json& j, const InferenceConfig& c) {
  j = {{"threshold", c.threshold},
       {"source", c.source},
       {"symmetrization", c.symmetrization},
       {"exclude_diagonal", c.exclude_diagonal}};
}

inline void from_json(const nlohmann::json& j, InferenceConfig& c) {
  c = InferenceConfig{};
  c.threshold = j.value("threshold", c.threshold);
  c.source = j.value("source", c.source);
  c.symmetrization = j.value("symmetrization", c.symmetrization);
  c.exclude_diagonal = j.value("exclude_diagonal", c.exclude_diagonal);
}

/// Symmetrize, drop the diagonal, keep every pair whose score is >= threshold.
inline AdjacencyMatrix binarize_attention(const MatrixD& logits, const InferenceConfig& cfg) {
  cfg.validate();
  if (logits.rows() != logits.cols()) throw ShapeError("binarize_attention: scores must be square");
  if (!all_finite(logits.flat())) throw InputError("binarize_attention: non-finite scores");
  const MatrixD s = cfg.source == ScoreSource::SoftmaxWeights ? row_softmax(logits) : logits;
  const std::size_t n = s.rows();

  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double v = 0.0;
      switch (cfg.symmetrization) {
        case Symmetrization::Mean: v = 0.5 * (s(i, j) + s(j, i)); break;
        case Symmetrization::Max: v = std::max(s(i, j), s(j, i)); break;
        case Symmetrization::None:
          if (s(i, j) != s(j, i))
            throw InputError("binarize_attention: scores are not symmetric");
          v = s(i, j);
          break;
      }
      if (v >= cfg.threshold) edges.emplace_back(i, j);
    }
  }
  return AdjacencyMatrix::from_edges(n, edges);
}

struct MetricsReport {
  std::size_t n = 0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  std::size_t predicted_edges = 0;
  std::size_t true_edges = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double baseline_f1_mean = 0.0;
  double baseline_f1_std = 0.0;
};

/// Scores over unordered off-diagonal pairs. Zero denominators give 0.
inline MetricsReport precision_recall_f1(const AdjacencyMatrix& predicted,
                                         const AdjacencyMatrix& truth) {
  if (predicted.n() != truth.n()) throw ShapeError("precision_recall_f1: graph sizes differ");
  MetricsReport r;
  r.n = truth.n();
  for (std::size_t i = 0; i < r.n; ++i) {
    for (std::size_t j = i + 1; j < r.n; ++j) {
      const bool p = predicted.has_edge(i, j), t = truth.has_edge(i, j);
      r.true_positives += p && t;
      r.false_positives += p && !t;
      r.false_negatives += !p && t;
    }
  }
  r.predicted_edges = r.true_positives + r.false_positives;
  r.true_edges = r.true_positives + r.false_negatives;
  const auto tp = static_cast<double>(r.true_positives);
  r.precision = r.predicted_edges ? tp / static_cast<double>(r.predicted_edges) : 0.0;
  r.recall = r.true_edges ? tp / static_cast<double>(r.true_edges) : 0.0;
  const double denom = r.precision + r.recall;
  r.f1 = denom > 0.0 ? 2.0 * r.precision * r.recall / denom : 0.0;
  return r;
}

struct BaselineStats {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single trial
};

/// F1 of `trials` independent G(N, p) samples against `truth`. Trial t uses
/// seed derive_seed(seed, "baseline", t); the reduction runs in trial order.
inline BaselineStats random_baseline_f1(const AdjacencyMatrix& truth, double p, std::size_t trials,
                                        std::uint64_t seed) {
  if (trials < 1) throw ConfigError("random_baseline_f1: trials must be >= 1");
  std::vector<double> f1s;
  f1s.reserve(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    const GraphSpec spec{truth.n(), p, derive_seed(seed, "baseline", t)};
    f1s.push_back(precision_recall_f1(generate_erdos_renyi(spec), truth).f1);
  }
  BaselineStats s;
  for (double f : f1s) s.mean += f;
  s.mean /= static_cast<double>(trials);
  if (trials > 1) {
    double ss = 0.0;
    for (double f : f1s) ss += (f - s.mean) * (f - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(trials - 1));
  }
  return s;
}

struct DiagonalDominance {
  double fraction = 0.0;
  bool tie = false;  // some row's maximum was shared with an off-diagonal entry
};

/// Fraction of rows whose maximum sits on the diagonal; ties count for the diagonal.
inline DiagonalDominance diagonal_dominance(const MatrixD& logits) {
  if (logits.rows() != logits.cols() || logits.rows() == 0)
    throw ShapeError("diagonal_dominance: scores must be square and non-empty");
  DiagonalDominance out;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const double diag = logits(i, i);
    bool wins = true;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      if (j == i) continue;
      if (logits(i, j) > diag) wins = false;
      if (logits(i, j) == diag) out.tie = true;
    }
    hits += wins;
  }
  out.fraction = static_cast<double>(hits) / static_cast<double>(logits.rows());
  return out;
}

inline nlohmann::json metrics_to_json(const MetricsReport& r) {
  return {{"n", r.n},
          {"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1},
          {"true_positives", r.true_positives},
          {"false_positives", r.false_positives},
          {"false_negatives", r.false_negatives},
          {"predicted_edges", r.predicted_edges},
          {"true_edges", r.true_edges},
          {"baseline_f1_mean", r.baseline_f1_mean},
          {"baseline_f1_std", r.baseline_f1_std}};
}

inline constexpr const char* kMetricsCsvHeader =
    "n,sims,seed,threshold,precision,recall,f1,baseline_mean,baseline_std";

inline void write_metrics_csv_row(std::ostream& os, const MetricsReport& r, std::size_t sims,
                                  std::uint64_t seed, double threshold) {
  os << r.n << ',' << sims << ',' << seed << ',' << format_double(threshold) << ','
     << format_double(r.precision) << ',' << format_double(r.recall) << ','
     << format_double(r.f1) << ',' << format_double(r.baseline_f1_mean) << ','
     << format_double(r.baseline_f1_std) << '\n';
}

}  // namespace topoattn
