#pragma once

// Attention-based one-step predictor.
//
//   Q = E Wq,  K = E Wk                 (E: one learned embedding per agent)
//   logits = Q K^T / sqrt(d)            (state independent, N x N)
//   weights = row_softmax(logits)
//   V_j = x_j * w_value + b_value       (translation layer, shared)
//   hidden = weights * V
//   prediction_i = hidden_i . w_head + b_head
//
// The logits are the graph estimate; they never depend on the input state.

#include <algorithm>
#include <array>
#include <concepts>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "topoattn/errors.hpp"
#include "topoattn/matrix.hpp"
#include "topoattn/rng.hpp"

namespace topoattn {

struct ModelParams {
  MatrixD embeddings;  // N x d
  MatrixD w_query;     // d x d
  MatrixD w_key;       // d x d
  Vector w_value;      // d
  Vector b_value;      // d
  Vector w_head;       // d
  double b_head = 0.0;

  ModelParams() = default;
  ModelParams(std::size_t n, std::size_t d)
      : embeddings(n, d), w_query(d, d), w_key(d, d), w_value(d, 0.0),
        b_value(d, 0.0), w_head(d, 0.0) {}

  std::size_t n() const noexcept { return embeddings.rows(); }
  std::size_t d() const noexcept { return embeddings.cols(); }

  /// Zero-valued parameters with the same shapes (gradient / moment buffers).
  ModelParams zeros_like() const { return ModelParams(n(), d()); }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// The five learned blocks. Translation and head carry a weight and a bias.
enum class Block { Embeddings, Query, Key, Translation, Head };

inline constexpr std::array<Block, 5> kAllBlocks{Block::Embeddings, Block::Query, Block::Key,
                                                 Block::Translation, Block::Head};

inline std::string_view block_name(Block b) {
  switch (b) {
    case Block::Embeddings: return "embeddings";
    case Block::Query: return "query";
    case Block::Key: return "key";
    case Block::Translation: return "translation";
    case Block::Head: return "head";
  }
  return "?";
}

/// Visit every parameter tensor as a flat span, in a fixed order.
template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, ModelParams>
void for_each_tensor(P& p, F&& f) {
  f(Block::Embeddings, "embeddings", p.embeddings.flat());
  f(Block::Query, "w_query", p.w_query.flat());
  f(Block::Key, "w_key", p.w_key.flat());
  f(Block::Translation, "w_value", std::span(p.w_value));
  f(Block::Translation, "b_value", std::span(p.b_value));
  f(Block::Head, "w_head", std::span(p.w_head));
  f(Block::Head, "b_head", std::span(&p.b_head, 1));
}

inline bool all_finite(const ModelParams& p) {
  bool ok = true;
  for_each_tensor(p, [&](Block, std::string_view, auto s) { ok = ok && all_finite(s); });
  return ok;
}

inline void require_same_shape(const ModelParams& a, const ModelParams& b) {
  if (a.n() != b.n() || a.d() != b.d() || a.w_query.rows() != b.w_query.rows() ||
      a.w_value.size() != b.w_value.size() || a.w_head.size() != b.w_head.size())
    throw ShapeError("parameter shapes disagree");
}

/// Embeddings ~ N(0, 1); projection, translation and head weights
/// ~ U(-1/sqrt(d), 1/sqrt(d)); biases zero. Draw order follows the field order.
inline ModelParams init_params(std::size_t n, std::size_t d, std::uint64_t seed) {
  if (n < 2) throw ConfigError("model: n must be >= 2");
  if (d < 1) throw ConfigError("model: d must be >= 1");
  ModelParams p(n, d);
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (auto& v : p.embeddings.flat()) v = rng.normal();
  for (auto& v : p.w_query.flat()) v = rng.uniform(-bound, bound);
  for (auto& v : p.w_key.flat()) v = rng.uniform(-bound, bound);
  for (auto& v : p.w_value) v = rng.uniform(-bound, bound);
  for (auto& v : p.w_head) v = rng.uniform(-bound, bound);
  return p;
}

/// Q K^T / sqrt(d).
inline MatrixD attention_logits(const ModelParams& p) {
  const MatrixD q = matmul(p.embeddings, p.w_query);
  const MatrixD k = matmul(p.embeddings, p.w_key);
  MatrixD logits = matmul_nt(q, k);
  const double inv = 1.0 / std::sqrt(static_cast<double>(p.d()));
  for (auto& v : logits.flat()) v *= inv;
  return logits;
}

/// Max-subtracted row softmax.
inline MatrixD row_softmax(const MatrixD& logits) {
  MatrixD w(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto in = logits.row(i);
    auto out = w.row(i);
    const double m = *std::max_element(in.begin(), in.end());
    double s = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      out[j] = std::exp(in[j] - m);
      s += out[j];
    }
    for (auto& v : out) v /= s;
  }
  return w;
}

struct ForwardTrace {
  MatrixD logits;   // N x N, pre-softmax
  MatrixD weights;  // N x N, row-stochastic
  MatrixD values;   // N x d
  MatrixD hidden;   // N x d
  Vector prediction;
};

inline ForwardTrace forward(const ModelParams& p, std::span<const double> x) {
  const std::size_t n = p.n(), d = p.d();
  if (x.size() != n) throw ShapeError("forward: state length != N");
  if (!all_finite(x)) throw InputError("forward: non-finite input state");

  ForwardTrace t;
  t.logits = attention_logits(p);
  t.weights = row_softmax(t.logits);
  t.values = MatrixD(n, d);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < d; ++k) t.values(j, k) = x[j] * p.w_value[k] + p.b_value[k];
  t.hidden = matmul(t.weights, t.values);
  t.prediction.assign(n, p.b_head);
  for (std::size_t i = 0; i < n; ++i) {
    auto h = t.hidden.row(i);
    for (std::size_t k = 0; k < d; ++k) t.prediction[i] += h[k] * p.w_head[k];
  }
  return t;
}

inline Vector predict_next(const ModelParams& p, std::span<const double> x) {
  return forward(p, x).prediction;
}

// ---- checkpoint JSON -------------------------------------------------------

/// {"n", "d", "seeds": {...}, one row-major array per tensor}.
inline nlohmann::json params_to_json(const ModelParams& p,
                                     const nlohmann::json& seeds = nlohmann::json::object()) {
  nlohmann::json j{{"n", p.n()}, {"d", p.d()}, {"seeds", seeds}};
  for_each_tensor(p, [&](Block, std::string_view name, std::span<const double> s) {
    if (name == "b_head")
      j[std::string(name)] = s[0];
    else
      j[std::string(name)] = std::vector<double>(s.begin(), s.end());
  });
  return j;
}

inline ModelParams params_from_json(const nlohmann::json& j) {
  try {
    const auto n = j.at("n").get<std::size_t>();
    const auto d = j.at("d").get<std::size_t>();
    if (n < 2 || d < 1) throw ConfigError("checkpoint: invalid n or d");
    ModelParams p(n, d);
    for_each_tensor(p, [&](Block, std::string_view name, std::span<double> s) {
      const auto& v = j.at(std::string(name));
      if (name == "b_head") {
        s[0] = v.get<double>();
        return;
      }
      const auto vals = v.get<std::vector<double>>();
      if (vals.size() != s.size())
        throw ConfigError("checkpoint: tensor '" + std::string(name) + "' has wrong size");
      std::copy(vals.begin(), vals.end(), s.begin());
    });
    if (!all_finite(p)) throw ConfigError("checkpoint: non-finite parameter");
    return p;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("checkpoint: ") + ex.what());
  }
}

}  // namespace topoattn
