#pragma once

// Mean-absolute-error objective, hand-derived reverse-mode gradients, Adam,
// and the epoch loop.
//
// Two gradient routes exist and both are checked against finite differences:
//   * backward()        walks the cached ForwardTrace block by block;
//   * batch_gradient()  uses the factored form the training loop runs on.
// The factored form relies on the rows of the softmax summing to one and on
// the logits being independent of the state, so per pair
//   pred_i = sum_j W_ij u_j + b_head,  u_j = x_j (w_head.w_value) + w_head.b_value
// and every state-side gradient reduces to two scalar sums per batch.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "topoattn/dynamics.hpp"
#include "topoattn/errors.hpp"
#include "topoattn/matrix.hpp"
#include "topoattn/model.hpp"
#include "topoattn/rng.hpp"

namespace topoattn {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  std::uint64_t shuffle_seed = 0;
  std::size_t snapshot_every = 10;  // 0: final epoch only

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train: beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: beta2 must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("train: epsilon must be > 0");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  }

  bool is_snapshot_epoch(std::size_t epoch) const noexcept {
    return epoch == epochs || (snapshot_every > 0 && epoch % snapshot_every == 0);
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"beta1", c.beta1},
       {"beta2", c.beta2},                 {"epsilon", c.epsilon},
       {"epochs", c.epochs},               {"batch_size", c.batch_size},
       {"shuffle_seed", c.shuffle_seed},   {"snapshot_every", c.snapshot_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.shuffle_seed = j.value("shuffle_seed", c.shuffle_seed);
  c.snapshot_every = j.value("snapshot_every", c.snapshot_every);
}

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(const ModelParams& like) : m(like.zeros_like()), v(like.zeros_like()) {}
};

struct TrainReport {
  std::vector<double> loss;                 // mean training loss per epoch
  std::map<std::size_t, MatrixD> snapshots;  // epoch (1-based) -> logits
  TrainConfig config;
  std::uint64_t final_params_fingerprint = 0;
};

/// (1/N) sum_i |pred_i - target_i|
inline double mae_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw ShapeError("mae_loss: length mismatch");
  if (pred.empty()) throw ShapeError("mae_loss: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

inline double sign0(double v) noexcept { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

namespace detail {

/// Softmax Jacobian then the scaled bilinear form, accumulating into `g`.
inline void attention_backward(const ModelParams& p, const MatrixD& weights,
                               const MatrixD& d_weights, ModelParams& g) {
  const std::size_t n = p.n();
  MatrixD d_logits(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    auto w = weights.row(i);
    auto dw = d_weights.row(i);
    double dot = 0.0;
    for (std::size_t k = 0; k < n; ++k) dot += w[k] * dw[k];
    for (std::size_t j = 0; j < n; ++j) d_logits(i, j) = w[j] * (dw[j] - dot);
  }
  const double inv = 1.0 / std::sqrt(static_cast<double>(p.d()));
  for (auto& v : d_logits.flat()) v *= inv;

  const MatrixD q = matmul(p.embeddings, p.w_query);
  const MatrixD k = matmul(p.embeddings, p.w_key);
  const MatrixD dq = matmul(d_logits, k);     // N x d
  const MatrixD dk = matmul_tn(d_logits, q);  // N x d

  const MatrixD gq = matmul_tn(p.embeddings, dq);
  const MatrixD gk = matmul_tn(p.embeddings, dk);
  const MatrixD ge = [&] {
    MatrixD a = matmul_nt(dq, p.w_query);
    const MatrixD b = matmul_nt(dk, p.w_key);
    for (std::size_t i = 0; i < a.size(); ++i) a.flat()[i] += b.flat()[i];
    return a;
  }();
  auto add = [](MatrixD& dst, const MatrixD& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst.flat()[i] += src.flat()[i];
  };
  add(g.w_query, gq);
  add(g.w_key, gk);
  add(g.embeddings, ge);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

/// Exact gradient of mae_loss(forward(p, x).prediction, target) w.r.t. every
/// parameter, walking the trace: head -> weighted sum -> softmax -> Q K^T ->
/// embeddings/projections, and weighted sum -> translation layer.
/// sign(0) is taken as 0 at the MAE kinks.
inline ModelParams backward(const ModelParams& p, const ForwardTrace& t,
                            std::span<const double> x, std::span<const double> target) {
  const std::size_t n = p.n(), d = p.d();
  if (x.size() != n || target.size() != n || t.prediction.size() != n ||
      t.weights.rows() != n || t.values.cols() != d)
    throw ShapeError("backward: trace or vector shape mismatch");

  ModelParams g = p.zeros_like();
  Vector dpred(n);
  for (std::size_t i = 0; i < n; ++i)
    dpred[i] = sign0(t.prediction[i] - target[i]) / static_cast<double>(n);

  // head
  MatrixD dhidden(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    g.b_head += dpred[i];
    for (std::size_t k = 0; k < d; ++k) {
      g.w_head[k] += dpred[i] * t.hidden(i, k);
      dhidden(i, k) = dpred[i] * p.w_head[k];
    }
  }
  // hidden = weights * values
  const MatrixD d_weights = matmul_nt(dhidden, t.values);
  const MatrixD dvalues = matmul_tn(t.weights, dhidden);
  // values_j = x_j w_value + b_value
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < d; ++k) {
      g.w_value[k] += x[j] * dvalues(j, k);
      g.b_value[k] += dvalues(j, k);
    }
  detail::attention_backward(p, t.weights, d_weights, g);
  return g;
}

/// Mean loss and mean gradient over the dataset rows listed in `rows`.
struct BatchResult {
  ModelParams grad;
  double loss = 0.0;  // mean over rows
};

inline BatchResult batch_gradient(const ModelParams& p, const MatrixD& inputs,
                                  const MatrixD& targets, std::span<const std::size_t> rows) {
  const std::size_t n = p.n();
  if (inputs.cols() != n || targets.cols() != n)
    throw ShapeError("batch_gradient: dataset N != model N");
  if (rows.empty()) throw ShapeError("batch_gradient: empty batch");

  const MatrixD weights = row_softmax(attention_logits(p));
  const double alpha = detail::dot(p.w_head, p.w_value);
  const double beta = detail::dot(p.w_head, p.b_value);
  const double scale = 1.0 / (static_cast<double>(rows.size()) * static_cast<double>(n));

  MatrixD d_weights(n, n);
  Vector u(n), gvec(n);
  double sum_cx = 0.0, sum_c = 0.0, sum_g = 0.0, loss = 0.0;

  for (std::size_t r : rows) {
    auto x = inputs.row(r);
    auto y = targets.row(r);
    for (std::size_t j = 0; j < n; ++j) u[j] = alpha * x[j] + beta;
    for (std::size_t i = 0; i < n; ++i) {
      auto w = weights.row(i);
      double pred = p.b_head;
      for (std::size_t j = 0; j < n; ++j) pred += w[j] * u[j];
      const double resid = pred - y[i];
      loss += std::abs(resid);
      gvec[i] = sign0(resid) * scale;
      sum_g += gvec[i];
      auto dw = d_weights.row(i);
      for (std::size_t j = 0; j < n; ++j) dw[j] += gvec[i] * u[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
      double c = 0.0;
      for (std::size_t i = 0; i < n; ++i) c += weights(i, j) * gvec[i];
      sum_cx += c * x[j];
      sum_c += c;
    }
  }

  BatchResult out{p.zeros_like(), loss * scale};
  auto& g = out.grad;
  g.b_head = sum_g;
  for (std::size_t k = 0; k < p.d(); ++k) {
    g.w_head[k] = sum_cx * p.w_value[k] + sum_c * p.b_value[k];
    g.w_value[k] = sum_cx * p.w_head[k];
    g.b_value[k] = sum_c * p.w_head[k];
  }
  detail::attention_backward(p, weights, d_weights, g);
  return out;
}

/// Adam with bias correction; increments state.step.
inline void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
                      const TrainConfig& cfg) {
  require_same_shape(params, grads);
  require_same_shape(params, state.m);
  require_same_shape(params, state.v);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);

  std::vector<std::span<double>> ps, ms, vs;
  std::vector<std::span<const double>> gs;
  for_each_tensor(params, [&](Block, std::string_view, std::span<double> s) { ps.push_back(s); });
  for_each_tensor(state.m, [&](Block, std::string_view, std::span<double> s) { ms.push_back(s); });
  for_each_tensor(state.v, [&](Block, std::string_view, std::span<double> s) { vs.push_back(s); });
  for_each_tensor(grads, [&](Block, std::string_view, std::span<const double> s) { gs.push_back(s); });

  for (std::size_t b = 0; b < ps.size(); ++b) {
    for (std::size_t i = 0; i < ps[b].size(); ++i) {
      const double g = gs[b][i];
      double& m = ms[b][i];
      double& v = vs[b][i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      ps[b][i] -= cfg.learning_rate * (m / c1) / (std::sqrt(v / c2) + cfg.epsilon);
    }
  }
}

inline std::uint64_t params_fingerprint(const ModelParams& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for_each_tensor(p, [&](Block, std::string_view, std::span<const double> s) {
    for (double v : s) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof v);
      for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
      }
    }
  });
  return h;
}

/// Optional per-epoch observer (epoch, mean loss).
using EpochCallback = std::function<void(std::size_t, double)>;

/// Fixed-epoch minibatch Adam. Each epoch reshuffles the pair order with one
/// Rng(shuffle_seed) stream; batch gradients are means over their pairs and
/// are accumulated sequentially, so a run is bit-reproducible.
inline std::pair<ModelParams, TrainReport> train(ModelParams params, const Dataset& data,
                                                 const TrainConfig& cfg,
                                                 const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.empty()) throw InputError("train: dataset is empty");
  if (data.n != params.n()) throw ShapeError("train: dataset N != model N");

  TrainReport report;
  report.config = cfg;
  AdamState state(params);
  Rng rng(cfg.shuffle_seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::size_t batch_index = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      const std::span<const std::size_t> rows(order.data() + start, len);
      auto [grad, loss] = batch_gradient(params, data.inputs, data.targets, rows);
      if (!std::isfinite(loss) || !all_finite(grad)) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                                  ", batch " + std::to_string(batch_index),
                              batch_index);
      }
      loss_sum += loss * static_cast<double>(len);
      adam_step(params, grad, state, cfg);
    }
    const double mean = loss_sum / static_cast<double>(order.size());
    report.loss.push_back(mean);
    if (cfg.is_snapshot_epoch(epoch)) report.snapshots.emplace(epoch, attention_logits(params));
    if (on_epoch) on_epoch(epoch, mean);
  }
  if (!all_finite(params))
    throw DivergenceError("training produced non-finite parameters", batch_index);
  report.final_params_fingerprint = params_fingerprint(params);
  return {std::move(params), std::move(report)};
}

inline nlohmann::json matrix_to_json(const MatrixD& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return rows;
}

inline MatrixD matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  MatrixD m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != m.cols()) throw ShapeError("matrix json: ragged rows");
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  }
  return m;
}

inline std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// {"loss": [...], "snapshots": {"<epoch>": [[...]]}, "config": {...}, ...}
inline nlohmann::json report_to_json(const TrainReport& r) {
  nlohmann::json snaps = nlohmann::json::object();
  for (const auto& [epoch, logits] : r.snapshots) snaps[std::to_string(epoch)] = matrix_to_json(logits);
  return {{"loss", r.loss},
          {"snapshots", std::move(snaps)},
          {"config", r.config},
          {"final_params_fingerprint", hex64(r.final_params_fingerprint)}};
}

inline void write_loss_csv(std::ostream& os, const TrainReport& r) {
  os << "epoch,loss\n";
  for (std::size_t e = 0; e < r.loss.size(); ++e) os << (e + 1) << ',' << format_double(r.loss[e]) << '\n';
}

// ---- finite-difference gradient check --------------------------------------

struct GradCheckReport {
  std::size_t trials = 0;
  double tolerance = 0.0;
  std::map<Block, double> max_rel_error;  // per block, over both gradient routes
  double worst_error = 0.0;
  std::string worst_coordinate;           // "<route>:<tensor>[<index>]"
  bool passed = true;
};

/// Gradient route under test; defaults to backward(). Tests inject corrupted
/// variants here as a negative control.
using GradientFn = std::function<ModelParams(const ModelParams&, const ForwardTrace&,
                                             std::span<const double>, std::span<const double>)>;

/// Relative error |a - f| / max(|a|, |f|, floor). The floor keeps coordinates
/// whose true gradient is ~0 from reporting pure rounding noise.
inline double relative_error(double analytic, double numeric, double floor = 1e-5) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Random models and pairs; compares both gradient routes with central
/// differences (step h). Targets sit at least 0.25 away from each prediction
/// so no perturbation crosses an MAE kink.
inline GradCheckReport grad_check(std::size_t n, std::size_t d, std::size_t trials,
                                  double tolerance, std::uint64_t seed = 7,
                                  const GradientFn& gradient = {}, double h = 1e-6) {
  GradCheckReport rep;
  rep.trials = trials;
  rep.tolerance = tolerance;
  for (Block b : kAllBlocks) rep.max_rel_error[b] = 0.0;

  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::uint64_t ts = derive_seed(seed, "gradcheck", trial);
    ModelParams p = init_params(n, d, derive_seed(ts, "init"));
    Rng rng(derive_seed(ts, "data"));
    for (auto& v : p.b_value) v = rng.uniform(-0.5, 0.5);
    p.b_head = rng.uniform(-0.5, 0.5);
    Vector x(n), y(n);
    for (auto& v : x) v = rng.uniform(-2.0, 2.0);
    const ForwardTrace trace = forward(p, x);
    for (std::size_t i = 0; i < n; ++i) {
      const double off = rng.uniform(0.25, 1.0);
      y[i] = trace.prediction[i] + (rng.bernoulli(0.5) ? off : -off);
    }

    const ModelParams g_trace = gradient ? gradient(p, trace, x, y) : backward(p, trace, x, y);
    MatrixD xs(1, n), ys(1, n);
    std::copy(x.begin(), x.end(), xs.row(0).begin());
    std::copy(y.begin(), y.end(), ys.row(0).begin());
    const std::size_t row0 = 0;
    const ModelParams g_batch = batch_gradient(p, xs, ys, std::span(&row0, 1)).grad;

    auto loss_at = [&](const ModelParams& q) { return mae_loss(forward(q, x).prediction, y); };

    std::vector<std::span<const double>> gt, gb;
    for_each_tensor(g_trace, [&](Block, std::string_view, std::span<const double> s) { gt.push_back(s); });
    for_each_tensor(g_batch, [&](Block, std::string_view, std::span<const double> s) { gb.push_back(s); });

    std::size_t tensor = 0;
    ModelParams probe = p;
    for_each_tensor(probe, [&](Block block, std::string_view name, std::span<double> s) {
      for (std::size_t i = 0; i < s.size(); ++i) {
        const double orig = s[i];
        s[i] = orig + h;
        const double lp = loss_at(probe);
        s[i] = orig - h;
        const double lm = loss_at(probe);
        s[i] = orig;
        const double numeric = (lp - lm) / (2.0 * h);
        const std::pair<const char*, double> routes[] = {{"backward", gt[tensor][i]},
                                                         {"batch", gb[tensor][i]}};
        for (auto [route, analytic] : routes) {
          const double err = relative_error(analytic, numeric);
          rep.max_rel_error[block] = std::max(rep.max_rel_error[block], err);
          if (err > rep.worst_error) {
            rep.worst_error = err;
            rep.worst_coordinate =
                std::string(route) + ":" + std::string(name) + "[" + std::to_string(i) + "]";
          }
        }
      }
      ++tensor;
    });
  }
  rep.passed = rep.worst_error <= tolerance;
  return rep;
}

}  // namespace topoattn
