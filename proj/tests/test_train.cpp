#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "topoattn/train.hpp"

using namespace topoattn;

namespace {

// Central differences of the MAE loss, written against forward() only.
ModelParams numeric_gradient(const ModelParams& p, const Vector& x, const Vector& y, double h) {
  ModelParams g = p.zeros_like();
  ModelParams probe = p;
  std::vector<std::span<double>> out;
  for_each_tensor(g, [&](Block, std::string_view, std::span<double> s) { out.push_back(s); });
  std::size_t t = 0;
  for_each_tensor(probe, [&](Block, std::string_view, std::span<double> s) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double orig = s[i];
      s[i] = orig + h;
      const double lp = mae_loss(forward(probe, x).prediction, y);
      s[i] = orig - h;
      const double lm = mae_loss(forward(probe, x).prediction, y);
      s[i] = orig;
      out[t][i] = (lp - lm) / (2 * h);
    }
    ++t;
  });
  return g;
}

std::vector<double> flatten(const ModelParams& p) {
  std::vector<double> v;
  for_each_tensor(p, [&](Block, std::string_view, std::span<const double> s) {
    v.insert(v.end(), s.begin(), s.end());
  });
  return v;
}

Dataset consensus_dataset(std::size_t n, std::size_t sims, std::size_t steps, std::uint64_t seed) {
  const auto g = generate_erdos_renyi({n, 0.5, seed});
  std::vector<Trajectory> ts;
  for (std::size_t k = 0; k < sims; ++k) {
    SimConfig cfg;
    cfg.steps = steps;
    cfg.seed = derive_seed(seed, "sim", k);
    ts.push_back(simulate(g, cfg));
  }
  return build_dataset(ts);
}

}  // namespace

TEST(MaeLoss, Examples) {
  EXPECT_EQ(mae_loss(Vector{1, 2, 3}, Vector{1, 2, 3}), 0.0);
  EXPECT_EQ(mae_loss(Vector{1, 2}, Vector{0, 0}), 1.5);
  EXPECT_GE(mae_loss(Vector{-1, 5}, Vector{3, -2}), 0.0);
  EXPECT_THROW(mae_loss(Vector{1}, Vector{1, 2}), ShapeError);
}

TEST(Backward, PerfectPredictionGivesZeroGradient) {
  const auto p = init_params(4, 6, 3);
  const Vector x{1, -2, 0.5, 3};
  const auto t = forward(p, x);
  for (double v : flatten(backward(p, t, x, t.prediction))) EXPECT_EQ(v, 0.0);
}

TEST(Backward, ZeroHeadCutsAttentionGradients) {
  auto p = init_params(4, 6, 3);
  std::fill(p.w_head.begin(), p.w_head.end(), 0.0);
  const Vector x{1, -2, 0.5, 3}, y{4, 4, 4, 4};
  const auto g = backward(p, forward(p, x), x, y);
  for (double v : g.embeddings.flat()) EXPECT_EQ(v, 0.0);
  for (double v : g.w_query.flat()) EXPECT_EQ(v, 0.0);
  for (double v : g.w_key.flat()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, MatchesCentralDifferences) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto p = init_params(4, 8, 100 + s);
    Rng rng(s);
    for (auto& v : p.b_value) v = rng.uniform(-1, 1);
    Vector x(4), y(4);
    for (auto& v : x) v = rng.uniform(-3, 3);
    const auto t = forward(p, x);
    for (std::size_t i = 0; i < 4; ++i) y[i] = t.prediction[i] + (i % 2 ? 0.7 : -0.9);

    const auto a = flatten(backward(p, t, x, y));
    const auto f = flatten(numeric_gradient(p, x, y, 1e-6));
    for (std::size_t i = 0; i < a.size(); ++i)
      EXPECT_LE(std::abs(a[i] - f[i]) / std::max({std::abs(a[i]), std::abs(f[i]), 1e-5}), 1e-4)
          << "coordinate " << i;
  }
}

TEST(BatchGradient, EqualsMeanOfPerPairBackward) {
  const auto ds = consensus_dataset(5, 2, 30, 4);
  auto p = init_params(5, 8, 9);
  p.b_head = 0.3;
  std::vector<std::size_t> rows{0, 3, 7, 11, 29, 40, 57};
  const auto batch = batch_gradient(p, ds.inputs, ds.targets, rows);

  std::vector<double> mean(flatten(p).size(), 0.0);
  double loss = 0;
  for (auto r : rows) {
    const Vector x(ds.inputs.row(r).begin(), ds.inputs.row(r).end());
    const Vector y(ds.targets.row(r).begin(), ds.targets.row(r).end());
    const auto t = forward(p, x);
    loss += mae_loss(t.prediction, y);
    const auto g = flatten(backward(p, t, x, y));
    for (std::size_t i = 0; i < g.size(); ++i) mean[i] += g[i] / rows.size();
  }
  EXPECT_NEAR(batch.loss, loss / rows.size(), 1e-12);
  const auto b = flatten(batch.grad);
  for (std::size_t i = 0; i < b.size(); ++i)
    EXPECT_NEAR(b[i], mean[i], 1e-12 * std::max(1.0, std::abs(mean[i])));
}

TEST(AdamStep, ZeroGradientLeavesParamsUnchanged) {
  auto p = init_params(3, 4, 1);
  const auto before = p;
  AdamState st(p);
  adam_step(p, p.zeros_like(), st, TrainConfig{});
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 1u);
}

TEST(AdamStep, FirstStepMovesByLearningRate) {
  ModelParams p(2, 1);
  ModelParams g = p.zeros_like();
  g.b_head = 1.0;
  AdamState st(p);
  adam_step(p, g, st, TrainConfig{});
  // m_hat = g, v_hat = g^2 -> update = lr * g / (|g| + eps)
  EXPECT_NEAR(p.b_head, -1e-3 / (1.0 + 1e-8), 1e-15);
}

TEST(AdamStep, FirstStepFollowsNegativeGradientSign) {
  auto p = init_params(4, 5, 2);
  const auto before = flatten(p);
  ModelParams g = p.zeros_like();
  Rng rng(3);
  for_each_tensor(g, [&](Block, std::string_view, std::span<double> s) {
    for (auto& v : s) v = rng.uniform(-5, 5);
  });
  AdamState st(p);
  TrainConfig cfg;
  adam_step(p, g, st, cfg);
  const auto after = flatten(p), grad = flatten(g);
  for (std::size_t i = 0; i < grad.size(); ++i)
    EXPECT_NEAR(after[i] - before[i], -cfg.learning_rate * sign0(grad[i]), 1e-9);
}

TEST(AdamStep, ShapeMismatchRejected) {
  auto p = init_params(3, 4, 1);
  AdamState st(p);
  EXPECT_THROW(adam_step(p, init_params(4, 4, 1), st, TrainConfig{}), ShapeError);
}

TEST(TrainConfig, Invariants) {
  TrainConfig c;
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.beta1 = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, LossDecreasesAndRunsAreReproducible) {
  const auto ds = consensus_dataset(4, 10, 100, 2);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.snapshot_every = 5;
  cfg.shuffle_seed = 77;
  const auto [p1, r1] = train(init_params(4, 16, 5), ds, cfg);
  const auto [p2, r2] = train(init_params(4, 16, 5), ds, cfg);
  EXPECT_LT(r1.loss.back(), r1.loss.front());
  EXPECT_EQ(r1.loss, r2.loss);
  EXPECT_EQ(p1, p2);
  EXPECT_EQ(r1.final_params_fingerprint, params_fingerprint(p1));
  for (double l : r1.loss) {
    EXPECT_TRUE(std::isfinite(l));
    EXPECT_GE(l, 0.0);
  }
}

TEST(Train, SnapshotsOnScheduleAndFinalMatchesParams) {
  const auto ds = consensus_dataset(4, 3, 50, 1);
  TrainConfig cfg;
  cfg.epochs = 7;
  cfg.snapshot_every = 3;
  const auto [p, r] = train(init_params(4, 8, 5), ds, cfg);
  std::vector<std::size_t> epochs;
  for (const auto& [e, _] : r.snapshots) epochs.push_back(e);
  EXPECT_EQ(epochs, (std::vector<std::size_t>{3, 6, 7}));
  EXPECT_EQ(r.snapshots.at(7), attention_logits(p));
}

TEST(Train, RejectsBadInput) {
  const auto ds = consensus_dataset(4, 1, 10, 1);
  EXPECT_THROW(train(init_params(5, 8, 1), ds, TrainConfig{}), ShapeError);
  EXPECT_THROW(train(init_params(4, 8, 1), Dataset{}, TrainConfig{}), InputError);
  TrainConfig zero;
  zero.epochs = 0;
  EXPECT_THROW(train(init_params(4, 8, 1), ds, zero), ConfigError);
}

TEST(Train, DivergenceReported) {
  const auto ds = consensus_dataset(4, 2, 20, 1);
  TrainConfig cfg;
  cfg.learning_rate = 1e300;
  cfg.epochs = 5;
  EXPECT_THROW(train(init_params(4, 8, 1), ds, cfg), DivergenceError);
}

TEST(Train, ReportJsonLayout) {
  const auto ds = consensus_dataset(3, 2, 20, 1);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.snapshot_every = 1;
  const auto [p, r] = train(init_params(3, 4, 1), ds, cfg);
  const auto j = report_to_json(r);
  EXPECT_EQ(j.at("loss").size(), 2u);
  EXPECT_EQ(j.at("snapshots").at("2").size(), 3u);
  EXPECT_EQ(j.at("config").at("epochs"), 2);
  EXPECT_EQ(matrix_from_json(j.at("snapshots").at("2")), attention_logits(p));
}

TEST(GradCheck, PassesOnSmallModels) {
  const auto rep = grad_check(4, 8, 10, 1e-4);
  EXPECT_TRUE(rep.passed) << rep.worst_coordinate << " " << rep.worst_error;
  EXPECT_EQ(rep.max_rel_error.size(), 5u);
}

TEST(GradCheck, CorruptedGradientFails) {
  const GradientFn corrupt = [](const ModelParams& p, const ForwardTrace& t,
                                std::span<const double> x, std::span<const double> y) {
    auto g = backward(p, t, x, y);
    g.w_key(1, 2) *= 1.5;
    return g;
  };
  const auto rep = grad_check(4, 8, 2, 1e-4, 7, corrupt);
  EXPECT_FALSE(rep.passed);
  EXPECT_GT(rep.worst_error, 1e-4);
  EXPECT_EQ(rep.worst_coordinate, "backward:w_key[10]");
  EXPECT_GT(rep.max_rel_error.at(Block::Key), 1e-4);
}

TEST(GradCheck, ZeroTrialsIsEmptyPass) {
  const auto rep = grad_check(4, 8, 0, 1e-4);
  EXPECT_TRUE(rep.passed);
  EXPECT_EQ(rep.worst_error, 0.0);
  EXPECT_TRUE(rep.worst_coordinate.empty());
}
