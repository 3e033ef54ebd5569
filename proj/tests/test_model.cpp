#include <gtest/gtest.h>

#include <cmath>

#include "topoattn/model.hpp"

using namespace topoattn;

namespace {

ModelParams identity_model(const MatrixD& embeddings) {
  const std::size_t d = embeddings.cols();
  ModelParams p(embeddings.rows(), d);
  p.embeddings = embeddings;
  for (std::size_t i = 0; i < d; ++i) p.w_query(i, i) = p.w_key(i, i) = 1.0;
  return p;
}

}  // namespace

TEST(InitParams, ShapesBoundsAndDeterminism) {
  const auto p = init_params(5, 64, 11);
  EXPECT_EQ(p.embeddings.rows(), 5u);
  EXPECT_EQ(p.embeddings.cols(), 64u);
  EXPECT_EQ(p.w_query.rows(), 64u);
  EXPECT_EQ(p.w_key.cols(), 64u);
  EXPECT_EQ(p.w_value.size(), 64u);
  EXPECT_EQ(p.w_head.size(), 64u);
  EXPECT_EQ(p, init_params(5, 64, 11));
  EXPECT_NE(p, init_params(5, 64, 12));

  const double bound = 1.0 / 8.0;
  for (const auto* m : {&p.w_query, &p.w_key})
    for (double v : m->flat()) EXPECT_LE(std::abs(v), bound);
  for (double v : p.w_value) EXPECT_LE(std::abs(v), bound);
  for (double v : p.w_head) EXPECT_LE(std::abs(v), bound);
  for (double v : p.b_value) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(p.b_head, 0.0);
}

TEST(InitParams, RejectsDegenerateSizes) {
  EXPECT_THROW(init_params(1, 4, 0), ConfigError);
  EXPECT_THROW(init_params(3, 0, 0), ConfigError);
}

TEST(AttentionLogits, ZeroQueryGivesZeroLogits) {
  auto p = init_params(4, 6, 1);
  p.w_query.fill(0.0);
  const auto logits = attention_logits(p);
  for (double v : logits.flat()) EXPECT_EQ(v, 0.0);
}

TEST(AttentionLogits, HandComputedOneDimensional) {
  MatrixD e(2, 1);
  e(0, 0) = 1;
  e(1, 0) = 2;
  const auto l = attention_logits(identity_model(e));
  EXPECT_EQ(l(0, 0), 1.0);
  EXPECT_EQ(l(0, 1), 2.0);
  EXPECT_EQ(l(1, 0), 2.0);
  EXPECT_EQ(l(1, 1), 4.0);
}

TEST(AttentionLogits, IndependentOfState) {
  const auto p = init_params(6, 8, 3);
  const MatrixD before = attention_logits(p);
  const auto t1 = forward(p, Vector{1, 2, 3, 4, 5, 6});
  const auto t2 = forward(p, Vector{-9, 0, 0.5, 7, 2, 1});
  EXPECT_EQ(t1.logits, before);
  EXPECT_EQ(t2.logits, before);
  EXPECT_EQ(attention_logits(p), before);
}

TEST(Forward, ZeroHeadGivesBiasVector) {
  auto p = init_params(5, 8, 4);
  std::fill(p.w_head.begin(), p.w_head.end(), 0.0);
  p.b_head = 0.375;
  for (double v : predict_next(p, Vector{1, -2, 3, -4, 5})) EXPECT_EQ(v, 0.375);
}

TEST(Forward, ZeroLogitsAverageTheValues) {
  auto p = init_params(4, 5, 5);
  p.w_query.fill(0.0);
  const Vector x{1, 2, 3, 6};
  const auto t = forward(p, x);
  for (std::size_t k = 0; k < 5; ++k) {
    double mean = 0;
    for (std::size_t j = 0; j < 4; ++j) mean += t.values(j, k);
    mean /= 4;
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(t.hidden(i, k), mean, 1e-14);
  }
}

TEST(Forward, SoftmaxRowsAreDistributions) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto p = init_params(3 + s % 6, 4 + s % 5, s);
    for (auto& v : p.embeddings.flat()) v *= 30.0;  // push logits far apart
    Vector x(p.n(), 1.0);
    const auto t = forward(p, x);
    for (std::size_t i = 0; i < p.n(); ++i) {
      double sum = 0;
      for (double w : t.weights.row(i)) {
        EXPECT_GE(w, 0.0);
        sum += w;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(RowSoftmax, StableForHugeLogits) {
  MatrixD l(1, 3);
  l(0, 0) = 1000;
  l(0, 1) = 999;
  l(0, 2) = -1000;
  const auto w = row_softmax(l);
  EXPECT_TRUE(all_finite(w.flat()));
  EXPECT_NEAR(w(0, 0), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
}

TEST(Forward, PermutationConsistency) {
  const auto p = init_params(5, 7, 21);
  const Vector x{0.5, -1, 2, 3.5, -0.25};
  const std::size_t perm[5] = {3, 0, 4, 1, 2};
  ModelParams q = p;
  Vector y(5);
  for (std::size_t i = 0; i < 5; ++i) {
    std::copy_n(p.embeddings.row(perm[i]).begin(), 7, q.embeddings.row(i).begin());
    y[i] = x[perm[i]];
  }
  const auto a = forward(p, x), b = forward(q, y);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(b.prediction[i], a.prediction[perm[i]], 1e-12);
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(b.logits(i, j), a.logits(perm[i], perm[j]), 1e-12);
  }
}

TEST(Forward, InputErrors) {
  const auto p = init_params(3, 4, 0);
  EXPECT_THROW(forward(p, Vector{1, 2}), ShapeError);
  EXPECT_THROW(forward(p, Vector{1, NAN, 2}), InputError);
  EXPECT_THROW(forward(p, Vector{1, INFINITY, 2}), InputError);
}

TEST(PredictNext, DeterministicWithLengthN) {
  const auto p = init_params(6, 8, 2);
  const Vector x{1, 2, 3, 4, 5, 6};
  const auto a = predict_next(p, x);
  EXPECT_EQ(a.size(), 6u);
  EXPECT_EQ(a, predict_next(p, x));
}

TEST(Checkpoint, BitExactRoundTrip) {
  auto p = init_params(4, 6, 13);
  p.b_head = 0.1 + 0.2;
  p.b_value[2] = -1e-300;
  const auto j = nlohmann::json::parse(params_to_json(p, {{"init", 5}}).dump());
  EXPECT_EQ(params_from_json(j), p);
  EXPECT_EQ(j.at("seeds").at("init"), 5);
}

TEST(Checkpoint, RejectsWrongSizes) {
  auto j = params_to_json(init_params(3, 4, 1));
  j["w_key"] = std::vector<double>(3, 0.0);
  EXPECT_THROW(params_from_json(j), ConfigError);
  j.erase("w_key");
  EXPECT_THROW(params_from_json(j), ConfigError);
}
