// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tcrnn/recurrent_cells.hpp"

namespace tcrnn {
namespace {

FactorizedLinear dense_op(Index rows, Index cols, bool bias = true) {
    return make_linear(FactorKind::dense, TensorizedShape(Shape{rows}, Shape{cols}), {}, bias);
}

GruWeights zero_gru(Index M, Index N) {
    return {dense_op(M, N), dense_op(M, M, false), dense_op(M, N), dense_op(M, M, false), dense_op(M, N),
            dense_op(M, M, false)};
}


std::vector<Index> ranks_for(FactorKind kind) {
    switch (kind) {
        case FactorKind::cp: return {3};
        case FactorKind::tucker: return {2, 2, 2, 2};
        case FactorKind::tt: return {1, 3, 1};
        default: return {};
    }
}

TEST(Gru, ZeroWeightsHalveTheState) {
    const GruWeights w = zero_gru(4, 3);
    const std::vector<double> h{1.0, -2.0, 0.5, 4.0};
    const auto next = gru_step(w, std::vector<double>{0.3, -0.7, 2.0}, h);
    for (Index i = 0; i < h.size(); ++i) EXPECT_DOUBLE_EQ(next[i], 0.5 * h[i]);
}

TEST(Gru, SaturatedUpdateGateTakesTheCandidate) {
    GruWeights w = zero_gru(3, 2);
    std::fill(w.xz.bias.begin(), w.xz.bias.end(), 1e3);
    w.xh.bias = {0.1, -0.2, 0.3};
    const auto next = gru_step(w, std::vector<double>{1.0, 1.0}, std::vector<double>{5.0, 5.0, 5.0});
    for (Index i = 0; i < 3; ++i) EXPECT_NEAR(next[i], std::tanh(w.xh.bias[i]), 1e-12);
}

TEST(Gru, ClosedUpdateGateKeepsTheState) {
    GruWeights w = zero_gru(3, 2);
    std::fill(w.xz.bias.begin(), w.xz.bias.end(), -1e3);
    const std::vector<double> h{0.4, -0.9, 0.1};
    const auto next = gru_step(w, std::vector<double>{3.0, -3.0}, h);
    for (Index i = 0; i < 3; ++i) EXPECT_NEAR(next[i], h[i], 1e-12);
}

TEST(Gru, MatchesStraightLineOracle) {
    std::mt19937_64 rng(5);
    const GruWeights w = oracle::random_gru(FactorKind::dense, Shape{5}, Shape{4}, {}, rng, 0.5);
    std::vector<double> h = oracle::random_vector(4, rng);
    for (int t = 0; t < 5; ++t) {
        const auto x = oracle::random_vector(5, rng);
        const auto got = gru_step(w, x, h);
        const auto ref = oracle::gru_reference_step(w, x, h);
        for (Index i = 0; i < 4; ++i) ASSERT_NEAR(got[i], ref[i], 1e-12);
        h = got;
    }
}

TEST(Gru, GatesStayInRange) {
    std::mt19937_64 rng(6);
    const GruWeights w = oracle::random_gru(FactorKind::dense, Shape{6}, Shape{5}, {}, rng, 3.0);
    std::vector<double> h(5, 0.0);
    for (int t = 0; t < 50; ++t) {
        const auto c = gru_step_cached(w, oracle::random_vector(6, rng, 3.0), h);
        for (Index i = 0; i < 5; ++i) {
            ASSERT_GE(c.r[i], 0.0);
            ASSERT_LE(c.r[i], 1.0);
            ASSERT_GE(c.z[i], 0.0);
            ASSERT_LE(c.z[i], 1.0);
            ASSERT_LE(std::abs(c.candidate[i]), 1.0);
            ASSERT_LE(std::abs(c.h[i]), 1.0 + 1e-12);
        }
        h = c.h;
    }
}

TEST(Gru, DropoutMaskScalesTheInput) {
    std::mt19937_64 rng(7);
    const GruWeights w = oracle::random_gru(FactorKind::dense, Shape{3}, Shape{2}, {}, rng, 1.0);
    const std::vector<double> x{1.0, 2.0, 3.0}, mask{0.0, 2.0, 1.0}, masked{0.0, 4.0, 3.0};
    const std::vector<double> h{0.1, 0.2};
    EXPECT_EQ(gru_step(w, x, h, std::span<const double>(mask)), gru_step(w, masked, h));
}

class GruPerKind : public ::testing::TestWithParam<FactorKind> {};

TEST_P(GruPerKind, FactorizedMatchesDensifiedOver100Steps) {
    std::mt19937_64 rng(10 + static_cast<int>(GetParam()));
    const GruWeights w = oracle::random_gru(GetParam(), Shape{4, 2}, Shape{3, 2}, ranks_for(GetParam()), rng, 0.4);
    const GruWeights d = to_dense(w);
    std::vector<std::vector<double>> xs;
    for (int t = 0; t < 100; ++t) xs.push_back(oracle::random_vector(8, rng));
    const auto a = run_gru(w, xs), b = run_gru(d, xs);
    ASSERT_EQ(a.size(), 100u);
    for (Index t = 0; t < a.size(); ++t)
        for (Index i = 0; i < a[t].size(); ++i) ASSERT_NEAR(a[t][i], b[t][i], 1e-10);
}

TEST_P(GruPerKind, BackpropThroughTenStepsMatchesFiniteDifferences) {
    std::mt19937_64 rng(20 + static_cast<int>(GetParam()));
    const GruWeights w = oracle::random_gru(GetParam(), Shape{2, 2}, Shape{3, 2}, ranks_for(GetParam()), rng, 0.5);
    std::vector<std::vector<double>> xs;
    for (int t = 0; t < 10; ++t) xs.push_back(oracle::random_vector(4, rng));
    EXPECT_LT(oracle::gru_bptt_max_error(w, xs, oracle::random_vector(6, rng, 0.5), rng), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(AllKinds, GruPerKind,
                         ::testing::Values(FactorKind::dense, FactorKind::cp, FactorKind::tucker, FactorKind::tt),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Lstm, MatchesStraightLineOracle) {
    std::mt19937_64 rng(30);
    const Index M = 3, N = 2;
    LstmWeights w{dense_op(M, N), dense_op(M, M, false), dense_op(M, N), dense_op(M, M, false),
                  dense_op(M, N), dense_op(M, M, false), dense_op(M, N), dense_op(M, M, false), {}, {}, {}};
    for (auto* f : {&w.xi, &w.hi, &w.xf, &w.hf, &w.xc, &w.hc, &w.xo, &w.ho}) oracle::randomize(*f, rng, 0.7);
    w.ci = oracle::random_vector(M, rng);
    w.cf = oracle::random_vector(M, rng);
    w.co = oracle::random_vector(M, rng);
    const auto x = oracle::random_vector(N, rng);
    const CellState s{oracle::random_vector(M, rng), oracle::random_vector(M, rng)};
    const auto next = lstm_step(w, x, s);

    auto pre = [&](const FactorizedLinear& wx, const FactorizedLinear& wh, Index k) {
        const Matrix a = oracle::dense_matrix(wx), b = oracle::dense_matrix(wh);
        double v = wx.bias[k];
        for (Index j = 0; j < N; ++j) v += a(k, j) * x[j];
        for (Index j = 0; j < M; ++j) v += b(k, j) * s.h[j];
        return v;
    };
    auto sig = [](double a) { return 1.0 / (1.0 + std::exp(-a)); };
    for (Index k = 0; k < M; ++k) {
        const double i = sig(pre(w.xi, w.hi, k) + w.ci[k] * s.c[k]);
        const double f = sig(pre(w.xf, w.hf, k) + w.cf[k] * s.c[k]);
        const double c = f * s.c[k] + i * std::tanh(pre(w.xc, w.hc, k));
        const double o = sig(pre(w.xo, w.ho, k) + w.co[k] * c);
        EXPECT_NEAR(next.c[k], c, 1e-12);
        EXPECT_NEAR(next.h[k], o * std::tanh(c), 1e-12);
    }
}

TEST(Elman, MatchesStraightLineOracle) {
    std::mt19937_64 rng(31);
    ElmanWeights w{dense_op(3, 4), dense_op(3, 3, false)};
    oracle::randomize(w.xh, rng);
    oracle::randomize(w.hh, rng);
    const auto x = oracle::random_vector(4, rng), h = oracle::random_vector(3, rng);
    const auto next = elman_step(w, x, h);
    const Matrix a = oracle::dense_matrix(w.xh), b = oracle::dense_matrix(w.hh);
    for (Index k = 0; k < 3; ++k) {
        double v = w.xh.bias[k];
        for (Index j = 0; j < 4; ++j) v += a(k, j) * x[j];
        for (Index j = 0; j < 3; ++j) v += b(k, j) * h[j];
        EXPECT_NEAR(next[k], std::tanh(v), 1e-12);
    }
}

TEST(RunSequence, EmptyAndSingleStep) {
    std::mt19937_64 rng(40);
    const GruWeights w = oracle::random_gru(FactorKind::dense, Shape{2}, Shape{3}, {}, rng, 1.0);
    EXPECT_TRUE(run_gru(w, {}).empty());
    const std::vector<std::vector<double>> one{{0.5, -0.5}};
    const auto states = run_gru(w, one);
    ASSERT_EQ(states.size(), 1u);
    EXPECT_EQ(states[0], gru_step(w, one[0], std::vector<double>(3, 0.0)));
}

TEST(RunSequence, SplitAndResumeIsTheSame) {
    std::mt19937_64 rng(41);
    const GruWeights w = oracle::random_gru(FactorKind::cp, Shape{2, 2}, Shape{2, 2}, {2}, rng, 0.8);
    std::vector<std::vector<double>> xs;
    for (int t = 0; t < 12; ++t) xs.push_back(oracle::random_vector(4, rng));
    const auto whole = run_gru(w, xs);
    const std::span<const std::vector<double>> all(xs);
    const auto head = run_gru(w, all.first(5));
    const auto tail = run_gru(w, all.subspan(5), head.back());
    for (Index t = 0; t < 5; ++t) EXPECT_EQ(head[t], whole[t]);
    for (Index t = 0; t < 7; ++t) EXPECT_EQ(tail[t], whole[t + 5]);
}

TEST(RunSequence, RejectsMismatchedLengths) {
    std::mt19937_64 rng(42);
    const GruWeights w = oracle::random_gru(FactorKind::dense, Shape{2}, Shape{3}, {}, rng, 1.0);
    EXPECT_THROW(run_gru(w, std::vector<std::vector<double>>{{1.0, 2.0}, {1.0}}), ShapeError);
}

}  // namespace
}  // namespace tcrnn
