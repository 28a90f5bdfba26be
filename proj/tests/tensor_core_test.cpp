// SPDX-License-Identifier: Apache-2.0
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tcrnn/tensor_core.hpp"

namespace tcrnn {
namespace {

const Shape kHidden{8, 4, 4, 4};

TEST(IndexBijection, KnownDigits) {
    EXPECT_EQ(linear_to_multi(0, kHidden), (MultiIndex{0, 0, 0, 0}));
    EXPECT_EQ(linear_to_multi(511, kHidden), (MultiIndex{7, 3, 3, 3}));
    EXPECT_EQ(linear_to_multi(77, kHidden), (MultiIndex{1, 0, 3, 1}));
    EXPECT_EQ(multi_to_linear(MultiIndex{0, 0, 0, 0}, kHidden), 0u);
    EXPECT_EQ(multi_to_linear(MultiIndex{7, 3, 3, 3}, kHidden), 511u);
    EXPECT_EQ(multi_to_linear(MultiIndex{1, 0, 3, 1}, kHidden), 77u);
}

TEST(IndexBijection, MatchesEnumerationOracle) {
    for (Index p = 0; p < kHidden.size(); ++p)
        ASSERT_EQ(linear_to_multi(p, kHidden), oracle::digits(p, kHidden.dims())) << p;
}

TEST(IndexBijection, RoundTripsExhaustively) {
    const std::vector<Shape> shapes = {{1}, {7}, {2, 3}, {1, 5, 1}, {8, 4, 4, 4}, {4, 4, 4, 4, 4, 4}, {3, 1, 2, 5, 2}};
    for (const auto& s : shapes) {
        ASSERT_LE(s.size(), 4096u);
        for (Index p = 0; p < s.size(); ++p) ASSERT_EQ(multi_to_linear(linear_to_multi(p, s), s), p);
        for (Index p = 0; p < s.size(); ++p) {
            const auto idx = oracle::digits(p, s.dims());
            ASSERT_EQ(linear_to_multi(multi_to_linear(idx, s), s), idx);
        }
    }
}

TEST(IndexBijection, RangeErrors) {
    EXPECT_THROW(linear_to_multi(512, kHidden), std::out_of_range);
    EXPECT_THROW(multi_to_linear(MultiIndex{8, 0, 0, 0}, kHidden), std::out_of_range);
    EXPECT_THROW(multi_to_linear(MultiIndex{0, 0, 0}, kHidden), std::out_of_range);
}

TEST(Shape, RejectsZeroModes) { EXPECT_THROW(Shape({2, 0}), ShapeError); }

// Naive triple-loop mode product used as the oracle.
DenseTensor naive_mode_product(const DenseTensor& t, const Matrix& m, Index mode) {
    auto dims = t.shape.dims();
    dims[mode] = m.rows;
    DenseTensor out{Shape(dims)};
    for (Index p = 0; p < out.values.size(); ++p) {
        auto idx = oracle::fast_digits(p, dims);
        double acc = 0.0;
        for (Index b = 0; b < m.cols; ++b) {
            auto src = idx;
            src[mode] = b;
            acc += m(idx[mode], b) * t.at(src);
        }
        out.values[p] = acc;
    }
    return out;
}

TEST(ModeProduct, IdentityLeavesTensorUnchanged) {
    DenseTensor t(Shape{2, 2}, {1, 0, 0, 1});
    Matrix eye(2, 2, {1, 0, 0, 1});
    EXPECT_EQ(mode_product(t, eye, 0), t);
}

TEST(ModeProduct, ShapeLaw) {
    DenseTensor t{Shape{2, 3}};
    EXPECT_EQ(mode_product(t, Matrix(4, 2), 0).shape, (Shape{4, 3}));
}

TEST(ModeProduct, HandContraction) {
    DenseTensor t(Shape{2, 2}, {1, 2, 3, 4});
    const auto out = mode_product(t, Matrix(1, 2, {1, 1}), 1);
    EXPECT_EQ(out.shape, (Shape{2, 1}));
    EXPECT_EQ(out.values, (std::vector<double>{3, 7}));
    EXPECT_EQ(naive_mode_product(t, Matrix(1, 2, {1, 1}), 1), out);
}

TEST(ModeProduct, Errors) {
    DenseTensor t{Shape{2, 3}};
    EXPECT_THROW(mode_product(t, Matrix(2, 2), 2), ShapeError);
    EXPECT_THROW(mode_product(t, Matrix(2, 2), 1), ShapeError);
}

TEST(ModeProduct, MatchesNaiveAndIsLinear) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        std::uniform_int_distribution<Index> dim(1, 4);
        std::vector<Index> dims(1 + trial % 4);
        for (auto& d : dims) d = dim(rng);
        DenseTensor t(Shape(dims), oracle::random_vector(Shape(dims).size(), rng));
        const Index mode = trial % dims.size();
        const Index rows = dim(rng);
        Matrix a(rows, dims[mode], oracle::random_vector(rows * dims[mode], rng));
        Matrix b(rows, dims[mode], oracle::random_vector(rows * dims[mode], rng));
        const double alpha = 0.7, beta = -1.3;
        Matrix mix(rows, dims[mode]);
        for (Index i = 0; i < mix.values.size(); ++i) mix.values[i] = alpha * a.values[i] + beta * b.values[i];

        const auto ta = mode_product(t, a, mode);
        const auto naive = naive_mode_product(t, a, mode);
        for (Index i = 0; i < ta.values.size(); ++i) EXPECT_NEAR(ta.values[i], naive.values[i], 1e-12);

        const auto tb = mode_product(t, b, mode);
        const auto tm = mode_product(t, mix, mode);
        for (Index i = 0; i < tm.values.size(); ++i) {
            const double expect = alpha * ta.values[i] + beta * tb.values[i];
            EXPECT_LE(std::abs(tm.values[i] - expect), 1e-12 * (1.0 + std::abs(expect)));
        }
    }
}

TEST(ModeProduct, SuccessiveProductsReproduceTuckerSum) {
    std::mt19937_64 rng(11);
    const std::vector<Index> core_dims{2, 3, 2};
    const std::vector<Index> out_dims{3, 2, 4};
    DenseTensor core(Shape(core_dims), oracle::random_vector(12, rng));
    std::vector<Matrix> factors;
    for (Index k = 0; k < 3; ++k)
        factors.emplace_back(out_dims[k], core_dims[k], oracle::random_vector(out_dims[k] * core_dims[k], rng));
    DenseTensor t = core;
    for (Index k = 0; k < 3; ++k) t = mode_product(t, factors[k], k);
    for (Index p = 0; p < t.values.size(); ++p) {
        const auto i = oracle::fast_digits(p, out_dims);
        double sum = 0.0;
        for (Index c = 0; c < core.values.size(); ++c) {
            const auto s = oracle::fast_digits(c, core_dims);
            sum += core.values[c] * factors[0](i[0], s[0]) * factors[1](i[1], s[1]) * factors[2](i[2], s[2]);
        }
        EXPECT_NEAR(t.values[p], sum, 1e-12 * (1.0 + std::abs(sum)));
    }
}

TEST(ModeGram, IsAdjointOfModeProduct) {
    // <Y, T x_k A> == <gram(Y, T, k), A>
    std::mt19937_64 rng(3);
    DenseTensor t(Shape{2, 3, 4}, oracle::random_vector(24, rng));
    Matrix a(5, 3, oracle::random_vector(15, rng));
    const auto ta = mode_product(t, a, 1);
    DenseTensor y(ta.shape, oracle::random_vector(ta.values.size(), rng));
    double lhs = 0.0;
    for (Index i = 0; i < y.values.size(); ++i) lhs += y.values[i] * ta.values[i];
    const Matrix g = mode_gram(y, t, 1);
    double rhs = 0.0;
    for (Index i = 0; i < g.values.size(); ++i) rhs += g.values[i] * a.values[i];
    EXPECT_NEAR(lhs, rhs, 1e-12 * (1.0 + std::abs(lhs)));
}

TEST(OuterAccumulate, Examples) {
    DenseTensor t{Shape{2, 2}};
    std::vector<std::vector<double>> v{{1, 0}, {1, 0}};
    outer_accumulate(v, t, 1.0);
    EXPECT_EQ(t.values, (std::vector<double>{1, 0, 0, 0}));

    const auto before = t;
    std::vector<std::vector<double>> w{{5, -2}, {3, 9}};
    outer_accumulate(w, t, 0.0);
    EXPECT_EQ(t, before);

    DenseTensor z{Shape{2, 2}};
    std::vector<std::vector<double>> u{{1, 2}, {3, 4}};
    outer_accumulate(u, z, 2.0);
    EXPECT_EQ(z.values, (std::vector<double>{6, 8, 12, 16}));
}

TEST(OuterAccumulate, LengthMismatch) {
    DenseTensor t{Shape{2, 2}};
    std::vector<std::vector<double>> v{{1, 0}, {1, 0, 0}};
    EXPECT_THROW(outer_accumulate(v, t, 1.0), ShapeError);
}

TEST(OuterAccumulate, RepeatedCallsMatchCPSum) {
    std::mt19937_64 rng(5);
    const std::vector<Index> dims{3, 2, 4};
    const Index R = 6;
    DenseTensor t{Shape(dims)};
    std::vector<std::vector<std::vector<double>>> terms;
    for (Index r = 0; r < R; ++r) {
        std::vector<std::vector<double>> vecs;
        for (Index d : dims) vecs.push_back(oracle::random_vector(d, rng));
        outer_accumulate(vecs, t, 1.0);
        terms.push_back(vecs);
    }
    for (Index p = 0; p < t.values.size(); ++p) {
        const auto i = oracle::fast_digits(p, dims);
        double sum = 0.0;
        for (const auto& v : terms) sum += v[0][i[0]] * v[1][i[1]] * v[2][i[2]];
        EXPECT_NEAR(t.values[p], sum, 1e-12 * (1.0 + std::abs(sum)));
    }
}

TEST(ReshapeVector, RowMajorLayout) {
    std::vector<double> v{1, 2, 3, 4};
    const auto t = reshape_vector(v, Shape{2, 2});
    EXPECT_EQ(t.at(MultiIndex{0, 1}), 2.0);
    EXPECT_EQ(t.at(MultiIndex{1, 0}), 3.0);
    EXPECT_EQ(reshape_vector(v, Shape{4}).values, v);
    EXPECT_THROW(reshape_vector(v, Shape{3}), ShapeError);
}

TEST(ReshapeVector, RoundTripAndIndexing) {
    std::mt19937_64 rng(9);
    const Shape dims{4, 4, 4, 4};
    for (int trial = 0; trial < 10; ++trial) {
        const auto v = oracle::random_vector(256, rng);
        const auto t = reshape_vector(v, dims);
        EXPECT_EQ(flatten(t), v);
        for (Index p = 0; p < 256; ++p) {
            const auto idx = oracle::digits(p, dims.dims());
            ASSERT_EQ(t.at(idx), v[multi_to_linear(idx, dims)]);
        }
    }
}

}  // namespace
}  // namespace tcrnn
