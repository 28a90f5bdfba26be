// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations used only by the test suites. These
// evaluate the decompositions entry by entry straight from their defining
// sums and never call into the contraction kernels under test.
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "tcrnn/factorized_linear.hpp"
#include "tcrnn/recurrent_cells.hpp"

namespace tcrnn::oracle {

// Mixed-radix digits computed by repeated enumeration rather than division.
inline std::vector<Index> digits(Index p, const std::vector<Index>& dims) {
    std::vector<Index> idx(dims.size(), 0);
    for (Index step = 0; step < p; ++step) {
        for (Index k = dims.size(); k-- > 0;) {
            if (++idx[k] < dims[k]) break;
            idx[k] = 0;
        }
    }
    return idx;
}

inline std::vector<Index> fast_digits(Index p, const std::vector<Index>& dims) {
    std::vector<Index> idx(dims.size());
    std::vector<Index> stride(dims.size(), 1);
    for (Index k = dims.size(); k-- > 1;) stride[k - 1] = stride[k] * dims[k];
    for (Index k = 0; k < dims.size(); ++k) {
        idx[k] = p / stride[k];
        p -= idx[k] * stride[k];
    }
    return idx;
}

inline double cp_entry(const CPFactors& f, const std::vector<Index>& i, const std::vector<Index>& j) {
    double sum = 0.0;
    for (Index r = 0; r < f.rank; ++r) {
        double prod = 1.0;
        for (Index k = 0; k < f.shape.order(); ++k) prod *= f.gm[k](i[k], r) * f.gn[k](j[k], r);
        sum += prod;
    }
    return sum;
}

inline double tucker_entry(const TuckerFactors& f, const std::vector<Index>& i,
                           const std::vector<Index>& j) {
    const Index d = f.shape.order();
    double sum = 0.0;
    for (Index c = 0; c < f.core.values.size(); ++c) {
        const auto s = fast_digits(c, f.ranks);
        double prod = f.core.values[c];
        for (Index k = 0; k < d; ++k) prod *= f.gm[k](i[k], s[k]) * f.gn[k](j[k], s[d + k]);
        sum += prod;
    }
    return sum;
}

inline double tt_entry(const TTCores& f, const std::vector<Index>& i, const std::vector<Index>& j) {
    const Index d = f.shape.order();
    // Sum over every assignment of the inner rank indices.
    std::vector<Index> inner(f.tt_ranks.begin() + 1, f.tt_ranks.end() - 1);
    Index terms = 1;
    for (Index r : inner) terms *= r;
    double sum = 0.0;
    for (Index t = 0; t < terms; ++t) {
        auto s = fast_digits(t, inner);
        s.insert(s.begin(), 0);
        s.push_back(0);
        double prod = 1.0;
        for (Index k = 0; k < d; ++k) {
            const auto& c = f.cores[k];
            const auto& dims = c.shape.dims();
            prod *= c.values[((s[k] * dims[1] + i[k]) * dims[2] + j[k]) * dims[3] + s[k + 1]];
        }
        sum += prod;
    }
    return sum;
}

/// Entry-by-entry reconstruction of any operator's weight matrix.
inline Matrix dense_matrix(const FactorizedLinear& f) {
    if (auto* dw = std::get_if<DenseWeights>(&f.weights)) return dw->w;
    const TensorizedShape shape = std::visit(
        [](const auto& w) -> TensorizedShape {
            if constexpr (std::is_same_v<std::decay_t<decltype(w)>, DenseWeights>)
                return {};
            else
                return w.shape;
        },
        f.weights);
    Matrix out(shape.rows(), shape.cols());
    for (Index p = 0; p < shape.rows(); ++p) {
        const auto i = fast_digits(p, shape.m_dims.dims());
        for (Index q = 0; q < shape.cols(); ++q) {
            const auto j = fast_digits(q, shape.n_dims.dims());
            if (auto* cp = std::get_if<CPFactors>(&f.weights))
                out(p, q) = cp_entry(*cp, i, j);
            else if (auto* tk = std::get_if<TuckerFactors>(&f.weights))
                out(p, q) = tucker_entry(*tk, i, j);
            else
                out(p, q) = tt_entry(std::get<TTCores>(f.weights), i, j);
        }
    }
    return out;
}

inline std::vector<double> naive_matvec(const Matrix& w, std::span<const double> x) {
    std::vector<double> y(w.rows, 0.0);
    for (Index p = 0; p < w.rows; ++p)
        for (Index q = 0; q < w.cols; ++q) y[p] += w(p, q) * x[q];
    return y;
}

/// Central finite difference of a scalar function of a parameter vector.
inline std::vector<double> central_difference(const std::function<double()>& loss,
                                              std::span<double> params, double step = 1e-5) {
    std::vector<double> g(params.size());
    for (Index i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + step;
        const double up = loss();
        params[i] = saved - step;
        const double down = loss();
        params[i] = saved;
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

/// |a - b| / max(|a|, |b|, floor); the floor keeps near-zero coordinates from
/// amplifying rounding noise.
inline double rel_error(double a, double b, double floor = 1e-3) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline std::vector<double> random_vector(Index n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    std::vector<double> v(n);
    for (double& x : v) x = nd(rng);
    return v;
}

inline void randomize(FactorizedLinear& f, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    for_each_param(f, [&](std::span<double> s) {
        for (double& v : s) v = nd(rng);
    });
}

struct RandomConfig {
    FactorizedLinear op;
    std::vector<double> x;
};

// Random shapes with d in [1, 4] and M, N <= 256.
inline RandomConfig random_config(FactorKind kind, std::mt19937_64& rng, Index max_size = 256) {
    std::uniform_int_distribution<Index> order_dist(1, 4), dim_dist(1, 5);
    for (;;) {
        const Index d = order_dist(rng);
        std::vector<Index> m(d), n(d);
        for (auto& v : m) v = dim_dist(rng);
        for (auto& v : n) v = dim_dist(rng);
        const TensorizedShape shape{Shape(m), Shape(n)};
        if (shape.rows() > max_size || shape.cols() > max_size) continue;
        std::vector<Index> ranks;
        if (kind == FactorKind::cp) {
            ranks = {std::uniform_int_distribution<Index>(1, 6)(rng)};
        } else if (kind == FactorKind::tucker) {
            for (Index k = 0; k < d; ++k) ranks.push_back(std::uniform_int_distribution<Index>(1, m[k])(rng));
            for (Index k = 0; k < d; ++k) ranks.push_back(std::uniform_int_distribution<Index>(1, n[k])(rng));
        } else if (kind == FactorKind::tt) {
            ranks.push_back(1);
            for (Index k = 1; k < d; ++k) ranks.push_back(std::uniform_int_distribution<Index>(1, 4)(rng));
            ranks.push_back(1);
        }
        FactorizedLinear f = make_linear(kind, shape, ranks);
        randomize(f, rng);
        return {std::move(f), random_vector(shape.cols(), rng)};
    }
}

// GRU with every projection of `kind`; biases (input projections only) are
// random too.
inline GruWeights random_gru(FactorKind kind, const Shape& in_dims, const Shape& hid_dims,
                             const std::vector<Index>& ranks, std::mt19937_64& rng, double scale) {
    const TensorizedShape xs{hid_dims, in_dims}, hs{hid_dims, hid_dims};
    GruWeights w{make_linear(kind, xs, ranks, true), make_linear(kind, hs, ranks, false),
                 make_linear(kind, xs, ranks, true), make_linear(kind, hs, ranks, false),
                 make_linear(kind, xs, ranks, true), make_linear(kind, hs, ranks, false)};
    for_each_operator(w, [&](FactorizedLinear& f) { randomize(f, rng, scale); });
    return w;
}

// Straight-line GRU step over explicit dense matrices.
inline std::vector<double> gru_reference_step(const GruWeights& w, const std::vector<double>& x,
                                              const std::vector<double>& h) {
    const Matrix xr = dense_matrix(w.xr), hr = dense_matrix(w.hr), xz = dense_matrix(w.xz),
                 hz = dense_matrix(w.hz), xh = dense_matrix(w.xh), hh = dense_matrix(w.hh);
    const Index M = h.size(), N = x.size();
    std::vector<double> out(M);
    std::vector<double> r(M), z(M);
    for (Index i = 0; i < M; ++i) {
        double ar = w.xr.bias[i], az = w.xz.bias[i];
        for (Index j = 0; j < N; ++j) {
            ar += xr(i, j) * x[j];
            az += xz(i, j) * x[j];
        }
        for (Index j = 0; j < M; ++j) {
            ar += hr(i, j) * h[j];
            az += hz(i, j) * h[j];
        }
        r[i] = 1.0 / (1.0 + std::exp(-ar));
        z[i] = 1.0 / (1.0 + std::exp(-az));
    }
    for (Index i = 0; i < M; ++i) {
        double a = w.xh.bias[i];
        for (Index j = 0; j < N; ++j) a += xh(i, j) * x[j];
        for (Index j = 0; j < M; ++j) a += hh(i, j) * r[j] * h[j];
        out[i] = (1.0 - z[i]) * h[i] + z[i] * std::tanh(a);
    }
    return out;
}

// Backpropagation through time for L = sum_t <c_t, h_t> over `inputs`,
// checked against central differences on every parameter and on h0. Returns
// the largest relative error.
inline double gru_bptt_max_error(GruWeights w, const std::vector<std::vector<double>>& inputs,
                                 std::vector<double> h0, std::mt19937_64& rng) {
    const Index M = hidden_size(w), T = inputs.size();
    std::vector<std::vector<double>> c(T);
    for (auto& v : c) v = random_vector(M, rng);
    auto loss = [&] {
        std::vector<double> h = h0;
        double s = 0.0;
        for (Index t = 0; t < T; ++t) {
            h = gru_step(w, inputs[t], h);
            for (Index i = 0; i < M; ++i) s += c[t][i] * h[i];
        }
        return s;
    };
    std::vector<GruStepCache> tape;
    std::vector<double> h = h0;
    for (Index t = 0; t < T; ++t) {
        tape.push_back(gru_step_cached(w, inputs[t], h));
        h = tape.back().h;
    }
    GruWeights grad = w;
    for_each_operator(grad, [](FactorizedLinear& f) {
        for_each_param(f, [](std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
    });
    std::vector<double> dh(M, 0.0);
    for (Index t = T; t-- > 0;) {
        for (Index i = 0; i < M; ++i) dh[i] += c[t][i];
        dh = gru_step_backward(w, tape[t], dh, grad).dh_prev;
    }
    std::vector<std::span<double>> params, grads;
    for_each_operator(w, [&](FactorizedLinear& f) { for_each_param(f, [&](std::span<double> s) { params.push_back(s); }); });
    for_each_operator(grad, [&](FactorizedLinear& f) { for_each_param(f, [&](std::span<double> s) { grads.push_back(s); }); });
    double worst = 0.0;
    for (Index a = 0; a < params.size(); ++a) {
        const auto fd = central_difference(loss, params[a]);
        for (Index i = 0; i < fd.size(); ++i) worst = std::max(worst, rel_error(fd[i], grads[a][i]));
    }
    const auto fd0 = central_difference(loss, h0);
    for (Index i = 0; i < M; ++i) worst = std::max(worst, rel_error(fd0[i], dh[i]));
    return worst;
}

}  // namespace tcrnn::oracle
