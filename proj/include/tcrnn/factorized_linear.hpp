// SPDX-License-Identifier: Apache-2.0
//
// Linear maps y = W x + b whose M x N weight matrix is stored in a factorized
// form: CP (sum of rank-1 terms), Tucker (core + per-mode factor matrices) or
// Tensor Train (chain of 4-way cores). A dense variant is kept alongside so
// that baselines and compressed models share one interface.
//
// The matrix is read as a 2d-way tensor with modes (m_1..m_d, n_1..n_d): row
// p maps to linear_to_multi(p, m_dims), column q to linear_to_multi(q, n_dims).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "tcrnn/error.hpp"
#include "tcrnn/tensor_core.hpp"

namespace tcrnn {

/// Row and column factorizations of an M x N matrix.
struct TensorizedShape {
    Shape m_dims;
    Shape n_dims;

    TensorizedShape() = default;
    TensorizedShape(Shape m, Shape n) : m_dims(std::move(m)), n_dims(std::move(n)) {
        if (m_dims.order() == 0 || m_dims.order() != n_dims.order())
            throw ConfigError("TensorizedShape: row and column factorizations need the same order >= 1, got " +
                              m_dims.str() + " and " + n_dims.str());
    }

    Index order() const noexcept { return m_dims.order(); }
    Index rows() const noexcept { return m_dims.size(); }
    Index cols() const noexcept { return n_dims.size(); }

    /// The full 2d-way tensor shape (m_1..m_d, n_1..n_d).
    Shape tensor_shape() const {
        auto dims = m_dims.dims();
        dims.insert(dims.end(), n_dims.dims().begin(), n_dims.dims().end());
        return Shape(dims);
    }

    friend bool operator==(const TensorizedShape&, const TensorizedShape&) = default;
};

struct DenseWeights {
    Matrix w;
};

/// Column r of gm[k] (m_k x R) and gn[k] (n_k x R) are the k-th mode vectors of
/// the r-th rank-1 term.
struct CPFactors {
    TensorizedShape shape;
    Index rank = 0;
    std::vector<Matrix> gm;
    std::vector<Matrix> gn;
};

/// ranks[0..d) pair with the row modes, ranks[d..2d) with the column modes.
struct TuckerFactors {
    TensorizedShape shape;
    std::vector<Index> ranks;
    DenseTensor core;
    std::vector<Matrix> gm;  // m_k x ranks[k]
    std::vector<Matrix> gn;  // n_k x ranks[d+k]
};

/// Core k has dims (tt_ranks[k], m_k, n_k, tt_ranks[k+1]); boundary ranks are 1.
struct TTCores {
    TensorizedShape shape;
    std::vector<Index> tt_ranks;
    std::vector<DenseTensor> cores;
};

enum class FactorKind { dense, cp, tucker, tt };

inline std::string_view to_string(FactorKind k) {
    switch (k) {
        case FactorKind::dense: return "dense";
        case FactorKind::cp: return "cp";
        case FactorKind::tucker: return "tucker";
        case FactorKind::tt: return "tt";
    }
    return "?";
}

inline FactorKind parse_factor_kind(std::string_view s) {
    if (s == "dense") return FactorKind::dense;
    if (s == "cp") return FactorKind::cp;
    if (s == "tucker") return FactorKind::tucker;
    if (s == "tt") return FactorKind::tt;
    throw ConfigError("unknown model kind '" + std::string(s) + "' (expected dense|cp|tucker|tt)");
}

using Weights = std::variant<DenseWeights, CPFactors, TuckerFactors, TTCores>;

/// y = W x + b. An empty bias means the operator has none (used for the
/// hidden-to-hidden projections of a gated cell, whose gate bias lives on the
/// input-to-hidden side); otherwise bias has length M.
struct FactorizedLinear {
    Weights weights;
    std::vector<double> bias;

    FactorKind kind() const { return static_cast<FactorKind>(weights.index()); }
    bool has_bias() const noexcept { return !bias.empty(); }

    Index rows() const {
        return std::visit(
            [](const auto& w) -> Index {
                if constexpr (std::is_same_v<std::decay_t<decltype(w)>, DenseWeights>)
                    return w.w.rows;
                else
                    return w.shape.rows();
            },
            weights);
    }
    Index cols() const {
        return std::visit(
            [](const auto& w) -> Index {
                if constexpr (std::is_same_v<std::decay_t<decltype(w)>, DenseWeights>)
                    return w.w.cols;
                else
                    return w.shape.cols();
            },
            weights);
    }
};

// ---------------------------------------------------------------------------
// Construction and validation

/// Throws ConfigError when a Tucker rank exceeds its mode size. Returns false
/// when some rank equals its mode size, i.e. the factorization does not compress
/// that mode (legal, but worth a warning).
inline bool check_tucker_ranks(const TensorizedShape& shape, std::span<const Index> ranks) {
    const Index d = shape.order();
    if (ranks.size() != 2 * d)
        throw ConfigError("Tucker: expected " + std::to_string(2 * d) + " ranks, got " +
                          std::to_string(ranks.size()));
    bool strict = true;
    for (Index k = 0; k < 2 * d; ++k) {
        const Index dim = k < d ? shape.m_dims[k] : shape.n_dims[k - d];
        if (ranks[k] == 0 || ranks[k] > dim)
            throw ConfigError("Tucker: rank " + std::to_string(ranks[k]) + " at position " +
                              std::to_string(k) + " must lie in [1, " + std::to_string(dim) + "]");
        if (ranks[k] == dim) strict = false;
    }
    return strict;
}

inline void check_tt_ranks(const TensorizedShape& shape, std::span<const Index> tt_ranks) {
    const Index d = shape.order();
    if (tt_ranks.size() != d + 1)
        throw ConfigError("TT: expected " + std::to_string(d + 1) + " ranks, got " +
                          std::to_string(tt_ranks.size()));
    if (tt_ranks.front() != 1 || tt_ranks.back() != 1)
        throw ConfigError("TT: boundary ranks must be 1");
    for (Index r : tt_ranks)
        if (r == 0) throw ConfigError("TT: ranks must be >= 1");
}

inline CPFactors make_cp(const TensorizedShape& shape, Index rank) {
    if (rank == 0) throw ConfigError("CP: rank must be >= 1");
    CPFactors f{shape, rank, {}, {}};
    for (Index k = 0; k < shape.order(); ++k) {
        f.gm.emplace_back(shape.m_dims[k], rank);
        f.gn.emplace_back(shape.n_dims[k], rank);
    }
    return f;
}

inline TuckerFactors make_tucker(const TensorizedShape& shape, std::vector<Index> ranks) {
    check_tucker_ranks(shape, ranks);
    const Index d = shape.order();
    TuckerFactors f{shape, ranks, DenseTensor{Shape(ranks)}, {}, {}};
    for (Index k = 0; k < d; ++k) {
        f.gm.emplace_back(shape.m_dims[k], ranks[k]);
        f.gn.emplace_back(shape.n_dims[k], ranks[d + k]);
    }
    return f;
}

inline TTCores make_tt(const TensorizedShape& shape, std::vector<Index> tt_ranks) {
    check_tt_ranks(shape, tt_ranks);
    TTCores f{shape, tt_ranks, {}};
    for (Index k = 0; k < shape.order(); ++k)
        f.cores.emplace_back(Shape{tt_ranks[k], shape.m_dims[k], shape.n_dims[k], tt_ranks[k + 1]});
    return f;
}

/// Zero-valued operator of the requested kind. `ranks` is {R} for CP, the 2d
/// core ranks for Tucker, the d+1 TT ranks for TT, and ignored for dense.
inline FactorizedLinear make_linear(FactorKind kind, const TensorizedShape& shape,
                                    const std::vector<Index>& ranks, bool with_bias = true) {
    FactorizedLinear f;
    switch (kind) {
        case FactorKind::dense: f.weights = DenseWeights{Matrix(shape.rows(), shape.cols())}; break;
        case FactorKind::cp:
            if (ranks.size() != 1) throw ConfigError("CP: expected a single rank");
            f.weights = make_cp(shape, ranks[0]);
            break;
        case FactorKind::tucker: f.weights = make_tucker(shape, ranks); break;
        case FactorKind::tt: f.weights = make_tt(shape, ranks); break;
    }
    if (with_bias) f.bias.assign(shape.rows(), 0.0);
    return f;
}

// ---------------------------------------------------------------------------
// Parameter traversal

/// Calls fn(span) for every stored array in a fixed order: factor arrays in
/// declaration order (gm_0..gm_{d-1}, gn_0..gn_{d-1}; core before factors for
/// Tucker; cores left to right for TT), then the bias when present and requested.
template <class Linear, class Fn>
    requires std::is_same_v<std::remove_const_t<Linear>, FactorizedLinear>
void for_each_param(Linear& f, Fn&& fn, bool include_bias = true) {
    using Elem = std::conditional_t<std::is_const_v<Linear>, const double, double>;
    auto emit = [&](auto& vec) { fn(std::span<Elem>(vec.data(), vec.size())); };
    std::visit(
        [&](auto& w) {
            using W = std::decay_t<decltype(w)>;
            if constexpr (std::is_same_v<W, DenseWeights>) {
                emit(w.w.values);
            } else if constexpr (std::is_same_v<W, CPFactors>) {
                for (auto& m : w.gm) emit(m.values);
                for (auto& m : w.gn) emit(m.values);
            } else if constexpr (std::is_same_v<W, TuckerFactors>) {
                emit(w.core.values);
                for (auto& m : w.gm) emit(m.values);
                for (auto& m : w.gn) emit(m.values);
            } else {
                for (auto& c : w.cores) emit(c.values);
            }
        },
        f.weights);
    if (include_bias && f.has_bias()) emit(f.bias);
}

/// Zero-filled operator with the same structure (used to hold gradients).
inline FactorizedLinear zeros_like(const FactorizedLinear& f) {
    FactorizedLinear z = f;
    for_each_param(z, [](std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
    return z;
}

/// Closed-form count of stored weight scalars, plus M when include_bias and a
/// bias is present.
inline Index param_count(const FactorizedLinear& f, bool include_bias = false) {
    Index n = std::visit(
        [](const auto& w) -> Index {
            using W = std::decay_t<decltype(w)>;
            if constexpr (std::is_same_v<W, DenseWeights>) {
                return w.w.rows * w.w.cols;
            } else if constexpr (std::is_same_v<W, CPFactors>) {
                Index s = 0;
                for (Index k = 0; k < w.shape.order(); ++k) s += w.shape.m_dims[k] + w.shape.n_dims[k];
                return w.rank * s;
            } else if constexpr (std::is_same_v<W, TuckerFactors>) {
                const Index d = w.shape.order();
                Index s = 0, core = 1;
                for (Index k = 0; k < d; ++k)
                    s += w.shape.m_dims[k] * w.ranks[k] + w.shape.n_dims[k] * w.ranks[d + k];
                for (Index r : w.ranks) core *= r;
                return s + core;
            } else {
                Index s = 0;
                for (Index k = 0; k < w.shape.order(); ++k)
                    s += w.tt_ranks[k] * w.shape.m_dims[k] * w.shape.n_dims[k] * w.tt_ranks[k + 1];
                return s;
            }
        },
        f.weights);
    if (include_bias) n += f.bias.size();
    return n;
}

// ---------------------------------------------------------------------------
// Initialization

/// Standard deviation for every stored factor scalar such that the entries of
/// the reconstructed matrix have variance sigma_w^2, using Var(X+Y)=Var X+Var Y
/// and Var(XY)=Var X Var Y for independent zero-mean X, Y.
///   CP:     each entry sums R products of 2d factors          -> (sw^2 / R)^(1/4d)
///   Tucker: sums prod(r) products of core x 2d factors        -> (sw^2 / prod r)^(1/(4d+2))
///   TT:     sums prod(inner ranks) products of d core entries -> (sw^2 / prod r)^(1/2d)
inline double factor_stddev(FactorKind kind, Index order, const std::vector<Index>& ranks,
                            double sigma_w) {
    if (!(sigma_w > 0.0)) throw ConfigError("init: sigma_w must be > 0");
    const double var = sigma_w * sigma_w;
    const double d = static_cast<double>(order);
    switch (kind) {
        case FactorKind::dense: return sigma_w;
        case FactorKind::cp: return std::pow(var / static_cast<double>(ranks.at(0)), 1.0 / (4.0 * d));
        case FactorKind::tucker: {
            double prod = 1.0;
            for (Index r : ranks) prod *= static_cast<double>(r);
            return std::pow(var / prod, 1.0 / (4.0 * d + 2.0));
        }
        case FactorKind::tt: {
            double prod = 1.0;
            for (Index k = 1; k + 1 < ranks.size(); ++k) prod *= static_cast<double>(ranks[k]);
            return std::pow(var / prod, 1.0 / (2.0 * d));
        }
    }
    return sigma_w;
}

/// Operator with every stored weight scalar i.i.d. N(0, factor_stddev^2) and a
/// zero bias. Deterministic in `seed`.
inline FactorizedLinear init_linear(FactorKind kind, const TensorizedShape& shape,
                                    const std::vector<Index>& ranks, double sigma_w,
                                    std::uint64_t seed, bool with_bias = true) {
    FactorizedLinear f = make_linear(kind, shape, ranks, with_bias);
    const double sd = factor_stddev(kind, shape.order(), ranks, sigma_w);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, sd);
    for_each_param(
        f, [&](std::span<double> s) {
            for (double& v : s) v = normal(rng);
        },
        false);
    return f;
}

// ---------------------------------------------------------------------------
// Reconstruction

inline Matrix materialize(const FactorizedLinear& f) {
    return std::visit(
        [](const auto& w) -> Matrix {
            using W = std::decay_t<decltype(w)>;
            if constexpr (std::is_same_v<W, DenseWeights>) {
                return w.w;
            } else if constexpr (std::is_same_v<W, CPFactors>) {
                const Index d = w.shape.order();
                DenseTensor full{w.shape.tensor_shape()};
                std::vector<std::vector<double>> vecs(2 * d);
                for (Index r = 0; r < w.rank; ++r) {
                    for (Index k = 0; k < d; ++k) {
                        vecs[k].resize(w.gm[k].rows);
                        for (Index i = 0; i < w.gm[k].rows; ++i) vecs[k][i] = w.gm[k](i, r);
                        vecs[d + k].resize(w.gn[k].rows);
                        for (Index j = 0; j < w.gn[k].rows; ++j) vecs[d + k][j] = w.gn[k](j, r);
                    }
                    outer_accumulate(vecs, full, 1.0);
                }
                return Matrix(w.shape.rows(), w.shape.cols(), std::move(full.values));
            } else if constexpr (std::is_same_v<W, TuckerFactors>) {
                const Index d = w.shape.order();
                DenseTensor t = w.core;
                for (Index k = 0; k < d; ++k) {
                    t = mode_product(t, w.gm[k], k);
                    t = mode_product(t, w.gn[k], d + k);
                }
                return Matrix(w.shape.rows(), w.shape.cols(), std::move(t.values));
            } else {
                const Index d = w.shape.order();
                const Index M = w.shape.rows(), N = w.shape.cols();
                Matrix out(M, N);
                std::vector<double> chain, next;
                for (Index p = 0; p < M; ++p) {
                    const auto ii = linear_to_multi(p, w.shape.m_dims);
                    for (Index q = 0; q < N; ++q) {
                        const auto jj = linear_to_multi(q, w.shape.n_dims);
                        chain.assign(1, 1.0);
                        for (Index k = 0; k < d; ++k) {
                            const auto& c = w.cores[k];
                            const Index ra = w.tt_ranks[k], rb = w.tt_ranks[k + 1];
                            const Index mk = w.shape.m_dims[k], nk = w.shape.n_dims[k];
                            next.assign(rb, 0.0);
                            for (Index a = 0; a < ra; ++a) {
                                const double* g = c.values.data() + ((a * mk + ii[k]) * nk + jj[k]) * rb;
                                for (Index b = 0; b < rb; ++b) next[b] += chain[a] * g[b];
                            }
                            chain.swap(next);
                        }
                        out(p, q) = chain[0];
                    }
                }
                return out;
            }
        },
        f.weights);
}

// ---------------------------------------------------------------------------
// Matrix-free products. Each kind records its intermediates so the reverse
// sweep in vjp can reuse them.

namespace detail {

struct CPTape {
    std::vector<std::vector<double>> contract;  // T_k, k = 1..d, laid out [R, Q_k]
    std::vector<std::vector<double>> expand;    // E_k, k = 0..d, laid out [R, P_k]
};

inline std::vector<double> cp_forward(const CPFactors& w, std::span<const double> x, CPTape& tape) {
    const Index d = w.shape.order(), R = w.rank;
    const auto& n = w.shape.n_dims;
    const auto& m = w.shape.m_dims;
    tape.contract.assign(d, {});
    // T_1[r, q] = sum_j GN_1(j, r) X[j, q]
    {
        const Index nk = n[0], Q = w.shape.cols() / nk;
        auto& t = tape.contract[0];
        t.assign(R * Q, 0.0);
        for (Index j = 0; j < nk; ++j)
            for (Index r = 0; r < R; ++r) {
                const double g = w.gn[0](j, r);
                double* dst = t.data() + r * Q;
                const double* src = x.data() + j * Q;
                for (Index q = 0; q < Q; ++q) dst[q] += g * src[q];
            }
    }
    // T_k[r, q] = sum_j T_{k-1}[r, j, q] GN_k(j, r)
    Index Q = w.shape.cols() / n[0];
    for (Index k = 1; k < d; ++k) {
        const Index nk = n[k], Qn = Q / nk;
        const auto& prev = tape.contract[k - 1];
        auto& t = tape.contract[k];
        t.assign(R * Qn, 0.0);
        for (Index r = 0; r < R; ++r)
            for (Index j = 0; j < nk; ++j) {
                const double g = w.gn[k](j, r);
                const double* src = prev.data() + (r * nk + j) * Qn;
                double* dst = t.data() + r * Qn;
                for (Index q = 0; q < Qn; ++q) dst[q] += g * src[q];
            }
        Q = Qn;
    }
    // E_0 = s; E_k[r, p, i] = E_{k-1}[r, p] GM_k(i, r)
    tape.expand.assign(d + 1, {});
    tape.expand[0] = tape.contract[d - 1];
    Index P = 1;
    for (Index k = 0; k < d; ++k) {
        const Index mk = m[k];
        const auto& prev = tape.expand[k];
        auto& e = tape.expand[k + 1];
        e.assign(R * P * mk, 0.0);
        for (Index r = 0; r < R; ++r)
            for (Index p = 0; p < P; ++p) {
                const double v = prev[r * P + p];
                double* dst = e.data() + (r * P + p) * mk;
                for (Index i = 0; i < mk; ++i) dst[i] = v * w.gm[k](i, r);
            }
        P *= mk;
    }
    std::vector<double> y(P, 0.0);
    const auto& last = tape.expand[d];
    for (Index r = 0; r < R; ++r)
        for (Index p = 0; p < P; ++p) y[p] += last[r * P + p];
    return y;
}

inline std::vector<double> cp_backward(const CPFactors& w, std::span<const double> x,
                                       std::span<const double> upstream, const CPTape& tape,
                                       CPFactors& grad) {
    const Index d = w.shape.order(), R = w.rank;
    const auto& n = w.shape.n_dims;
    const auto& m = w.shape.m_dims;
    // Expansion side, right to left.
    Index P = w.shape.rows();
    std::vector<double> dE(R * P);
    for (Index r = 0; r < R; ++r) std::copy(upstream.begin(), upstream.end(), dE.begin() + r * P);
    for (Index k = d; k-- > 0;) {
        const Index mk = m[k], Pp = P / mk;
        const auto& prev = tape.expand[k];
        std::vector<double> dprev(R * Pp, 0.0);
        for (Index r = 0; r < R; ++r)
            for (Index p = 0; p < Pp; ++p) {
                const double* de = dE.data() + (r * Pp + p) * mk;
                const double ev = prev[r * Pp + p];
                double acc = 0.0;
                for (Index i = 0; i < mk; ++i) {
                    grad.gm[k](i, r) += de[i] * ev;
                    acc += de[i] * w.gm[k](i, r);
                }
                dprev[r * Pp + p] = acc;
            }
        dE = std::move(dprev);
        P = Pp;
    }
    // dE now holds ds (length R). Contraction side, right to left.
    std::vector<double> dT = std::move(dE);
    Index Q = 1;
    for (Index k = d; k-- > 1;) {
        const Index nk = n[k], Qp = Q * nk;
        const auto& prev = tape.contract[k - 1];
        std::vector<double> dprev(R * Qp, 0.0);
        for (Index r = 0; r < R; ++r)
            for (Index j = 0; j < nk; ++j) {
                const double g = w.gn[k](j, r);
                const double* src = prev.data() + (r * nk + j) * Q;
                const double* dt = dT.data() + r * Q;
                double* dst = dprev.data() + (r * nk + j) * Q;
                double acc = 0.0;
                for (Index q = 0; q < Q; ++q) {
                    acc += src[q] * dt[q];
                    dst[q] = g * dt[q];
                }
                grad.gn[k](j, r) += acc;
            }
        dT = std::move(dprev);
        Q = Qp;
    }
    const Index n0 = n[0];
    std::vector<double> dx(w.shape.cols(), 0.0);
    for (Index j = 0; j < n0; ++j)
        for (Index r = 0; r < R; ++r) {
            const double g = w.gn[0](j, r);
            const double* src = x.data() + j * Q;
            const double* dt = dT.data() + r * Q;
            double* dst = dx.data() + j * Q;
            double acc = 0.0;
            for (Index q = 0; q < Q; ++q) {
                acc += src[q] * dt[q];
                dst[q] += g * dt[q];
            }
            grad.gn[0](j, r) += acc;
        }
    return dx;
}

struct TuckerTape {
    std::vector<DenseTensor> z;  // Z_0..Z_d: input contracted with GN_1..GN_k
    std::vector<DenseTensor> y;  // Y_0..Y_d: core output expanded with GM_1..GM_k
};

inline Matrix tucker_core_matrix(const TuckerFactors& w) {
    const Index d = w.shape.order();
    Index rows = 1;
    for (Index k = 0; k < d; ++k) rows *= w.ranks[k];
    return Matrix(rows, w.core.values.size() / rows, w.core.values);
}

inline std::vector<double> tucker_forward(const TuckerFactors& w, std::span<const double> x,
                                          TuckerTape& tape) {
    const Index d = w.shape.order();
    tape.z.clear();
    tape.z.push_back(reshape_vector(x, w.shape.n_dims));
    for (Index k = 0; k < d; ++k) tape.z.push_back(mode_product(tape.z.back(), transpose(w.gn[k]), k));
    const Matrix core = tucker_core_matrix(w);
    std::vector<Index> row_ranks(w.ranks.begin(), w.ranks.begin() + static_cast<std::ptrdiff_t>(d));
    tape.y.clear();
    tape.y.emplace_back(Shape(row_ranks), matvec(core, tape.z.back().values));
    for (Index k = 0; k < d; ++k) tape.y.push_back(mode_product(tape.y.back(), w.gm[k], k));
    return tape.y.back().values;
}

inline std::vector<double> tucker_backward(const TuckerFactors& w, std::span<const double> upstream,
                                           const TuckerTape& tape, TuckerFactors& grad) {
    const Index d = w.shape.order();
    DenseTensor dy = reshape_vector(upstream, w.shape.m_dims);
    for (Index k = d; k-- > 0;) {
        const Matrix g = mode_gram(dy, tape.y[k], k);
        for (Index i = 0; i < g.values.size(); ++i) grad.gm[k].values[i] += g.values[i];
        dy = mode_product(dy, transpose(w.gm[k]), k);
    }
    const Matrix core = tucker_core_matrix(w);
    const auto& z = tape.z.back().values;
    for (Index p = 0; p < core.rows; ++p)
        for (Index q = 0; q < core.cols; ++q) grad.core.values[p * core.cols + q] += dy.values[p] * z[q];
    DenseTensor dz(tape.z.back().shape, matvec_transposed(core, dy.values));
    for (Index k = d; k-- > 0;) {
        // Z_{k+1} = Z_k x_k GN_k^T, so d(GN_k^T) = gram(dZ_{k+1}, Z_k).
        const Matrix g = mode_gram(dz, tape.z[k], k);
        for (Index j = 0; j < g.cols; ++j)
            for (Index s = 0; s < g.rows; ++s) grad.gn[k](j, s) += g(s, j);
        dz = mode_product(dz, w.gn[k], k);
    }
    return dz.values;
}

struct TTTape {
    std::vector<std::vector<double>> states;  // T_0..T_d, T_k laid out [P_k, r_k, Q_k]
};

inline std::vector<double> tt_forward(const TTCores& w, std::span<const double> x, TTTape& tape) {
    const Index d = w.shape.order();
    const auto& m = w.shape.m_dims;
    const auto& n = w.shape.n_dims;
    tape.states.assign(1, std::vector<double>(x.begin(), x.end()));
    Index P = 1, Q = w.shape.cols();
    for (Index k = 0; k < d; ++k) {
        const Index ra = w.tt_ranks[k], rb = w.tt_ranks[k + 1];
        const Index mk = m[k], nk = n[k];
        const Index Qn = Q / nk;
        const auto& t = tape.states.back();
        const auto& g = w.cores[k].values;
        std::vector<double> out(P * mk * rb * Qn, 0.0);
        // out[p, i, b, q] = sum_{a, j} t[p, a, j, q] g[a, i, j, b]
        for (Index p = 0; p < P; ++p)
            for (Index a = 0; a < ra; ++a)
                for (Index j = 0; j < nk; ++j) {
                    const double* src = t.data() + ((p * ra + a) * nk + j) * Qn;
                    for (Index i = 0; i < mk; ++i)
                        for (Index b = 0; b < rb; ++b) {
                            const double gv = g[((a * mk + i) * nk + j) * rb + b];
                            if (gv == 0.0) continue;
                            double* dst = out.data() + ((p * mk + i) * rb + b) * Qn;
                            for (Index q = 0; q < Qn; ++q) dst[q] += gv * src[q];
                        }
                }
        tape.states.push_back(std::move(out));
        P *= mk;
        Q = Qn;
    }
    return tape.states.back();
}

inline std::vector<double> tt_backward(const TTCores& w, std::span<const double> upstream,
                                       const TTTape& tape, TTCores& grad) {
    const Index d = w.shape.order();
    const auto& m = w.shape.m_dims;
    const auto& n = w.shape.n_dims;
    std::vector<double> dT(upstream.begin(), upstream.end());
    Index P = w.shape.rows(), Q = 1;
    for (Index k = d; k-- > 0;) {
        const Index ra = w.tt_ranks[k], rb = w.tt_ranks[k + 1];
        const Index mk = m[k], nk = n[k];
        const Index Pp = P / mk;
        const auto& t = tape.states[k];
        const auto& g = w.cores[k].values;
        auto& gg = grad.cores[k].values;
        std::vector<double> dprev(Pp * ra * nk * Q, 0.0);
        for (Index p = 0; p < Pp; ++p)
            for (Index a = 0; a < ra; ++a)
                for (Index j = 0; j < nk; ++j) {
                    const double* src = t.data() + ((p * ra + a) * nk + j) * Q;
                    double* dsrc = dprev.data() + ((p * ra + a) * nk + j) * Q;
                    for (Index i = 0; i < mk; ++i)
                        for (Index b = 0; b < rb; ++b) {
                            const Index gi = ((a * mk + i) * nk + j) * rb + b;
                            const double* dout = dT.data() + ((p * mk + i) * rb + b) * Q;
                            const double gv = g[gi];
                            double acc = 0.0;
                            for (Index q = 0; q < Q; ++q) {
                                acc += src[q] * dout[q];
                                dsrc[q] += gv * dout[q];
                            }
                            gg[gi] += acc;
                        }
                }
        dT = std::move(dprev);
        P = Pp;
        Q *= nk;
    }
    return dT;
}

}  // namespace detail

/// y = W x + b without forming W.
inline std::vector<double> apply_linear(const FactorizedLinear& f, std::span<const double> x) {
    if (x.size() != f.cols())
        throw ShapeError("apply: input length " + std::to_string(x.size()) + ", operator expects " +
                         std::to_string(f.cols()));
    std::vector<double> y = std::visit(
        [&](const auto& w) -> std::vector<double> {
            using W = std::decay_t<decltype(w)>;
            if constexpr (std::is_same_v<W, DenseWeights>) {
                return matvec(w.w, x);
            } else if constexpr (std::is_same_v<W, CPFactors>) {
                detail::CPTape tape;
                return detail::cp_forward(w, x, tape);
            } else if constexpr (std::is_same_v<W, TuckerFactors>) {
                detail::TuckerTape tape;
                return detail::tucker_forward(w, x, tape);
            } else {
                detail::TTTape tape;
                return detail::tt_forward(w, x, tape);
            }
        },
        f.weights);
    for (Index i = 0; i < f.bias.size(); ++i) y[i] += f.bias[i];
    return y;
}

/// Reverse-mode derivatives of upstream^T (W x + b).
struct LinearVjp {
    FactorizedLinear grad;  // same structure as the operator
    std::vector<double> grad_x;
};

/// Adds d(upstream^T apply_linear(f, x)) to `grad` (which must have f's structure)
/// and returns the gradient with respect to x.
inline std::vector<double> vjp_accumulate(const FactorizedLinear& f, std::span<const double> x,
                                          std::span<const double> upstream, FactorizedLinear& grad) {
    if (x.size() != f.cols() || upstream.size() != f.rows())
        throw ShapeError("vjp: input/upstream length mismatch");
    if (grad.kind() != f.kind() || grad.bias.size() != f.bias.size())
        throw ShapeError("vjp: gradient holder has a different structure");
    for (Index i = 0; i < grad.bias.size(); ++i) grad.bias[i] += upstream[i];
    return std::visit(
        [&](const auto& w) -> std::vector<double> {
            using W = std::decay_t<decltype(w)>;
            auto& g = std::get<W>(grad.weights);
            if constexpr (std::is_same_v<W, DenseWeights>) {
                for (Index r = 0; r < w.w.rows; ++r) {
                    if (upstream[r] == 0.0) continue;
                    double* row = g.w.values.data() + r * w.w.cols;
                    for (Index c = 0; c < w.w.cols; ++c) row[c] += upstream[r] * x[c];
                }
                return matvec_transposed(w.w, upstream);
            } else if constexpr (std::is_same_v<W, CPFactors>) {
                detail::CPTape tape;
                detail::cp_forward(w, x, tape);
                return detail::cp_backward(w, x, upstream, tape, g);
            } else if constexpr (std::is_same_v<W, TuckerFactors>) {
                detail::TuckerTape tape;
                detail::tucker_forward(w, x, tape);
                return detail::tucker_backward(w, upstream, tape, g);
            } else {
                detail::TTTape tape;
                detail::tt_forward(w, x, tape);
                return detail::tt_backward(w, upstream, tape, g);
            }
        },
        f.weights);
}

inline LinearVjp vjp(const FactorizedLinear& f, std::span<const double> x, std::span<const double> upstream) {
    LinearVjp out{zeros_like(f), {}};
    out.grad_x = vjp_accumulate(f, x, upstream, out.grad);
    return out;
}

}  // namespace tcrnn
