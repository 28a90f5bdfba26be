// SPDX-License-Identifier: Apache-2.0
//
// Elman, LSTM and GRU cells over pluggable FactorizedLinear projections.
//
// Gate biases are stored on the input-to-hidden operators (b_r on xr, b_z on
// xz, ...); hidden-to-hidden operators carry no bias, so every gate has exactly
// one bias vector.
#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "tcrnn/error.hpp"
#include "tcrnn/factorized_linear.hpp"

namespace tcrnn {

inline double sigmoid(double a) {
    if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
    const double e = std::exp(a);
    return e / (1.0 + e);
}

struct GruWeights {
    FactorizedLinear xr, hr;  // reset gate
    FactorizedLinear xz, hz;  // update gate
    FactorizedLinear xh, hh;  // candidate
};

struct LstmWeights {
    FactorizedLinear xi, hi;
    FactorizedLinear xf, hf;
    FactorizedLinear xc, hc;
    FactorizedLinear xo, ho;
    // Diagonal peephole weights.
    std::vector<double> ci, cf, co;
};

struct ElmanWeights {
    FactorizedLinear xh, hh;
};

struct CellState {
    std::vector<double> h;
    std::vector<double> c;  // LSTM only
};

template <class Fn>
void for_each_operator(GruWeights& w, Fn&& fn) {
    for (auto* op : {&w.xr, &w.hr, &w.xz, &w.hz, &w.xh, &w.hh}) fn(*op);
}
template <class Fn>
void for_each_operator(const GruWeights& w, Fn&& fn) {
    for (auto* op : {&w.xr, &w.hr, &w.xz, &w.hz, &w.xh, &w.hh}) fn(*op);
}

inline Index hidden_size(const GruWeights& w) { return w.xr.rows(); }
inline Index input_size(const GruWeights& w) { return w.xr.cols(); }

/// Copy with every projection replaced by its materialized dense matrix.
inline FactorizedLinear to_dense(const FactorizedLinear& f) {
    return FactorizedLinear{DenseWeights{materialize(f)}, f.bias};
}

inline GruWeights to_dense(const GruWeights& w) {
    return {to_dense(w.xr), to_dense(w.hr), to_dense(w.xz), to_dense(w.hz), to_dense(w.xh), to_dense(w.hh)};
}

namespace detail {

inline void check_length(std::span<const double> v, Index n, const char* what) {
    if (v.size() != n)
        throw ShapeError(std::string(what) + ": length " + std::to_string(v.size()) + ", expected " +
                         std::to_string(n));
}

inline void add_into(std::vector<double>& acc, std::span<const double> v) {
    for (Index i = 0; i < acc.size(); ++i) acc[i] += v[i];
}

}  // namespace detail

/// Intermediates of one GRU step, kept for the backward pass.
struct GruStepCache {
    std::vector<double> x;  // input after the dropout mask
    std::vector<double> h_prev, r, z, candidate, reset_hidden;
    std::vector<double> h;
};

inline GruStepCache gru_step_cached(const GruWeights& w, std::span<const double> x_t,
                                    std::span<const double> h_prev,
                                    std::optional<std::span<const double>> dropout_mask = std::nullopt) {
    const Index M = hidden_size(w), N = input_size(w);
    detail::check_length(x_t, N, "gru_step input");
    detail::check_length(h_prev, M, "gru_step state");
    GruStepCache c;
    c.x.assign(x_t.begin(), x_t.end());
    if (dropout_mask) {
        detail::check_length(*dropout_mask, N, "gru_step dropout mask");
        for (Index i = 0; i < N; ++i) c.x[i] *= (*dropout_mask)[i];
    }
    c.h_prev.assign(h_prev.begin(), h_prev.end());

    c.r = apply_linear(w.xr, c.x);
    detail::add_into(c.r, apply_linear(w.hr, c.h_prev));
    c.z = apply_linear(w.xz, c.x);
    detail::add_into(c.z, apply_linear(w.hz, c.h_prev));
    for (Index i = 0; i < M; ++i) {
        c.r[i] = sigmoid(c.r[i]);
        c.z[i] = sigmoid(c.z[i]);
    }
    c.reset_hidden.resize(M);
    for (Index i = 0; i < M; ++i) c.reset_hidden[i] = c.r[i] * c.h_prev[i];
    c.candidate = apply_linear(w.xh, c.x);
    detail::add_into(c.candidate, apply_linear(w.hh, c.reset_hidden));
    c.h.resize(M);
    for (Index i = 0; i < M; ++i) {
        c.candidate[i] = std::tanh(c.candidate[i]);
        c.h[i] = (1.0 - c.z[i]) * c.h_prev[i] + c.z[i] * c.candidate[i];
    }
    return c;
}

/// r = s(W_xr x + W_hr h + b_r), z = s(W_xz x + W_hz h + b_z),
/// h~ = tanh(W_xh x + W_hh (r . h) + b_h), h_t = (1 - z) . h + z . h~.
/// The optional dropout mask multiplies x_t only.
inline std::vector<double> gru_step(const GruWeights& w, std::span<const double> x_t,
                                    std::span<const double> h_prev,
                                    std::optional<std::span<const double>> dropout_mask = std::nullopt) {
    return gru_step_cached(w, x_t, h_prev, dropout_mask).h;
}

struct GruStepGrad {
    std::vector<double> dx;  // w.r.t. the unmasked input
    std::vector<double> dh_prev;
};

/// Accumulates parameter gradients of one step into `grad` given dL/dh_t.
inline GruStepGrad gru_step_backward(const GruWeights& w, const GruStepCache& c,
                                     std::span<const double> dh, GruWeights& grad,
                                     std::optional<std::span<const double>> dropout_mask = std::nullopt) {
    const Index M = hidden_size(w);
    detail::check_length(dh, M, "gru_step_backward");
    GruStepGrad out;
    out.dh_prev.assign(M, 0.0);
    std::vector<double> da_h(M), da_z(M), da_r(M);
    for (Index i = 0; i < M; ++i) {
        out.dh_prev[i] = dh[i] * (1.0 - c.z[i]);
        const double dcand = dh[i] * c.z[i];
        const double dz = dh[i] * (c.candidate[i] - c.h_prev[i]);
        da_h[i] = dcand * (1.0 - c.candidate[i] * c.candidate[i]);
        da_z[i] = dz * c.z[i] * (1.0 - c.z[i]);
    }
    out.dx = vjp_accumulate(w.xh, c.x, da_h, grad.xh);
    const auto d_reset_hidden = vjp_accumulate(w.hh, c.reset_hidden, da_h, grad.hh);
    for (Index i = 0; i < M; ++i) {
        out.dh_prev[i] += d_reset_hidden[i] * c.r[i];
        const double dr = d_reset_hidden[i] * c.h_prev[i];
        da_r[i] = dr * c.r[i] * (1.0 - c.r[i]);
    }
    detail::add_into(out.dx, vjp_accumulate(w.xz, c.x, da_z, grad.xz));
    detail::add_into(out.dh_prev, vjp_accumulate(w.hz, c.h_prev, da_z, grad.hz));
    detail::add_into(out.dx, vjp_accumulate(w.xr, c.x, da_r, grad.xr));
    detail::add_into(out.dh_prev, vjp_accumulate(w.hr, c.h_prev, da_r, grad.hr));
    if (dropout_mask)
        for (Index i = 0; i < out.dx.size(); ++i) out.dx[i] *= (*dropout_mask)[i];
    return out;
}

/// Peephole LSTM:
///   i = s(W_xi x + W_hi h + w_ci . c + b_i), f = s(W_xf x + W_hf h + w_cf . c + b_f),
///   c_t = f . c + i . tanh(W_xc x + W_hc h + b_c),
///   o = s(W_xo x + W_ho h + w_co . c_t + b_o), h_t = o . tanh(c_t).
inline CellState lstm_step(const LstmWeights& w, std::span<const double> x_t, const CellState& state) {
    const Index M = w.xi.rows();
    detail::check_length(x_t, w.xi.cols(), "lstm_step input");
    detail::check_length(state.h, M, "lstm_step hidden state");
    detail::check_length(state.c, M, "lstm_step cell state");
    for (const auto* p : {&w.ci, &w.cf, &w.co}) detail::check_length(*p, M, "lstm_step peephole");
    auto gate = [&](const FactorizedLinear& wx, const FactorizedLinear& wh) {
        auto a = apply_linear(wx, x_t);
        detail::add_into(a, apply_linear(wh, state.h));
        return a;
    };
    auto i = gate(w.xi, w.hi);
    auto f = gate(w.xf, w.hf);
    auto g = gate(w.xc, w.hc);
    auto o = gate(w.xo, w.ho);
    CellState next{std::vector<double>(M), std::vector<double>(M)};
    for (Index k = 0; k < M; ++k) {
        const double ig = sigmoid(i[k] + w.ci[k] * state.c[k]);
        const double fg = sigmoid(f[k] + w.cf[k] * state.c[k]);
        next.c[k] = fg * state.c[k] + ig * std::tanh(g[k]);
        const double og = sigmoid(o[k] + w.co[k] * next.c[k]);
        next.h[k] = og * std::tanh(next.c[k]);
    }
    return next;
}

/// h_t = tanh(W_xh x + W_hh h + b_h)
inline std::vector<double> elman_step(const ElmanWeights& w, std::span<const double> x_t,
                                      std::span<const double> h_prev) {
    detail::check_length(x_t, w.xh.cols(), "elman_step input");
    detail::check_length(h_prev, w.hh.cols(), "elman_step state");
    auto a = apply_linear(w.xh, x_t);
    detail::add_into(a, apply_linear(w.hh, h_prev));
    for (double& v : a) v = std::tanh(v);
    return a;
}

/// Left fold of `step(state, x_t) -> state` over the inputs; returns every
/// intermediate state (one per input).
template <class State, class Step>
std::vector<State> run_sequence(Step&& step, std::span<const std::vector<double>> inputs, State init) {
    std::vector<State> out;
    out.reserve(inputs.size());
    for (const auto& x : inputs) {
        if (x.size() != inputs.front().size()) throw ShapeError("run_sequence: inputs differ in length");
        init = step(init, x);
        out.push_back(init);
    }
    return out;
}

inline std::vector<std::vector<double>> run_gru(const GruWeights& w, std::span<const std::vector<double>> inputs,
                                                std::vector<double> h0 = {}) {
    if (h0.empty()) h0.assign(hidden_size(w), 0.0);
    return run_sequence(
        [&](const std::vector<double>& h, const std::vector<double>& x) { return gru_step(w, x, h); }, inputs,
        std::move(h0));
}

inline std::vector<CellState> run_lstm(const LstmWeights& w, std::span<const std::vector<double>> inputs,
                                       CellState init = {}) {
    const Index M = w.xi.rows();
    if (init.h.empty()) init = {std::vector<double>(M, 0.0), std::vector<double>(M, 0.0)};
    return run_sequence([&](const CellState& s, const std::vector<double>& x) { return lstm_step(w, x, s); },
                        inputs, std::move(init));
}

inline std::vector<std::vector<double>> run_elman(const ElmanWeights& w,
                                                  std::span<const std::vector<double>> inputs,
                                                  std::vector<double> h0 = {}) {
    if (h0.empty()) h0.assign(w.hh.rows(), 0.0);
    return run_sequence(
        [&](const std::vector<double>& h, const std::vector<double>& x) { return elman_step(w, x, h); }, inputs,
        std::move(h0));
}

}  // namespace tcrnn
