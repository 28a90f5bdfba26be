// SPDX-License-Identifier: Apache-2.0
//
// The piano-roll sequence model: a dense 88 -> N input projection with
// LeakyReLU, a (possibly factorized) GRU with hidden size M, and a dense
// M -> 88 sigmoid output layer predicting the next frame.
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tcrnn/error.hpp"
#include "tcrnn/factorized_linear.hpp"
#include "tcrnn/music_data.hpp"
#include "tcrnn/recurrent_cells.hpp"

namespace tcrnn {

enum class DropoutPlacement { cell_input, cell_output, none };

inline std::string_view to_string(DropoutPlacement p) {
    switch (p) {
        case DropoutPlacement::cell_input: return "cell_input";
        case DropoutPlacement::cell_output: return "cell_output";
        case DropoutPlacement::none: return "none";
    }
    return "?";
}

inline DropoutPlacement parse_dropout_placement(std::string_view s) {
    if (s == "cell_input") return DropoutPlacement::cell_input;
    if (s == "cell_output") return DropoutPlacement::cell_output;
    if (s == "none") return DropoutPlacement::none;
    throw ConfigError("unknown dropout placement '" + std::string(s) + "'");
}

/// Architecture of a GRU sequence model. input_dims / hidden_dims factor N and
/// M; input-to-hidden operators use (hidden_dims, input_dims) and
/// hidden-to-hidden operators (hidden_dims, hidden_dims).
struct ModelSpec {
    FactorKind kind = FactorKind::dense;
    Shape input_dims{256};
    Shape hidden_dims{512};
    std::vector<Index> ranks;  // per make_linear; shared by all six projections
    double leaky_slope = 0.01;
    DropoutPlacement dropout_placement = DropoutPlacement::cell_input;

    Index input_size() const { return input_dims.size(); }
    Index hidden_size() const { return hidden_dims.size(); }
    TensorizedShape input_shape() const { return {hidden_dims, input_dims}; }
    TensorizedShape hidden_shape() const { return {hidden_dims, hidden_dims}; }

    /// Throws ConfigError on inconsistent shapes or ranks. Returns false when a
    /// Tucker rank equals its mode size (no compression on that mode).
    bool validate() const {
        if (kind == FactorKind::dense) return true;
        if (input_dims.order() != hidden_dims.order())
            throw ConfigError("input and hidden factorizations must have the same order");
        const auto in = input_shape(), hid = hidden_shape();
        switch (kind) {
            case FactorKind::cp:
                if (ranks.size() != 1 || ranks[0] == 0) throw ConfigError("CP needs one positive rank");
                return true;
            case FactorKind::tucker: return check_tucker_ranks(in, ranks) & check_tucker_ranks(hid, ranks);
            case FactorKind::tt:
                check_tt_ranks(in, ranks);
                return true;
            default: return true;
        }
    }
};

struct GruModel {
    ModelSpec spec;
    FactorizedLinear input_proj;  // dense N x 88
    GruWeights cell;
    FactorizedLinear output;  // dense 88 x M
};

template <class Model, class Fn>
    requires std::is_same_v<std::remove_const_t<Model>, GruModel>
void for_each_operator(Model& m, Fn&& fn) {
    fn(m.input_proj);
    for_each_operator(m.cell, fn);
    fn(m.output);
}

template <class Model, class Fn>
    requires std::is_same_v<std::remove_const_t<Model>, GruModel>
void for_each_param(Model& m, Fn&& fn) {
    for_each_operator(m, [&](auto& op) { for_each_param(op, fn); });
}

inline GruModel zeros_like(const GruModel& m) {
    GruModel z = m;
    for_each_param(z, [](std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
    return z;
}

/// Stored scalars of the recurrent cell (six projections plus the three gate
/// biases): the figure compared across compressed and uncompressed GRUs.
inline Index cell_param_count(const GruModel& m) {
    Index n = 0;
    for_each_operator(m.cell, [&](const FactorizedLinear& op) { n += param_count(op, true); });
    return n;
}

inline Index total_param_count(const GruModel& m) {
    Index n = 0;
    for_each_operator(m, [&](const FactorizedLinear& op) { n += param_count(op, true); });
    return n;
}

/// Builds a model with the given architecture. Every weight matrix targets
/// Var(W) = 2 / (fan_in + fan_out); factorized projections get the matching
/// per-factor standard deviation. Biases start at zero.
inline GruModel init_model(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    const Index N = spec.input_size(), M = spec.hidden_size();
    auto glorot = [](Index fan_in, Index fan_out) {
        return std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    };
    std::seed_seq seq{seed};
    std::vector<std::uint64_t> seeds(8);
    seq.generate(seeds.begin(), seeds.end());
    const TensorizedShape in_shape = spec.kind == FactorKind::dense
                                         ? TensorizedShape(Shape{M}, Shape{N})
                                         : spec.input_shape();
    const TensorizedShape hid_shape = spec.kind == FactorKind::dense
                                          ? TensorizedShape(Shape{M}, Shape{M})
                                          : spec.hidden_shape();
    GruModel m;
    m.spec = spec;
    m.input_proj = init_linear(FactorKind::dense, TensorizedShape(Shape{N}, Shape{music::kNumNotes}), {},
                               glorot(music::kNumNotes, N), seeds[0]);
    const double s_in = glorot(N, M), s_hid = glorot(M, M);
    m.cell.xr = init_linear(spec.kind, in_shape, spec.ranks, s_in, seeds[1], true);
    m.cell.hr = init_linear(spec.kind, hid_shape, spec.ranks, s_hid, seeds[2], false);
    m.cell.xz = init_linear(spec.kind, in_shape, spec.ranks, s_in, seeds[3], true);
    m.cell.hz = init_linear(spec.kind, hid_shape, spec.ranks, s_hid, seeds[4], false);
    m.cell.xh = init_linear(spec.kind, in_shape, spec.ranks, s_in, seeds[5], true);
    m.cell.hh = init_linear(spec.kind, hid_shape, spec.ranks, s_hid, seeds[6], false);
    m.output = init_linear(FactorKind::dense, TensorizedShape(Shape{music::kNumNotes}, Shape{M}), {},
                           glorot(M, music::kNumNotes), seeds[7]);
    return m;
}

/// Same model with every GRU projection materialized to a dense matrix.
inline GruModel densified(const GruModel& m) {
    GruModel d = m;
    d.cell = to_dense(m.cell);
    return d;
}

/// Lower clamp for probabilities inside the log-likelihood.
inline constexpr double kProbClamp = 1e-7;

inline double bce_term(double p, std::uint8_t y) {
    p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
    return y ? -std::log(p) : -std::log1p(-p);
}

namespace detail {

inline std::vector<double> to_double(std::span<const std::uint8_t> frame) {
    return std::vector<double>(frame.begin(), frame.end());
}

inline std::vector<double> inverted_dropout_mask(Index n, double p, std::mt19937_64& rng) {
    std::vector<double> mask(n, 1.0);
    if (p <= 0.0) return mask;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double keep = 1.0 / (1.0 - p);
    for (double& v : mask) v = u(rng) < p ? 0.0 : keep;
    return mask;
}

}  // namespace detail

/// Next-frame probabilities for each of `steps` input frames (each 88 wide).
/// Dropout is never applied here.
inline std::vector<double> predict_frames(const GruModel& m, std::span<const std::uint8_t> frames, Index steps) {
    const Index M = m.spec.hidden_size();
    if (frames.size() < steps * music::kNumNotes) throw ShapeError("predict_frames: too few frames");
    std::vector<double> probs;
    probs.reserve(steps * music::kNumNotes);
    std::vector<double> h(M, 0.0);
    for (Index t = 0; t < steps; ++t) {
        auto a = apply_linear(m.input_proj, detail::to_double(frames.subspan(t * music::kNumNotes, music::kNumNotes)));
        for (double& v : a) v = v > 0.0 ? v : m.spec.leaky_slope * v;
        h = gru_step(m.cell, a, h);
        for (double logit : apply_linear(m.output, h)) probs.push_back(sigmoid(logit));
    }
    return probs;
}

/// Runs one sequence forward and backward. Returns the summed (over steps and
/// notes) binary cross-entropy and adds `scale` times its gradient into
/// `grad`. With a sigmoid output the logit gradient is taken as p - y, the
/// exact derivative of the unclamped loss.
inline double sequence_loss_and_grad(const GruModel& m, std::span<const std::uint8_t> inputs,
                                     std::span<const std::uint8_t> targets, Index steps, double dropout,
                                     std::mt19937_64& rng, double scale, GruModel& grad) {
    const Index M = m.spec.hidden_size(), N = m.spec.input_size();
    constexpr Index K = music::kNumNotes;
    const bool drop_in = dropout > 0.0 && m.spec.dropout_placement == DropoutPlacement::cell_input;
    const bool drop_out = dropout > 0.0 && m.spec.dropout_placement == DropoutPlacement::cell_output;

    struct Step {
        std::vector<double> x, pre_act, cell_in, in_mask, out_mask, h_out;
        GruStepCache cache;
    };
    std::vector<Step> tape(steps);
    std::vector<double> h(M, 0.0);
    double loss = 0.0;
    std::vector<std::vector<double>> dlogits(steps);
    for (Index t = 0; t < steps; ++t) {
        Step& s = tape[t];
        s.x = detail::to_double(inputs.subspan(t * K, K));
        s.pre_act = apply_linear(m.input_proj, s.x);
        s.cell_in = s.pre_act;
        for (double& v : s.cell_in) v = v > 0.0 ? v : m.spec.leaky_slope * v;
        if (drop_in) s.in_mask = detail::inverted_dropout_mask(N, dropout, rng);
        s.cache = drop_in ? gru_step_cached(m.cell, s.cell_in, h, std::span<const double>(s.in_mask))
                          : gru_step_cached(m.cell, s.cell_in, h);
        h = s.cache.h;
        s.h_out = h;
        if (drop_out) {
            s.out_mask = detail::inverted_dropout_mask(M, dropout, rng);
            for (Index i = 0; i < M; ++i) s.h_out[i] *= s.out_mask[i];
        }
        const auto logits = apply_linear(m.output, s.h_out);
        dlogits[t].resize(K);
        for (Index k = 0; k < K; ++k) {
            const double p = sigmoid(logits[k]);
            const std::uint8_t y = targets[t * K + k];
            loss += bce_term(p, y);
            dlogits[t][k] = scale * (p - static_cast<double>(y));
        }
    }
    std::vector<double> dh_next(M, 0.0);
    for (Index t = steps; t-- > 0;) {
        Step& s = tape[t];
        auto dh = vjp_accumulate(m.output, s.h_out, dlogits[t], grad.output);
        if (drop_out)
            for (Index i = 0; i < M; ++i) dh[i] *= s.out_mask[i];
        for (Index i = 0; i < M; ++i) dh[i] += dh_next[i];
        const auto g = drop_in ? gru_step_backward(m.cell, s.cache, dh, grad.cell, std::span<const double>(s.in_mask))
                               : gru_step_backward(m.cell, s.cache, dh, grad.cell);
        dh_next = g.dh_prev;
        std::vector<double> da(N);
        for (Index i = 0; i < N; ++i) da[i] = g.dx[i] * (s.pre_act[i] > 0.0 ? 1.0 : m.spec.leaky_slope);
        vjp_accumulate(m.input_proj, s.x, da, grad.input_proj);
    }
    return loss;
}

}  // namespace tcrnn
