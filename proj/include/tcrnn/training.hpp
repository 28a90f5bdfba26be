// SPDX-License-Identifier: Apache-2.0
//
// Loss, Adam, global-norm clipping, the epoch loop with early stopping, and
// grid search over (learning rate, dropout).
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tcrnn/error.hpp"
#include "tcrnn/model.hpp"
#include "tcrnn/music_data.hpp"

namespace tcrnn {

using ParamViews = std::vector<std::span<double>>;

inline ParamViews param_views(GruModel& m) {
    ParamViews v;
    for_each_param(m, [&](std::span<double> s) { v.push_back(s); });
    return v;
}

/// Mean over valid timesteps of the per-timestep negative log-likelihood,
/// summed over notes. predictions/targets are laid out [rows, steps, notes]
/// and mask [rows, steps]. Probabilities are clamped to [1e-7, 1 - 1e-7].
inline double bce_nll(std::span<const double> predictions, std::span<const std::uint8_t> targets,
                      std::span<const std::uint8_t> mask, Index notes = music::kNumNotes) {
    if (predictions.size() != targets.size() || predictions.size() != mask.size() * notes)
        throw ShapeError("bce_nll: predictions, targets and mask disagree in size");
    double total = 0.0;
    Index count = 0;
    for (Index t = 0; t < mask.size(); ++t) {
        if (!mask[t]) continue;
        ++count;
        for (Index k = 0; k < notes; ++k) total += bce_term(predictions[t * notes + k], targets[t * notes + k]);
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

/// Scales all gradients by threshold / norm when their joint L2 norm exceeds
/// threshold. Returns the norm before clipping.
inline double clip_global_norm(const ParamViews& grads, double threshold = 5.0) {
    if (!(threshold > 0.0)) throw ConfigError("clip_global_norm: threshold must be > 0");
    double sq = 0.0;
    for (const auto& g : grads)
        for (double v : g) sq += v * v;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericalError("clip_global_norm: non-finite gradient norm");
    if (norm > threshold) {
        const double s = threshold / norm;
        for (const auto& g : grads)
            for (double& v : g) v *= s;
    }
    return norm;
}

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t t = 0;
    std::vector<std::vector<double>> m, v;
};

/// One bias-corrected Adam step (Kingma & Ba, Algorithm 1).
inline void adam_update(AdamState& st, const ParamViews& params, const ParamViews& grads) {
    if (params.size() != grads.size()) throw ShapeError("adam_update: parameter/gradient count mismatch");
    if (st.m.empty()) {
        for (const auto& p : params) {
            st.m.emplace_back(p.size(), 0.0);
            st.v.emplace_back(p.size(), 0.0);
        }
    }
    if (st.m.size() != params.size()) throw ShapeError("adam_update: state does not match parameters");
    ++st.t;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (Index a = 0; a < params.size(); ++a) {
        if (params[a].size() != grads[a].size() || params[a].size() != st.m[a].size())
            throw ShapeError("adam_update: array size mismatch");
        auto& m = st.m[a];
        auto& v = st.v[a];
        for (Index i = 0; i < params[a].size(); ++i) {
            const double g = grads[a][i];
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g;
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g * g;
            const double mhat = m[i] / c1, vhat = v[i] / c2;
            params[a][i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

struct TrainConfig {
    std::vector<double> lr_grid{1e-2, 5e-3, 1e-3};
    std::vector<double> dropout_grid{0.2, 0.3, 0.4, 0.5};
    double clip_threshold = 5.0;
    Index max_epochs = 200;
    Index patience = 10;
    Index batch_size = 16;
    std::uint64_t seed = 1234;

    void validate() const {
        if (lr_grid.empty() || dropout_grid.empty()) throw ConfigError("train: grids must be non-empty");
        if (!(clip_threshold > 0.0)) throw ConfigError("train: clip threshold must be > 0");
        if (batch_size == 0) throw ConfigError("train: batch size must be >= 1");
        for (double p : dropout_grid)
            if (p < 0.0 || p >= 1.0) throw ConfigError("train: dropout must lie in [0, 1)");
        for (double lr : lr_grid)
            if (!(lr > 0.0)) throw ConfigError("train: learning rate must be > 0");
    }
};

struct SplitMetrics {
    double nll = 0.0;
    double acc = 0.0;
};

/// Per-timestep NLL (micro-averaged over every valid timestep of every
/// sequence) of a model on a split, without dropout.
inline double split_nll(const GruModel& m, const music::Split& split) {
    double total = 0.0;
    Index count = 0;
    for (const auto& seq : split) {
        if (seq.size() < 2) continue;
        const Index steps = seq.size() - 1;
        std::vector<std::uint8_t> frames(seq.size() * music::kNumNotes, 0);
        for (Index t = 0; t < seq.size(); ++t)
            for (int n : seq[t]) frames[t * music::kNumNotes + n] = 1;
        const auto probs = predict_frames(m, frames, steps);
        for (Index t = 0; t < steps; ++t)
            for (Index k = 0; k < music::kNumNotes; ++k)
                total += bce_term(probs[t * music::kNumNotes + k], frames[(t + 1) * music::kNumNotes + k]);
        count += steps;
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

struct EpochRecord {
    Index epoch = 0;
    double train_loss = 0.0;  // running mean over the epoch's batches (with dropout)
    double valid_nll = 0.0;
};

struct TrainOutcome {
    GruModel model;  // weights from the epoch with the lowest validation NLL
    double initial_train_nll = 0.0;
    double train_nll = 0.0;
    double valid_nll = std::numeric_limits<double>::infinity();
    Index epochs = 0;  // epochs run
    Index best_epoch = 0;
    bool failed = false;
    std::string failure;
    std::vector<EpochRecord> history;
};

/// Computes the mean-per-timestep loss gradient of one batch into `grad`
/// (zeroed first). Returns the batch loss.
inline double batch_gradient(const GruModel& m, const music::Batch& batch, double dropout, std::mt19937_64& rng,
                             GruModel& grad) {
    for_each_param(grad, [](std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
    const Index count = batch.valid_positions();
    if (count == 0) return 0.0;
    const double scale = 1.0 / static_cast<double>(count);
    double loss = 0.0;
    for (Index b = 0; b < batch.size; ++b)
        loss += sequence_loss_and_grad(m, batch.input_row(b), batch.target_row(b), batch.lengths[b], dropout, rng,
                                       scale, grad);
    return loss * scale;
}

/// Trains with Adam and global-norm clipping, evaluating validation NLL after
/// every epoch and stopping after `patience` epochs without improvement.
/// Deterministic given cfg.seed. Non-finite losses or gradients mark the run
/// failed instead of throwing.
inline TrainOutcome train_model(GruModel model, const music::PianoRollDataset& data, const TrainConfig& cfg,
                                double lr, double dropout) {
    cfg.validate();
    TrainOutcome out;
    out.model = model;
    out.initial_train_nll = split_nll(model, data.train);
    AdamState adam;
    adam.lr = lr;
    GruModel grad = zeros_like(model);
    auto params = param_views(model);
    auto grads = param_views(grad);
    Index since_best = 0;
    for (Index epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const std::uint64_t epoch_seed = cfg.seed * 1000003ULL + epoch;
        const auto batches = music::to_batches(data.train, cfg.batch_size, epoch_seed);
        std::mt19937_64 rng(epoch_seed ^ 0x9e3779b97f4a7c15ULL);
        double loss_sum = 0.0;
        try {
            for (const auto& batch : batches) {
                const double loss = batch_gradient(model, batch, dropout, rng, grad);
                if (!std::isfinite(loss)) throw NumericalError("non-finite training loss");
                clip_global_norm(grads, cfg.clip_threshold);
                adam_update(adam, params, grads);
                loss_sum += loss;
            }
        } catch (const NumericalError& e) {
            out.failed = true;
            out.failure = e.what();
            out.epochs = epoch;
            return out;
        }
        const double valid = split_nll(model, data.valid);
        out.history.push_back({epoch, batches.empty() ? 0.0 : loss_sum / batches.size(), valid});
        out.epochs = epoch;
        if (!std::isfinite(valid)) {
            out.failed = true;
            out.failure = "non-finite validation NLL";
            return out;
        }
        if (valid < out.valid_nll) {
            out.valid_nll = valid;
            out.model = model;
            out.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    out.train_nll = split_nll(out.model, data.train);
    return out;
}

/// One row of a search report.
struct ReportRow {
    std::string model_kind;
    std::string rank_config;
    Index param_count = 0;
    double lr = 0.0;
    double dropout = 0.0;
    std::optional<double> train_nll, valid_nll, test_nll, test_acc;
    Index epochs = 0;
    std::optional<double> wall_time_s;  // only filled when timing is requested
};

template <class Model>
struct CellOutcome {
    std::optional<Model> model;  // empty when the run failed
    double train_nll = 0.0;
    double valid_nll = 0.0;
    Index epochs = 0;
};

template <class Model>
struct GridResult {
    std::vector<double> lrs, dropouts;
    std::vector<CellOutcome<Model>> cells;  // lr-major order
    std::vector<double> wall_times;
    std::optional<Index> best;  // index into cells; empty if every cell failed

    const Model& best_model() const { return *cells.at(best.value()).model; }
};

/// Trains one model per (lr, dropout) pair via `train_cell(lr, dropout)` and
/// selects the lowest validation NLL (first wins on ties). Failed cells
/// (no model, or non-finite validation loss) are kept in the result but never
/// selected.
template <class Model, class TrainCell>
GridResult<Model> grid_search(const TrainConfig& cfg, TrainCell&& train_cell) {
    cfg.validate();
    GridResult<Model> res;
    for (double lr : cfg.lr_grid)
        for (double p : cfg.dropout_grid) {
            const auto start = std::chrono::steady_clock::now();
            CellOutcome<Model> cell = train_cell(lr, p);
            res.wall_times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
            res.lrs.push_back(lr);
            res.dropouts.push_back(p);
            const bool ok = cell.model.has_value() && std::isfinite(cell.valid_nll);
            if (ok && (!res.best || cell.valid_nll < res.cells[*res.best].valid_nll)) res.best = res.cells.size();
            res.cells.push_back(std::move(cell));
        }
    return res;
}

/// Grid search over GRU models built by `factory(seed)` on a dataset.
inline GridResult<GruModel> grid_search_gru(const std::function<GruModel()>& factory,
                                            const music::PianoRollDataset& data, const TrainConfig& cfg) {
    return grid_search<GruModel>(cfg, [&](double lr, double dropout) {
        CellOutcome<GruModel> cell;
        TrainOutcome t = train_model(factory(), data, cfg, lr, dropout);
        cell.epochs = t.epochs;
        if (!t.failed) {
            cell.train_nll = t.train_nll;
            cell.valid_nll = t.valid_nll;
            cell.model = std::move(t.model);
        } else {
            cell.train_nll = cell.valid_nll = std::numeric_limits<double>::quiet_NaN();
        }
        return cell;
    });
}

}  // namespace tcrnn
