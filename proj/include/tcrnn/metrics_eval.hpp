// SPDX-License-Identifier: Apache-2.0
//
// Frame-level accuracy, split evaluation and result tables.
#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcrnn/error.hpp"
#include "tcrnn/music_data.hpp"
#include "tcrnn/training.hpp"

namespace tcrnn {

struct FrameCounts {
    std::uint64_t tp = 0, fp = 0, fn = 0;

    FrameCounts& operator+=(const FrameCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
    /// TP / (TP + FP + FN); 1 when nothing was expected or predicted.
    double accuracy() const {
        const auto denom = tp + fp + fn;
        return denom ? static_cast<double>(tp) / static_cast<double>(denom) : 1.0;
    }
};

/// A note is predicted on iff p > threshold (strictly).
inline FrameCounts count_frames(std::span<const double> predictions, std::span<const std::uint8_t> targets,
                                std::span<const std::uint8_t> mask, double threshold = 0.5,
                                Index notes = music::kNumNotes) {
    if (predictions.size() != targets.size() || predictions.size() != mask.size() * notes)
        throw ShapeError("accuracy: predictions, targets and mask disagree in size");
    FrameCounts c;
    for (Index t = 0; t < mask.size(); ++t) {
        if (!mask[t]) continue;
        for (Index k = 0; k < notes; ++k) {
            const bool on = predictions[t * notes + k] > threshold;
            const bool truth = targets[t * notes + k] != 0;
            c.tp += on && truth;
            c.fp += on && !truth;
            c.fn += !on && truth;
        }
    }
    return c;
}

/// Frame accuracy accumulated over all valid timesteps.
inline double accuracy(std::span<const double> predictions, std::span<const std::uint8_t> targets,
                       std::span<const std::uint8_t> mask, double threshold = 0.5, Index notes = music::kNumNotes) {
    return count_frames(predictions, targets, mask, threshold, notes).accuracy();
}

/// NLL per timestep and frame accuracy of a model on a split, both
/// micro-averaged over every prediction position. `Model` must support
/// predict_frames(model, frames, steps) returning next-frame probabilities.
template <class Model>
SplitMetrics evaluate(const Model& model, const music::Split& split, double threshold = 0.5) {
    double total = 0.0;
    Index steps_total = 0;
    FrameCounts counts;
    for (const auto& seq : split) {
        if (seq.size() < 2) continue;
        const Index steps = seq.size() - 1;
        std::vector<std::uint8_t> frames(seq.size() * music::kNumNotes, 0);
        for (Index t = 0; t < seq.size(); ++t)
            for (int n : seq[t]) frames[t * music::kNumNotes + n] = 1;
        const std::vector<double> probs = predict_frames(model, std::span<const std::uint8_t>(frames), steps);
        const std::span<const std::uint8_t> targets(frames.data() + music::kNumNotes, steps * music::kNumNotes);
        const std::vector<std::uint8_t> mask(steps, 1);
        for (Index i = 0; i < probs.size(); ++i) total += bce_term(probs[i], targets[i]);
        counts += count_frames(probs, targets, mask, threshold);
        steps_total += steps;
    }
    if (steps_total == 0) throw DataError("evaluate: split has no prediction positions");
    return {total / static_cast<double>(steps_total), counts.accuracy()};
}

// ---------------------------------------------------------------------------
// Reports and tables

/// Shortest decimal that round-trips to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline const std::vector<std::string>& report_columns() {
    static const std::vector<std::string> cols{"model_kind", "rank_config", "param_count", "lr",
                                               "dropout",    "train_nll",   "valid_nll",   "test_nll",
                                               "test_acc",   "epochs",      "wall_time_s"};
    return cols;
}

/// A grid search over one (dataset, model kind, rank configuration).
struct SearchReport {
    std::string dataset;
    std::vector<ReportRow> rows;
    std::optional<Index> best;
};

inline std::string rows_to_csv(const std::vector<ReportRow>& rows) {
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    std::string out;
    const auto& cols = report_columns();
    for (Index i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
    out += "\r\n";
    for (const auto& r : rows) {
        const std::vector<std::string> f{csv_field(r.model_kind), csv_field(r.rank_config), std::to_string(r.param_count),
                                         format_double(r.lr),     format_double(r.dropout),  opt(r.train_nll),
                                         opt(r.valid_nll),        opt(r.test_nll),           opt(r.test_acc),
                                         std::to_string(r.epochs), opt(r.wall_time_s)};
        for (Index i = 0; i < f.size(); ++i) out += (i ? "," : "") + f[i];
        out += "\r\n";
    }
    return out;
}

inline nlohmann::json row_to_json(const ReportRow& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"model_kind", r.model_kind}, {"rank_config", r.rank_config}, {"param_count", r.param_count},
            {"lr", r.lr},                 {"dropout", r.dropout},         {"train_nll", opt(r.train_nll)},
            {"valid_nll", opt(r.valid_nll)}, {"test_nll", opt(r.test_nll)}, {"test_acc", opt(r.test_acc)},
            {"epochs", r.epochs},         {"wall_time_s", opt(r.wall_time_s)}};
}

inline ReportRow row_from_json(const nlohmann::json& j) {
    auto opt = [&](const char* k) -> std::optional<double> {
        if (!j.contains(k) || j[k].is_null()) return std::nullopt;
        return j[k].get<double>();
    };
    ReportRow r;
    r.model_kind = j.at("model_kind").get<std::string>();
    r.rank_config = j.at("rank_config").get<std::string>();
    r.param_count = j.at("param_count").get<Index>();
    r.lr = j.at("lr").get<double>();
    r.dropout = j.at("dropout").get<double>();
    r.train_nll = opt("train_nll");
    r.valid_nll = opt("valid_nll");
    r.test_nll = opt("test_nll");
    r.test_acc = opt("test_acc");
    r.epochs = j.at("epochs").get<Index>();
    r.wall_time_s = opt("wall_time_s");
    return r;
}

inline nlohmann::json report_to_json(const SearchReport& rep) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : rep.rows) rows.push_back(row_to_json(r));
    return {{"dataset", rep.dataset}, {"best", rep.best ? nlohmann::json(*rep.best) : nlohmann::json(nullptr)},
            {"rows", rows}};
}

inline SearchReport report_from_json(const nlohmann::json& j) {
    SearchReport rep;
    try {
        rep.dataset = j.at("dataset").get<std::string>();
        if (j.contains("best") && !j["best"].is_null()) rep.best = j["best"].get<Index>();
        for (const auto& r : j.at("rows")) rep.rows.push_back(row_from_json(r));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("report: ") + e.what());
    }
    if (rep.best && *rep.best >= rep.rows.size()) throw DataError("report: best index out of range");
    return rep;
}

/// Grid winners, one per report, sorted by model kind then ascending
/// param_count. Reports without a winner are skipped.
inline std::vector<ReportRow> emit_table(const std::vector<SearchReport>& reports) {
    std::vector<ReportRow> rows;
    for (const auto& rep : reports)
        if (rep.best) rows.push_back(rep.rows[*rep.best]);
    std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
        if (a.model_kind != b.model_kind) return a.model_kind < b.model_kind;
        return a.param_count < b.param_count;
    });
    return rows;
}

/// (model, param_count, test_nll) series per dataset, rows sorted by
/// param_count. Every report contributes its winning row.
inline std::map<std::string, std::string> plot_data(const std::vector<SearchReport>& reports) {
    std::map<std::string, std::vector<ReportRow>> by_dataset;
    for (const auto& rep : reports) {
        auto& rows = by_dataset[rep.dataset];
        if (rep.best) rows.push_back(rep.rows[*rep.best]);
    }
    std::map<std::string, std::string> out;
    for (auto& [name, rows] : by_dataset) {
        std::stable_sort(rows.begin(), rows.end(),
                         [](const ReportRow& a, const ReportRow& b) { return a.param_count < b.param_count; });
        std::string csv = "model,param_count,test_nll\r\n";
        for (const auto& r : rows)
            csv += csv_field(r.model_kind) + "," + std::to_string(r.param_count) + "," +
                   (r.test_nll ? format_double(*r.test_nll) : std::string()) + "\r\n";
        out[name] = std::move(csv);
    }
    return out;
}

}  // namespace tcrnn
