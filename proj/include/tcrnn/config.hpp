// SPDX-License-Identifier: Apache-2.0
//
// Run configuration for the command-line tool. Stored as JSON:
//
//   {
//     "model": {"kind": "tt", "input_size": 256, "hidden_size": 512,
//               "input_dims": [4,4,4,4], "hidden_dims": [8,4,4,4],
//               "ranks": [1,3,3,3,1], "leaky_slope": 0.01,
//               "dropout_placement": "cell_input"},
//     "train": {"lr_grid": [...], "dropout_grid": [...], "clip_threshold": 5,
//               "max_epochs": 200, "patience": 10, "batch_size": 16,
//               "seed": 1234, "train_limit": 0},
//     "dataset": "data/jsb_chorales.json",
//     "out": "runs/tt"
//   }
//
// Every key is optional; missing keys take the defaults shown by
// `tcrnn config`. train_limit > 0 keeps only the first that many training
// sequences.
#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcrnn/error.hpp"
#include "tcrnn/model.hpp"
#include "tcrnn/serialize.hpp"
#include "tcrnn/training.hpp"

namespace tcrnn {

struct RunConfig {
    ModelSpec model;
    TrainConfig train;
    Index train_limit = 0;
    std::string dataset;
    std::string out = "runs";

    /// Throws ConfigError on any inconsistency; returns false when the Tucker
    /// ranks do not strictly compress every mode.
    bool validate() const {
        train.validate();
        return model.validate();
    }
};

/// Expands a rank list for `kind` at tensor order `order`: a single value r
/// means R = r (CP), r on every core mode (Tucker), or (1, r, ..., r, 1) (TT).
inline std::vector<Index> expand_ranks(FactorKind kind, Index order, const std::vector<Index>& ranks) {
    if (kind == FactorKind::dense) return {};
    if (ranks.empty()) throw ConfigError("ranks are required for model kind " + std::string(to_string(kind)));
    if (ranks.size() != 1) return ranks;
    const Index r = ranks[0];
    switch (kind) {
        case FactorKind::tucker: return std::vector<Index>(2 * order, r);
        case FactorKind::tt: {
            std::vector<Index> out(order + 1, r);
            out.front() = out.back() = 1;
            return out;
        }
        default: return ranks;
    }
}

/// Parses "30", "1,5,5,1" or "2x3x2x3".
inline std::vector<Index> parse_rank_list(const std::string& s) {
    std::vector<Index> out;
    std::string token;
    auto flush = [&] {
        if (token.empty()) throw ConfigError("malformed rank list '" + s + "'");
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(token, &used);
        } catch (const std::exception&) {
            throw ConfigError("malformed rank list '" + s + "'");
        }
        if (used != token.size()) throw ConfigError("malformed rank list '" + s + "'");
        out.push_back(static_cast<Index>(v));
        token.clear();
    };
    for (char c : s) {
        if (c == ',' || c == 'x') {
            flush();
        } else if (c != ' ') {
            token += c;
        }
    }
    flush();
    return out;
}

inline std::string rank_config_string(const ModelSpec& spec) {
    if (spec.kind == FactorKind::dense) return "-";
    std::string s;
    for (Index i = 0; i < spec.ranks.size(); ++i) s += (i ? "," : "") + std::to_string(spec.ranks[i]);
    return s;
}

inline nlohmann::json to_json(const TrainConfig& t) {
    return {{"lr_grid", t.lr_grid},         {"dropout_grid", t.dropout_grid}, {"clip_threshold", t.clip_threshold},
            {"max_epochs", t.max_epochs},   {"patience", t.patience},         {"batch_size", t.batch_size},
            {"seed", t.seed}};
}

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json model = to_json(c.model);
    model["input_size"] = c.model.input_size();
    model["hidden_size"] = c.model.hidden_size();
    nlohmann::json train = to_json(c.train);
    train["train_limit"] = c.train_limit;
    return {{"model", model}, {"train", train}, {"dataset", c.dataset}, {"out", c.out}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        if (j.contains("model")) {
            const auto& m = j["model"];
            if (m.contains("kind")) c.model.kind = parse_factor_kind(m["kind"].get<std::string>());
            if (m.contains("input_dims")) c.model.input_dims = Shape(m["input_dims"].get<std::vector<Index>>());
            else if (m.contains("input_size")) c.model.input_dims = Shape{m["input_size"].get<Index>()};
            if (m.contains("hidden_dims")) c.model.hidden_dims = Shape(m["hidden_dims"].get<std::vector<Index>>());
            else if (m.contains("hidden_size")) c.model.hidden_dims = Shape{m["hidden_size"].get<Index>()};
            if (m.contains("input_size") && m["input_size"].get<Index>() != c.model.input_size())
                throw ConfigError("input_dims " + c.model.input_dims.str() + " do not multiply to input_size " +
                                  std::to_string(m["input_size"].get<Index>()));
            if (m.contains("hidden_size") && m["hidden_size"].get<Index>() != c.model.hidden_size())
                throw ConfigError("hidden_dims " + c.model.hidden_dims.str() + " do not multiply to hidden_size " +
                                  std::to_string(m["hidden_size"].get<Index>()));
            if (m.contains("ranks")) c.model.ranks = m["ranks"].get<std::vector<Index>>();
            if (m.contains("leaky_slope")) c.model.leaky_slope = m["leaky_slope"].get<double>();
            if (m.contains("dropout_placement"))
                c.model.dropout_placement = parse_dropout_placement(m["dropout_placement"].get<std::string>());
        }
        if (j.contains("train")) {
            const auto& t = j["train"];
            if (t.contains("lr_grid")) c.train.lr_grid = t["lr_grid"].get<std::vector<double>>();
            if (t.contains("dropout_grid")) c.train.dropout_grid = t["dropout_grid"].get<std::vector<double>>();
            if (t.contains("clip_threshold")) c.train.clip_threshold = t["clip_threshold"].get<double>();
            if (t.contains("max_epochs")) c.train.max_epochs = t["max_epochs"].get<Index>();
            if (t.contains("patience")) c.train.patience = t["patience"].get<Index>();
            if (t.contains("batch_size")) c.train.batch_size = t["batch_size"].get<Index>();
            if (t.contains("seed")) c.train.seed = t["seed"].get<std::uint64_t>();
            if (t.contains("train_limit")) c.train_limit = t["train_limit"].get<Index>();
        }
        if (j.contains("dataset")) c.dataset = j["dataset"].get<std::string>();
        if (j.contains("out")) c.out = j["out"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const ShapeError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (c.model.kind != FactorKind::dense)
        c.model.ranks = expand_ranks(c.model.kind, c.model.hidden_dims.order(), c.model.ranks);
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace tcrnn
