// SPDX-License-Identifier: Apache-2.0
//
// JSON encoding of operators and models. Scalars are written as C99
// hexadecimal floating-point strings ("0x1.8p+1"), which round-trip every
// double bit for bit.
//
// Operator layout:
//   {"kind": "dense"|"cp"|"tucker"|"tt",
//    "m_dims": [...], "n_dims": [...], "ranks": [...],
//    "arrays": [[hex, ...], ...],   // for_each_param order, row-major
//    "bias": [hex, ...] | null}
// Dense operators use m_dims = [M], n_dims = [N] and empty ranks.
#pragma once

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcrnn/error.hpp"
#include "tcrnn/factorized_linear.hpp"
#include "tcrnn/model.hpp"

namespace tcrnn {

inline std::string to_hex(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

inline double from_hex(const std::string& s) {
    if (s.empty()) throw DataError("empty number string");
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || errno == ERANGE) throw DataError("malformed number '" + s + "'");
    return v;
}

namespace detail {

inline nlohmann::json hex_array(std::span<const double> v) {
    nlohmann::json a = nlohmann::json::array();
    for (double x : v) a.push_back(to_hex(x));
    return a;
}

inline std::vector<double> read_hex_array(const nlohmann::json& a) {
    if (!a.is_array()) throw DataError("expected an array of numbers");
    std::vector<double> out;
    out.reserve(a.size());
    for (const auto& x : a) {
        if (!x.is_string()) throw DataError("expected a hex-float string");
        out.push_back(from_hex(x.get<std::string>()));
    }
    return out;
}

inline std::vector<Index> read_dims(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_array()) throw DataError(std::string("missing '") + key + "'");
    std::vector<Index> dims;
    for (const auto& v : j[key]) {
        if (!v.is_number_unsigned()) throw DataError(std::string("'") + key + "' must hold positive integers");
        dims.push_back(v.get<Index>());
    }
    return dims;
}

}  // namespace detail

inline nlohmann::json to_json(const FactorizedLinear& f) {
    nlohmann::json j;
    j["kind"] = std::string(to_string(f.kind()));
    std::visit(
        [&](const auto& w) {
            using W = std::decay_t<decltype(w)>;
            if constexpr (std::is_same_v<W, DenseWeights>) {
                j["m_dims"] = {w.w.rows};
                j["n_dims"] = {w.w.cols};
                j["ranks"] = nlohmann::json::array();
            } else {
                j["m_dims"] = w.shape.m_dims.dims();
                j["n_dims"] = w.shape.n_dims.dims();
                if constexpr (std::is_same_v<W, CPFactors>)
                    j["ranks"] = {w.rank};
                else if constexpr (std::is_same_v<W, TuckerFactors>)
                    j["ranks"] = w.ranks;
                else
                    j["ranks"] = w.tt_ranks;
            }
        },
        f.weights);
    nlohmann::json arrays = nlohmann::json::array();
    for_each_param(f, [&](std::span<const double> s) { arrays.push_back(detail::hex_array(s)); }, false);
    j["arrays"] = std::move(arrays);
    j["bias"] = f.has_bias() ? detail::hex_array(f.bias) : nlohmann::json(nullptr);
    return j;
}

inline FactorizedLinear linear_from_json(const nlohmann::json& j) {
    try {
        const FactorKind kind = parse_factor_kind(j.at("kind").get<std::string>());
        const auto m = detail::read_dims(j, "m_dims");
        const auto n = detail::read_dims(j, "n_dims");
        const auto ranks = detail::read_dims(j, "ranks");
        const TensorizedShape shape = kind == FactorKind::dense ? TensorizedShape(Shape{Shape(m).size()}, Shape{Shape(n).size()})
                                                                : TensorizedShape(Shape(m), Shape(n));
        FactorizedLinear f = make_linear(kind, shape, ranks, false);
        const auto& arrays = j.at("arrays");
        if (!arrays.is_array()) throw DataError("'arrays' must be a list");
        Index a = 0;
        for_each_param(
            f, [&](std::span<double> s) {
                if (a >= arrays.size()) throw DataError("too few arrays");
                const auto v = detail::read_hex_array(arrays[a++]);
                if (v.size() != s.size())
                    throw DataError("array " + std::to_string(a - 1) + " holds " + std::to_string(v.size()) +
                                    " values, expected " + std::to_string(s.size()));
                std::copy(v.begin(), v.end(), s.begin());
            },
            false);
        if (a != arrays.size()) throw DataError("too many arrays");
        if (j.contains("bias") && !j["bias"].is_null()) {
            f.bias = detail::read_hex_array(j["bias"]);
            if (f.bias.size() != shape.rows()) throw DataError("bias length does not match rows");
        }
        return f;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("operator: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("operator: ") + e.what());
    }
}

inline nlohmann::json to_json(const ModelSpec& s) {
    return {{"kind", std::string(to_string(s.kind))},
            {"input_dims", s.input_dims.dims()},
            {"hidden_dims", s.hidden_dims.dims()},
            {"ranks", s.ranks},
            {"leaky_slope", s.leaky_slope},
            {"dropout_placement", std::string(to_string(s.dropout_placement))}};
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
    ModelSpec s;
    s.kind = parse_factor_kind(j.at("kind").get<std::string>());
    s.input_dims = Shape(j.at("input_dims").get<std::vector<Index>>());
    s.hidden_dims = Shape(j.at("hidden_dims").get<std::vector<Index>>());
    s.ranks = j.value("ranks", std::vector<Index>{});
    s.leaky_slope = j.value("leaky_slope", 0.01);
    s.dropout_placement = parse_dropout_placement(j.value("dropout_placement", std::string("cell_input")));
    return s;
}

/// A model file: the architecture plus every operator keyed by role.
inline nlohmann::json to_json(const GruModel& m) {
    nlohmann::json cell = {{"xr", to_json(m.cell.xr)}, {"hr", to_json(m.cell.hr)}, {"xz", to_json(m.cell.xz)},
                           {"hz", to_json(m.cell.hz)}, {"xh", to_json(m.cell.xh)}, {"hh", to_json(m.cell.hh)}};
    return {{"format", "tcrnn-gru-model/1"},
            {"spec", to_json(m.spec)},
            {"input_proj", to_json(m.input_proj)},
            {"cell", std::move(cell)},
            {"output", to_json(m.output)}};
}

inline GruModel model_from_json(const nlohmann::json& j) {
    try {
        GruModel m;
        m.spec = model_spec_from_json(j.at("spec"));
        m.input_proj = linear_from_json(j.at("input_proj"));
        const auto& c = j.at("cell");
        m.cell.xr = linear_from_json(c.at("xr"));
        m.cell.hr = linear_from_json(c.at("hr"));
        m.cell.xz = linear_from_json(c.at("xz"));
        m.cell.hz = linear_from_json(c.at("hz"));
        m.cell.xh = linear_from_json(c.at("xh"));
        m.cell.hh = linear_from_json(c.at("hh"));
        m.output = linear_from_json(j.at("output"));
        const Index N = m.spec.input_size(), M = m.spec.hidden_size();
        if (m.input_proj.rows() != N || m.input_proj.cols() != music::kNumNotes || m.output.rows() != music::kNumNotes ||
            m.output.cols() != M)
            throw DataError("model: projection shapes do not match the architecture");
        for_each_operator(m.cell, [&](const FactorizedLinear& op) {
            if (op.rows() != M) throw DataError("model: cell operator has wrong output size");
        });
        for (const auto* op : {&m.cell.xr, &m.cell.xz, &m.cell.xh})
            if (op->cols() != N || op->bias.size() != M) throw DataError("model: input operator shape mismatch");
        for (const auto* op : {&m.cell.hr, &m.cell.hz, &m.cell.hh})
            if (op->cols() != M) throw DataError("model: hidden operator shape mismatch");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("model: ") + e.what());
    }
}

inline GruModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open model file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("model file '" + path + "': " + e.what());
    }
    return model_from_json(j);
}

inline void save_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << j.dump(1) << "\n";
}

}  // namespace tcrnn
