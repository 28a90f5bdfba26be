// SPDX-License-Identifier: Apache-2.0
//
// Implementations of the tcrnn command-line subcommands. Each returns a
// process exit code and writes human-readable output to the given stream;
// tools/tcrnn.cpp only parses arguments.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcrnn/config.hpp"
#include "tcrnn/error.hpp"
#include "tcrnn/metrics_eval.hpp"
#include "tcrnn/model.hpp"
#include "tcrnn/music_data.hpp"
#include "tcrnn/serialize.hpp"
#include "tcrnn/training.hpp"

namespace tcrnn::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

/// Maps library exceptions onto exit codes.
template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kUsage;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kData;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const ShapeError& e) {
        err << "shape error: " << e.what() << "\n";
        return kUsage;
    }
}

/// Environment variable overriding the output directory of a config file
/// (an explicit --out still wins).
inline constexpr const char* kOutDirEnv = "TCRNN_OUT";

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot write '" + p.string() + "'");
    out << s;
}

struct TrainOptions {
    bool grid = false;  // false: single cell at (lr_grid[0], dropout_grid[0])
    bool timing = false;
};

/// train / gridsearch: writes model.json, report.json, report.csv and
/// history.json into cfg.out.
inline int cmd_train(const RunConfig& cfg_in, const TrainOptions& opt, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        RunConfig cfg = cfg_in;
        if (!opt.grid) {
            cfg.train.lr_grid.resize(1);
            cfg.train.dropout_grid.resize(1);
        }
        if (!cfg.validate()) err << "warning: a Tucker rank equals its mode size; that mode is not compressed\n";
        if (cfg.dataset.empty()) throw ConfigError("no dataset given (--dataset or config 'dataset')");
        music::PianoRollDataset data = music::load_dataset(cfg.dataset);
        if (cfg.train_limit > 0 && data.train.size() > cfg.train_limit) data.train.resize(cfg.train_limit);
        if (data.train.empty() || data.valid.empty()) throw DataError("train and valid splits must be non-empty");

        const std::filesystem::path dir(cfg.out);
        std::filesystem::create_directories(dir);

        struct CellLog {
            double lr, dropout, initial;
            std::vector<EpochRecord> history;
            std::string failure;
        };
        std::vector<CellLog> logs;
        const GruModel proto = init_model(cfg.model, cfg.train.seed);
        auto result = grid_search<GruModel>(cfg.train, [&](double lr, double p) {
            out << "training " << to_string(cfg.model.kind) << " lr=" << lr << " dropout=" << p << std::endl;
            TrainOutcome t = train_model(proto, data, cfg.train, lr, p);
            logs.push_back({lr, p, t.initial_train_nll, t.history, t.failure});
            CellOutcome<GruModel> cell;
            cell.epochs = t.epochs;
            if (t.failed) {
                out << "  diverged: " << t.failure << std::endl;
                cell.train_nll = cell.valid_nll = std::numeric_limits<double>::quiet_NaN();
                return cell;
            }
            cell.train_nll = t.train_nll;
            cell.valid_nll = t.valid_nll;
            cell.model = std::move(t.model);
            out << "  epochs=" << t.epochs << " train_nll=" << cell.train_nll << " valid_nll=" << cell.valid_nll
                << std::endl;
            return cell;
        });

        SearchReport report;
        report.dataset = data.name;
        report.best = result.best;
        for (Index i = 0; i < result.cells.size(); ++i) {
            const auto& cell = result.cells[i];
            ReportRow row;
            row.model_kind = std::string(to_string(cfg.model.kind));
            row.rank_config = rank_config_string(cfg.model);
            row.param_count = cell_param_count(proto);
            row.lr = result.lrs[i];
            row.dropout = result.dropouts[i];
            row.epochs = cell.epochs;
            if (cell.model) {
                row.train_nll = cell.train_nll;
                row.valid_nll = cell.valid_nll;
                if (!data.test.empty()) {
                    const auto m = evaluate(*cell.model, data.test);
                    row.test_nll = m.nll;
                    row.test_acc = m.acc;
                }
            }
            if (opt.timing) row.wall_time_s = result.wall_times[i];
            report.rows.push_back(row);
        }
        nlohmann::json history = nlohmann::json::array();
        for (const auto& l : logs) {
            nlohmann::json epochs = nlohmann::json::array();
            for (const auto& e : l.history)
                epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"valid_nll", e.valid_nll}});
            history.push_back({{"lr", l.lr},
                               {"dropout", l.dropout},
                               {"initial_train_nll", l.initial},
                               {"failure", l.failure},
                               {"epochs", epochs}});
        }
        save_json(report_to_json(report), (dir / "report.json").string());
        write_text(dir / "report.csv", rows_to_csv(report.rows));
        save_json(history, (dir / "history.json").string());
        if (!result.best) {
            err << "every grid cell diverged\n";
            return static_cast<int>(kNumerical);
        }
        save_json(to_json(result.best_model()), (dir / "model.json").string());
        const auto& best = report.rows[*result.best];
        out << "best: lr=" << best.lr << " dropout=" << best.dropout << " valid_nll=" << *best.valid_nll;
        if (best.test_nll) out << " test_nll=" << *best.test_nll << " test_acc=" << *best.test_acc;
        out << "\nwrote " << (dir / "model.json").string() << "\n";
        return static_cast<int>(kOk);
    });
}

inline int cmd_eval(const std::string& model_path, const std::string& dataset_path, const std::string& split,
                    const std::optional<std::string>& out_dir, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (split != "train" && split != "valid" && split != "test")
            throw ConfigError("unknown split '" + split + "' (expected train|valid|test)");
        const GruModel model = load_model(model_path);
        const music::PianoRollDataset data = music::load_dataset(dataset_path);
        const auto m = evaluate(model, data.split(split));
        out << std::setprecision(10) << "nll " << m.nll << "\nacc " << m.acc << "\n";
        if (out_dir) {
            std::filesystem::create_directories(*out_dir);
            save_json({{"dataset", data.name}, {"split", split}, {"model", model_path}, {"nll", m.nll}, {"acc", m.acc}},
                      (std::filesystem::path(*out_dir) / "eval.json").string());
        }
        return static_cast<int>(kOk);
    });
}

struct OperatorAudit {
    std::string name;
    std::string kind;
    Index rows = 0, cols = 0;
    Index params = 0;       // without bias
    Index with_bias = 0;
};

struct ParamAudit {
    std::vector<OperatorAudit> ops;
    Index cell_params = 0;            // cell weights only
    Index cell_params_with_bias = 0;  // cell weights + gate biases
    Index dense_cell_params = 0;      // same GRU uncompressed, with biases
    Index model_params = 0;           // including input and output projections
};

inline ParamAudit audit(const GruModel& m) {
    ParamAudit a;
    const std::vector<std::pair<std::string, const FactorizedLinear*>> ops{
        {"W_xr", &m.cell.xr}, {"W_hr", &m.cell.hr}, {"W_xz", &m.cell.xz},
        {"W_hz", &m.cell.hz}, {"W_xh", &m.cell.xh}, {"W_hh", &m.cell.hh}};
    for (const auto& [name, op] : ops) {
        OperatorAudit o{name, std::string(to_string(op->kind())), op->rows(), op->cols(), param_count(*op),
                        param_count(*op, true)};
        a.cell_params += o.params;
        a.cell_params_with_bias += o.with_bias;
        a.dense_cell_params += o.rows * o.cols + op->bias.size();
        a.ops.push_back(o);
    }
    a.model_params = total_param_count(m);
    return a;
}

inline nlohmann::json to_json(const ParamAudit& a) {
    nlohmann::json ops = nlohmann::json::array();
    for (const auto& o : a.ops)
        ops.push_back({{"name", o.name}, {"kind", o.kind}, {"rows", o.rows}, {"cols", o.cols}, {"params", o.params},
                       {"params_with_bias", o.with_bias}});
    return {{"operators", ops},
            {"cell_params", a.cell_params},
            {"cell_params_with_bias", a.cell_params_with_bias},
            {"dense_cell_params_with_bias", a.dense_cell_params},
            {"compression_ratio", static_cast<double>(a.dense_cell_params) / static_cast<double>(a.cell_params_with_bias)},
            {"model_params", a.model_params}};
}

/// Parameter audit of the configured architecture, or of a saved model file
/// when model_path is given.
inline int cmd_params(const RunConfig& cfg, const std::optional<std::string>& model_path, bool as_json,
                      std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        GruModel m;
        if (model_path) {
            m = load_model(*model_path);
        } else {
            if (!cfg.validate()) err << "warning: a Tucker rank equals its mode size; that mode is not compressed\n";
            m = init_model(cfg.model, cfg.train.seed);
        }
        const ParamAudit a = audit(m);
        if (as_json) {
            out << to_json(a).dump(1) << "\n";
            return static_cast<int>(kOk);
        }
        out << "model " << to_string(m.spec.kind) << " ranks " << rank_config_string(m.spec) << " input "
            << m.spec.input_dims.str() << " hidden " << m.spec.hidden_dims.str() << "\n";
        out << std::left << std::setw(6) << "op" << std::setw(8) << "kind" << std::setw(12) << "shape" << std::right
            << std::setw(12) << "params" << std::setw(14) << "with_bias" << "\n";
        for (const auto& o : a.ops)
            out << std::left << std::setw(6) << o.name << std::setw(8) << o.kind << std::setw(12)
                << (std::to_string(o.rows) + "x" + std::to_string(o.cols)) << std::right << std::setw(12) << o.params
                << std::setw(14) << o.with_bias << "\n";
        out << "cell params (no bias)     " << a.cell_params << "\n";
        out << "cell params (with bias)   " << a.cell_params_with_bias << "\n";
        out << "dense GRU equivalent      " << a.dense_cell_params << "\n";
        out << "compression ratio         " << std::fixed << std::setprecision(2)
            << static_cast<double>(a.dense_cell_params) / static_cast<double>(a.cell_params_with_bias) << "\n";
        out << "full model (with proj.)   " << a.model_params << "\n";
        return static_cast<int>(kOk);
    });
}

/// Collects every report.json below report_dir and writes one
/// plot_<dataset>.csv per dataset into out_dir.
inline int cmd_plotdata(const std::string& report_dir, const std::string& out_dir, std::ostream& out,
                        std::ostream& err) {
    return guarded(err, [&] {
        namespace fs = std::filesystem;
        if (!fs::is_directory(report_dir)) throw DataError("'" + report_dir + "' is not a directory");
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(report_dir))
            if (e.is_regular_file() && e.path().filename() == "report.json") files.push_back(e.path());
        if (files.empty()) throw DataError("no report.json files under '" + report_dir + "'");
        std::sort(files.begin(), files.end());
        std::vector<SearchReport> reports;
        for (const auto& f : files) {
            std::ifstream in(f);
            nlohmann::json j;
            try {
                in >> j;
            } catch (const nlohmann::json::exception& e) {
                throw DataError("'" + f.string() + "': " + e.what());
            }
            reports.push_back(report_from_json(j));
        }
        fs::create_directories(out_dir);
        for (const auto& [name, csv] : plot_data(reports)) {
            const auto path = fs::path(out_dir) / ("plot_" + name + ".csv");
            write_text(path, csv);
            out << "wrote " << path.string() << "\n";
        }
        write_text(fs::path(out_dir) / "table.csv", rows_to_csv(emit_table(reports)));
        return static_cast<int>(kOk);
    });
}

}  // namespace tcrnn::cli
