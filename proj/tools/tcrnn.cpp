// SPDX-License-Identifier: Apache-2.0
//
// tcrnn: train, grid-search, evaluate and audit tensor-compressed GRU
// piano-roll models.
//
//   tcrnn train      --dataset data/jsb_chorales.json --model-kind tt --ranks 1,5,5,1 ...
//   tcrnn gridsearch --config run.json
//   tcrnn eval       --model runs/tt/model.json --dataset data/jsb_chorales.json --split test
//   tcrnn params     --model-kind tucker --ranks 2x3x2x3x2x3x2x3
//   tcrnn plotdata   --reports runs --out plots
//   tcrnn config     [--config run.json]      (prints the effective config)
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numerical failure.
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tcrnn/commands.hpp"
#include "tcrnn/config.hpp"

namespace {

struct ModelFlags {
    std::string config;
    std::string dataset;
    std::string kind;
    std::string ranks;
    std::string input_dims;
    std::string hidden_dims;
    std::optional<std::uint64_t> seed;
    std::optional<tcrnn::Index> epochs;
    std::optional<tcrnn::Index> patience;
    std::optional<tcrnn::Index> batch_size;
    std::optional<tcrnn::Index> train_limit;
    std::optional<double> lr;
    std::optional<double> dropout;
    std::string placement;
    std::string out;
};

void add_model_flags(CLI::App* app, ModelFlags& f, bool training) {
    app->add_option("--config", f.config, "JSON run configuration");
    app->add_option("--model-kind", f.kind, "dense | cp | tucker | tt");
    app->add_option("--ranks", f.ranks, "rank list, e.g. 30, 1,5,5,1 or 2x3x2x3x2x3x2x3");
    app->add_option("--input-dims", f.input_dims, "factorization of the GRU input size, e.g. 4,4,4,4");
    app->add_option("--hidden-dims", f.hidden_dims, "factorization of the hidden size, e.g. 8,4,4,4");
    app->add_option("--seed", f.seed, "initialization and shuffling seed");
    if (!training) return;
    app->add_option("--dataset", f.dataset, "piano-roll dataset JSON");
    app->add_option("--epochs", f.epochs, "maximum epochs");
    app->add_option("--patience", f.patience, "early-stopping patience in epochs");
    app->add_option("--batch-size", f.batch_size, "sequences per batch");
    app->add_option("--train-limit", f.train_limit, "use only the first N training sequences");
    app->add_option("--lr", f.lr, "learning rate (replaces the grid)");
    app->add_option("--dropout", f.dropout, "dropout probability (replaces the grid)");
    app->add_option("--dropout-placement", f.placement, "cell_input | cell_output | none");
    app->add_option("--out", f.out, "output directory (default: $TCRNN_OUT, then config, then 'runs')");
}

tcrnn::Shape parse_dims(const std::string& s) {
    auto v = tcrnn::parse_rank_list(s);
    try {
        return tcrnn::Shape(v);
    } catch (const tcrnn::ShapeError& e) {
        throw tcrnn::ConfigError(e.what());
    }
}

tcrnn::RunConfig resolve(const ModelFlags& f) {
    tcrnn::RunConfig c = f.config.empty() ? tcrnn::RunConfig{} : tcrnn::load_run_config(f.config);
    if (!f.kind.empty()) {
        try {
            c.model.kind = tcrnn::parse_factor_kind(f.kind);
        } catch (const std::invalid_argument& e) {
            throw tcrnn::ConfigError(e.what());
        }
    }
    if (!f.input_dims.empty()) c.model.input_dims = parse_dims(f.input_dims);
    if (!f.hidden_dims.empty()) c.model.hidden_dims = parse_dims(f.hidden_dims);
    if (!f.ranks.empty()) c.model.ranks = tcrnn::parse_rank_list(f.ranks);
    if (c.model.kind != tcrnn::FactorKind::dense)
        c.model.ranks = tcrnn::expand_ranks(c.model.kind, c.model.hidden_dims.order(), c.model.ranks);
    else
        c.model.ranks.clear();
    if (!f.placement.empty()) c.model.dropout_placement = tcrnn::parse_dropout_placement(f.placement);
    if (f.seed) c.train.seed = *f.seed;
    if (f.epochs) c.train.max_epochs = *f.epochs;
    if (f.patience) c.train.patience = *f.patience;
    if (f.batch_size) c.train.batch_size = *f.batch_size;
    if (f.train_limit) c.train_limit = *f.train_limit;
    if (f.lr) c.train.lr_grid = {*f.lr};
    if (f.dropout) c.train.dropout_grid = {*f.dropout};
    if (!f.dataset.empty()) c.dataset = f.dataset;
    if (const char* env = std::getenv(tcrnn::cli::kOutDirEnv); env && *env) c.out = env;
    if (!f.out.empty()) c.out = f.out;
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tensor-compressed GRU models for polyphonic music"};
    app.require_subcommand(1);

    ModelFlags train_flags, grid_flags, params_flags, config_flags;
    bool timing = false, grid_timing = false;
    auto* train = app.add_subcommand("train", "train one model (first lr / dropout of the grid)");
    add_model_flags(train, train_flags, true);
    train->add_flag("--timing", timing, "record wall-clock time in the report");
    auto* grid = app.add_subcommand("gridsearch", "train over the lr x dropout grid and keep the best");
    add_model_flags(grid, grid_flags, true);
    grid->add_flag("--timing", grid_timing, "record wall-clock time in the report");

    std::string eval_model, eval_dataset, eval_split = "test", eval_out;
    auto* eval = app.add_subcommand("eval", "NLL and frame accuracy of a saved model");
    eval->add_option("--model", eval_model, "model JSON")->required();
    eval->add_option("--dataset", eval_dataset, "piano-roll dataset JSON")->required();
    eval->add_option("--split", eval_split, "train | valid | test");
    eval->add_option("--out", eval_out, "write eval.json into this directory");

    std::string params_model;
    bool params_json = false;
    auto* params = app.add_subcommand("params", "parameter audit of an architecture or saved model");
    add_model_flags(params, params_flags, false);
    params->add_option("--model", params_model, "saved model JSON (overrides the architecture flags)");
    params->add_flag("--json", params_json, "machine-readable output");

    std::string plot_reports, plot_out = "plots";
    auto* plot = app.add_subcommand("plotdata", "parameter-count vs test-NLL CSV per dataset");
    plot->add_option("--reports", plot_reports, "directory searched recursively for report.json")->required();
    plot->add_option("--out", plot_out, "output directory");

    auto* config = app.add_subcommand("config", "print the effective run configuration");
    add_model_flags(config, config_flags, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : tcrnn::cli::kUsage;
    }

    auto configured = [&](const ModelFlags& f, auto&& body) {
        return tcrnn::cli::guarded(std::cerr, [&] { return body(resolve(f)); });
    };

    if (*train)
        return configured(train_flags, [&](const tcrnn::RunConfig& c) {
            return tcrnn::cli::cmd_train(c, {false, timing}, std::cout, std::cerr);
        });
    if (*grid)
        return configured(grid_flags, [&](const tcrnn::RunConfig& c) {
            return tcrnn::cli::cmd_train(c, {true, grid_timing}, std::cout, std::cerr);
        });
    if (*eval)
        return tcrnn::cli::cmd_eval(eval_model, eval_dataset, eval_split,
                                    eval_out.empty() ? std::nullopt : std::optional<std::string>(eval_out),
                                    std::cout, std::cerr);
    if (*params) {
        if (!params_model.empty())
            return tcrnn::cli::cmd_params({}, params_model, params_json, std::cout, std::cerr);
        return configured(params_flags, [&](const tcrnn::RunConfig& c) {
            return tcrnn::cli::cmd_params(c, std::nullopt, params_json, std::cout, std::cerr);
        });
    }
    if (*plot) return tcrnn::cli::cmd_plotdata(plot_reports, plot_out, std::cout, std::cerr);
    if (*config)
        return configured(config_flags, [&](const tcrnn::RunConfig& c) {
            c.validate();
            std::cout << tcrnn::to_json(c).dump(2) << "\n";
            return 0;
        });
    return tcrnn::cli::kUsage;
}
