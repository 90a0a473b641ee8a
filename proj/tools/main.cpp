#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "timemixer/cli.hpp"

using namespace timemixer;

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& arg) {
    std::vector<std::uint64_t> seeds;
    for (const auto& part : detail::split_list(arg)) {
        if (part.empty()) continue;
        seeds.push_back(static_cast<std::uint64_t>(detail::to_int(part, "--seeds")));
    }
    if (seeds.empty()) throw UsageError("--seeds needs a comma-separated list of integers");
    return seeds;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"timemixer: multiscale-mixing time series forecasting"};
    app.require_subcommand(1);

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model from an experiment spec");
    std::string train_spec;
    train_cmd->add_option("spec", train_spec, "experiment spec file (.ini or .json)")->required();
    std::optional<std::uint64_t> train_seed;
    train_cmd->add_option("--seed", train_seed, "override the spec's seed");
    std::string train_seeds;
    train_cmd->add_option("--seeds", train_seeds,
                          "comma-separated seeds; aggregates mean/std across runs");
    bool train_det = false;
    train_cmd->add_flag("--deterministic", train_det,
                        "force deterministic mode (single-threaded execution already is)");

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on the spec's test split");
    std::string eval_spec, eval_ckpt;
    eval_cmd->add_option("spec", eval_spec, "experiment spec file")->required();
    eval_cmd->add_option("checkpoint", eval_ckpt, "checkpoint file")->required();

    // predict
    auto* pred_cmd = app.add_subcommand("predict", "write (de-scaled) predictions as CSV");
    std::string pred_ckpt, pred_data, pred_out = ".";
    std::optional<std::int64_t> pred_window;
    bool pred_per_scale = false;
    pred_cmd->add_option("checkpoint", pred_ckpt, "checkpoint file")->required();
    pred_cmd->add_option("data", pred_data, "CSV data file")->required();
    pred_cmd->add_option("--window-index", pred_window, "restrict to a single window");
    pred_cmd->add_flag("--per-scale", pred_per_scale,
                       "also write per-scale predictions (normalized space)");
    pred_cmd->add_option("--out", pred_out, "output directory (default .)");

    // ablate
    auto* abl_cmd = app.add_subcommand("ablate", "run structural ablation cases");
    std::string abl_spec, abl_cases = "all";
    std::optional<std::uint64_t> abl_seed;
    abl_cmd->add_option("spec", abl_spec, "experiment spec file")->required();
    abl_cmd->add_option("--cases", abl_cases, "'all' or a comma list of case ids 1..10");
    abl_cmd->add_option("--seed", abl_seed, "override the spec's seed");

    // inspect-weights
    auto* insp_cmd = app.add_subcommand("inspect-weights",
                                        "dump temporal mixing matrices for heat-mapping");
    std::string insp_ckpt, insp_out;
    std::int64_t insp_layer = 0, insp_scale = 0;
    insp_cmd->add_option("checkpoint", insp_ckpt, "checkpoint file")->required();
    insp_cmd->add_option("--layer", insp_layer, "layer index (default 0)");
    insp_cmd->add_option("--scale", insp_scale, "scale index (default 0)");
    insp_cmd->add_option("--out", insp_out, "output file (default stdout)");

    // forecastability
    auto* fc_cmd = app.add_subcommand("forecastability",
                                      "per-channel spectral predictability scores");
    std::string fc_data;
    fc_cmd->add_option("data", fc_data, "CSV data file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? cli::kExitOk : cli::kExitUsage;
    }

    try {
        if (train_cmd->parsed()) {
            cli::TrainOptions opts;
            opts.seed = train_seed;
            if (train_det) opts.deterministic = true;
            if (!train_seeds.empty()) opts.seeds = parse_seed_list(train_seeds);
            return cli::cmd_train(train_spec, opts);
        }
        if (eval_cmd->parsed()) return cli::cmd_evaluate(eval_spec, eval_ckpt);
        if (pred_cmd->parsed()) {
            cli::PredictOptions opts;
            opts.window_index = pred_window;
            opts.per_scale = pred_per_scale;
            opts.output_dir = pred_out;
            return cli::cmd_predict(pred_ckpt, pred_data, opts);
        }
        if (abl_cmd->parsed()) return cli::cmd_ablate(abl_spec, abl_cases, abl_seed);
        if (insp_cmd->parsed()) {
            cli::InspectOptions opts;
            opts.layer = insp_layer;
            opts.scale = insp_scale;
            opts.output = insp_out;
            return cli::cmd_inspect_weights(insp_ckpt, opts);
        }
        if (fc_cmd->parsed()) return cli::cmd_forecastability(fc_data);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return cli::kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return cli::kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return cli::kExitRuntime;
    }
    return cli::kExitUsage;
}
