#pragma once

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "timemixer/checkpoint.hpp"
#include "timemixer/experiment.hpp"

namespace timemixer {
namespace cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

namespace detail {

/// Shortest round-trippable decimal form, so parsing a CSV cell recovers the
/// exact double that was written.
inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double parsed = 0.0;
    std::sscanf(buf, "%lf", &parsed);
    if (parsed == v) {
        for (int prec = 1; prec < 17; ++prec) {
            char shorter[32];
            std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
            std::sscanf(shorter, "%lf", &parsed);
            if (parsed == v) return shorter;
        }
    }
    return buf;
}

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());
}

inline void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "epoch,train_loss,val_loss,wall_seconds\n";
    for (const auto& e : history)
        out << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(e.val_loss) << ','
            << fmt(e.wall_seconds) << '\n';
}

inline ScalerStats scaler_of(const SeriesDataset& ds) {
    return ScalerStats{ds.scaler_mean(), ds.scaler_std()};
}

struct SingleRun {
    MetricsReport report;
    std::vector<EpochStats> history;
};

inline SingleRun run_one_seed(ExperimentSpec spec, const SeriesDataset& ds, std::uint64_t seed,
                              const std::string& checkpoint_path,
                              const std::string& history_path) {
    spec.train.seed = seed;
    auto model = TimeMixerModel::init(spec.model, seed);
    auto result = train(model, ds, spec.window_spec(), spec.train);
    write_history_csv(history_path, result.history);
    save_checkpoint(checkpoint_path, model, scaler_of(ds));
    auto report = evaluate_model(model, ds, spec.window_spec(), Split::test, spec.metrics);
    return {std::move(report), std::move(result.history)};
}

}  // namespace detail

struct TrainOptions {
    std::optional<std::uint64_t> seed;   // overrides [train] seed
    std::optional<bool> deterministic;   // overrides [train] deterministic
    std::vector<std::uint64_t> seeds;    // multi-seed aggregate run
};

/// train: fit per the spec, evaluate on the test split, and emit
/// checkpoint + history.csv + report.json into the output directory.
/// With several seeds, per-seed artifacts carry a _seed{N} suffix and
/// report.json contains the per-seed metrics plus mean/std aggregates.
inline int cmd_train(const std::string& spec_path, const TrainOptions& opts = {},
                     std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    auto spec = ExperimentSpec::load(spec_path);
    if (opts.seed.has_value()) spec.train.seed = *opts.seed;
    if (opts.deterministic.has_value()) spec.train.deterministic = *opts.deterministic;
    auto ds = spec.prepare_dataset(err);
    detail::ensure_dir(spec.output_dir);
    const auto dir = std::filesystem::path(spec.output_dir);

    nlohmann::ordered_json report_json;
    if (opts.seeds.size() > 1) {
        std::vector<MetricsReport> per_seed;
        nlohmann::ordered_json seeds_json = nlohmann::ordered_json::array();
        for (const auto seed : opts.seeds) {
            const std::string tag = "_seed" + std::to_string(seed);
            auto run = detail::run_one_seed(spec, ds, seed,
                                            (dir / ("checkpoint" + tag + ".tmck")).string(),
                                            (dir / ("history" + tag + ".csv")).string());
            nlohmann::ordered_json entry;
            entry["seed"] = seed;
            entry["metrics"] = run.report.to_json();
            seeds_json.push_back(std::move(entry));
            per_seed.push_back(std::move(run.report));
        }
        auto agg = MetricsReport::aggregate(per_seed);
        report_json["seeds"] = opts.seeds;
        report_json["metrics"] = agg.to_json();
        report_json["per_seed"] = std::move(seeds_json);
    } else {
        const std::uint64_t seed = opts.seeds.size() == 1 ? opts.seeds[0] : spec.train.seed;
        auto run = detail::run_one_seed(spec, ds, seed, (dir / "checkpoint.tmck").string(),
                                        (dir / "history.csv").string());
        report_json["seed"] = seed;
        report_json["loss"] = to_string(spec.train.loss);
        report_json["metrics"] = run.report.to_json();
    }
    {
        std::ofstream rf(dir / "report.json");
        if (!rf) throw std::runtime_error("cannot write report.json");
        rf << report_json.dump(2) << '\n';
    }
    out << report_json.dump(2) << '\n';
    return kExitOk;
}

/// evaluate: load a checkpoint and score it on the spec's test split.
inline int cmd_evaluate(const std::string& spec_path, const std::string& checkpoint_path,
                        std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    auto spec = ExperimentSpec::load(spec_path);
    if (!std::filesystem::exists(checkpoint_path))
        throw UsageError("checkpoint not found: " + checkpoint_path);
    auto ds = spec.prepare_dataset(err);
    auto loaded = load_checkpoint(checkpoint_path);
    if (loaded.model.config().channels != ds.channels())
        throw UsageError("checkpoint was trained on " +
                         std::to_string(loaded.model.config().channels) +
                         " channels, data has " + std::to_string(ds.channels()));
    auto report =
        evaluate_model(loaded.model, ds, spec.window_spec(), Split::test, spec.metrics);
    out << report.to_json().dump(2) << '\n';
    return kExitOk;
}

struct PredictOptions {
    std::optional<std::int64_t> window_index;
    bool per_scale = false;
    std::string output_dir = ".";
};

/// predict: slide windows over a CSV, write de-scaled predictions
/// (window_index, horizon_step, channel, y_true, y_pred) and, with
/// --per-scale, a companion file in normalized space holding each scale's
/// contribution and its (M+1)-rescaled version.
inline int cmd_predict(const std::string& checkpoint_path, const std::string& data_path,
                       const PredictOptions& opts = {}, std::ostream& out = std::cout) {
    if (!std::filesystem::exists(checkpoint_path))
        throw UsageError("checkpoint not found: " + checkpoint_path);
    if (!std::filesystem::exists(data_path)) throw UsageError("data file not found: " + data_path);
    auto loaded = load_checkpoint(checkpoint_path);
    const auto& cfg = loaded.model.config();
    auto ds = load_csv(data_path);
    if (ds.channels() != cfg.channels)
        throw UsageError("checkpoint expects " + std::to_string(cfg.channels) +
                         " channels, data file has " + std::to_string(ds.channels()));

    // scale with the checkpoint's training statistics; identity if absent
    std::vector<double> mean(static_cast<std::size_t>(cfg.channels), 0.0);
    std::vector<double> stdv(static_cast<std::size_t>(cfg.channels), 1.0);
    if (!loaded.scaler.empty()) {
        mean = loaded.scaler.mean;
        stdv = loaded.scaler.std;
    }

    const std::int64_t P = cfg.input_len, F = cfg.pred_len, C = cfg.channels;
    const std::int64_t n_windows = ds.rows() >= P + F ? ds.rows() - P - F + 1 : 0;
    if (n_windows == 0)
        throw UsageError("data has " + std::to_string(ds.rows()) + " rows, need at least " +
                         std::to_string(P + F) + " for one window");
    std::int64_t first = 0, last = n_windows;  // [first, last)
    if (opts.window_index.has_value()) {
        if (*opts.window_index < 0 || *opts.window_index >= n_windows)
            throw UsageError("window index " + std::to_string(*opts.window_index) +
                             " out of range, file has " + std::to_string(n_windows) + " windows");
        first = *opts.window_index;
        last = first + 1;
    }

    detail::ensure_dir(opts.output_dir);
    const auto dir = std::filesystem::path(opts.output_dir);
    std::ofstream pred_csv(dir / "predictions.csv");
    if (!pred_csv) throw std::runtime_error("cannot write predictions.csv");
    pred_csv << "window_index,horizon_step,channel,y_true,y_pred\n";

    std::ofstream scale_csv;
    const std::size_t n_scales = cfg.ablation.use_fmm ? static_cast<std::size_t>(cfg.num_scales + 1)
                                                      : 1;
    if (opts.per_scale) {
        scale_csv.open(dir / "per_scale_predictions.csv");
        if (!scale_csv) throw std::runtime_error("cannot write per_scale_predictions.csv");
        scale_csv << "window_index,horizon_step,channel,total_scaled";
        for (std::size_t m = 0; m < n_scales; ++m)
            scale_csv << ",scale" << m << ",scale" << m << "_x" << n_scales;
        scale_csv << '\n';
    }

    for (std::int64_t w = first; w < last; ++w) {
        std::vector<double> x(static_cast<std::size_t>(P * C));
        for (std::int64_t t = 0; t < P; ++t)
            for (std::int64_t c = 0; c < C; ++c)
                x[static_cast<std::size_t>(t * C + c)] =
                    (ds.value(w + t, c) - mean[static_cast<std::size_t>(c)]) /
                    stdv[static_cast<std::size_t>(c)];
        auto input = Tensor::from_data({1, P, C}, std::move(x));
        auto per_scale = loaded.model.per_scale_predictions(input);
        Tensor total = per_scale[0];
        for (std::size_t m = 1; m < per_scale.size(); ++m) total = add(total, per_scale[m]);
        if (cfg.ensemble == EnsembleRule::average && per_scale.size() > 1)
            total = div_scalar(total, static_cast<double>(per_scale.size()));

        for (std::int64_t h = 0; h < F; ++h)
            for (std::int64_t c = 0; c < C; ++c) {
                const auto i = static_cast<std::size_t>(h * C + c);
                const double y_true = ds.value(w + P + h, c);
                const double y_pred =
                    total.data()[i] * stdv[static_cast<std::size_t>(c)] +
                    mean[static_cast<std::size_t>(c)];
                pred_csv << w << ',' << h << ',' << c << ',' << detail::fmt(y_true) << ','
                         << detail::fmt(y_pred) << '\n';
                if (opts.per_scale) {
                    scale_csv << w << ',' << h << ',' << c << ','
                              << detail::fmt(total.data()[i]);
                    for (const auto& p : per_scale) {
                        scale_csv << ',' << detail::fmt(p.data()[i]) << ','
                                  << detail::fmt(static_cast<double>(per_scale.size()) *
                                                 p.data()[i]);
                    }
                    scale_csv << '\n';
                }
            }
    }
    out << "wrote " << (last - first) << " window(s) to "
        << (dir / "predictions.csv").string() << '\n';
    return kExitOk;
}

/// ablate: run the ten structural variants (or a subset) under one spec and
/// tabulate their test metrics.
inline int cmd_ablate(const std::string& spec_path, const std::string& cases_arg,
                      std::optional<std::uint64_t> seed_override = {},
                      std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    std::vector<int> cases;
    if (timemixer::detail::lower(cases_arg) == "all") {
        for (int id = 1; id <= 10; ++id) cases.push_back(id);
    } else {
        for (const auto& part : timemixer::detail::split_list(cases_arg)) {
            if (part.empty()) continue;
            const auto id = timemixer::detail::to_int(part, "--cases");
            if (id < 1 || id > 10)
                throw UsageError("unknown ablation case " + part + ", valid ids are 1..10");
            cases.push_back(static_cast<int>(id));
        }
    }
    if (cases.empty()) throw UsageError("no ablation cases requested");

    auto spec = ExperimentSpec::load(spec_path);
    if (seed_override.has_value()) spec.train.seed = *seed_override;
    auto ds = spec.prepare_dataset(err);
    detail::ensure_dir(spec.output_dir);
    const auto table_path =
        (std::filesystem::path(spec.output_dir) / "ablation_table.csv").string();
    std::ofstream table(table_path);
    if (!table) throw std::runtime_error("cannot write " + table_path);

    const std::vector<std::string> metric_cols{"mse", "mae", "rmse", "mape", "smape", "mase"};
    table << "case,use_decomposition,seasonal_mixing,trend_mixing,undecomposed_mixing,use_fmm";
    for (const auto& m : metric_cols) table << ',' << m;
    table << '\n';

    for (const int id : cases) {
        ExperimentSpec run_spec = spec;
        run_spec.model.ablation = AblationConfig::table_case(id);
        auto model = TimeMixerModel::init(run_spec.model, run_spec.train.seed);
        train(model, ds, run_spec.window_spec(), run_spec.train);
        auto report =
            evaluate_model(model, ds, run_spec.window_spec(), Split::test, run_spec.metrics);
        const auto& ab = run_spec.model.ablation;
        table << id << ',' << (ab.use_decomposition ? "true" : "false") << ','
              << (ab.use_decomposition ? to_string(ab.seasonal_mixing) : "-") << ','
              << (ab.use_decomposition ? to_string(ab.trend_mixing) : "-") << ','
              << (ab.use_decomposition ? "-" : to_string(ab.undecomposed_mixing)) << ','
              << (ab.use_fmm ? "true" : "false");
        for (const auto& m : metric_cols) {
            table << ',';
            if (auto it = report.values.find(m); it != report.values.end())
                table << detail::fmt(it->second);
        }
        table << '\n';
        err << "case " << id << " done\n";
    }
    out << "wrote " << table_path << '\n';
    return kExitOk;
}

struct InspectOptions {
    std::int64_t layer = 0;
    std::int64_t scale = 0;
    std::string output;  // empty -> stdout
};

/// inspect-weights: dump the temporal mixing matrices attached to one scale
/// of one layer as CSV blocks for offline heat-mapping. Each block stacks
/// the two linear maps of the mixing layer (w1 on top of w2) and documents
/// the dimensions in its header row.
inline int cmd_inspect_weights(const std::string& checkpoint_path, const InspectOptions& opts,
                               std::ostream& out = std::cout) {
    if (!std::filesystem::exists(checkpoint_path))
        throw UsageError("checkpoint not found: " + checkpoint_path);
    auto loaded = load_checkpoint(checkpoint_path);
    const auto& cfg = loaded.model.config();
    if (opts.layer < 0 || opts.layer >= cfg.num_layers)
        throw UsageError("layer " + std::to_string(opts.layer) + " out of range, model has " +
                         std::to_string(cfg.num_layers) + " layers");
    if (opts.scale < 0 || opts.scale > cfg.num_scales)
        throw UsageError("scale " + std::to_string(opts.scale) + " out of range, model has " +
                         std::to_string(cfg.num_scales + 1) + " scales");

    std::ofstream file;
    if (!opts.output.empty()) {
        file.open(opts.output);
        if (!file) throw std::runtime_error("cannot write " + opts.output);
    }
    std::ostream& os = opts.output.empty() ? out : file;

    auto emit_stack = [&](const std::string& label, const std::string& prefix) {
        Tensor w1 = loaded.model.parameter(prefix + ".w1");
        Tensor w2 = loaded.model.parameter(prefix + ".w2");
        os << "# " << label << ": stacked [w1; w2], rows=" << w1.dim(0) << "+" << w2.dim(0)
           << ", cols=" << w1.dim(1) << " (" << prefix << ")\n";
        for (const Tensor& w : {w1, w2}) {
            const std::int64_t rows = w.dim(0), cols = w.dim(1);
            for (std::int64_t r = 0; r < rows; ++r) {
                for (std::int64_t c = 0; c < cols; ++c) {
                    if (c) os << ',';
                    os << detail::fmt(w.data()[static_cast<std::size_t>(r * cols + c)]);
                }
                os << '\n';
            }
        }
    };

    const std::string lp = "pdm." + std::to_string(opts.layer);
    bool emitted = false;
    auto emit_direction = [&](const std::string& stream, MixDirection dir) {
        if (dir == MixDirection::none) return;
        if (dir == MixDirection::bottom_up && opts.scale >= 1) {
            emit_stack(stream + " bottom-up mixing into scale " + std::to_string(opts.scale),
                       lp + "." + stream + "." + std::to_string(opts.scale - 1));
            emitted = true;
        }
        if (dir == MixDirection::top_down && opts.scale < cfg.num_scales) {
            emit_stack(stream + " top-down mixing into scale " + std::to_string(opts.scale),
                       lp + "." + stream + "." + std::to_string(opts.scale));
            emitted = true;
        }
    };
    if (cfg.ablation.use_decomposition) {
        emit_direction("seasonal", cfg.ablation.seasonal_mixing);
        emit_direction("trend", cfg.ablation.trend_mixing);
    } else {
        emit_direction("mix", cfg.ablation.undecomposed_mixing);
    }
    if (!emitted)
        throw UsageError("no mixing weights feed scale " + std::to_string(opts.scale) +
                         " under this configuration");
    return kExitOk;
}

/// forecastability: per-channel spectral-entropy predictability scores.
inline int cmd_forecastability(const std::string& data_path, std::ostream& out = std::cout,
                               std::ostream& err = std::cerr) {
    if (!std::filesystem::exists(data_path)) throw UsageError("data file not found: " + data_path);
    auto ds = load_csv(data_path);
    if (ds.rows() < 4)
        throw UsageError("forecastability needs at least 4 rows, file has " +
                         std::to_string(ds.rows()));
    nlohmann::ordered_json j;
    for (std::int64_t c = 0; c < ds.channels(); ++c) {
        std::vector<double> series(static_cast<std::size_t>(ds.rows()));
        for (std::int64_t r = 0; r < ds.rows(); ++r)
            series[static_cast<std::size_t>(r)] = ds.value(r, c);
        j[ds.channel_names()[static_cast<std::size_t>(c)]] = forecastability(series, err);
    }
    out << j.dump(2) << '\n';
    return kExitOk;
}

}  // namespace cli
}  // namespace timemixer
