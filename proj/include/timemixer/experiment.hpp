#pragma once

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "timemixer/checkpoint.hpp"
#include "timemixer/data.hpp"
#include "timemixer/metrics.hpp"
#include "timemixer/model.hpp"
#include "timemixer/training.hpp"

extern "C" char** environ;

namespace timemixer {

/// Invalid user input (spec files, flags, missing files): exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

/// Flat sectioned key-value store shared by the INI and JSON encodings.
class SpecTable {
public:
    void set(const std::string& section, const std::string& key, const std::string& value) {
        table_[lower(section)][lower(key)] = value;
    }

    bool has(const std::string& section, const std::string& key) const {
        auto s = table_.find(section);
        return s != table_.end() && s->second.count(key) > 0;
    }

    std::optional<std::string> take(const std::string& section, const std::string& key) {
        auto s = table_.find(section);
        if (s == table_.end()) return std::nullopt;
        auto k = s->second.find(key);
        if (k == s->second.end()) return std::nullopt;
        consumed_.insert(section + "." + key);
        return k->second;
    }

    std::string require(const std::string& section, const std::string& key) {
        auto v = take(section, key);
        if (!v.has_value())
            throw UsageError("spec is missing required key [" + section + "] " + key);
        return *v;
    }

    void check_fully_consumed() const {
        for (const auto& [section, kv] : table_)
            for (const auto& [key, value] : kv)
                if (consumed_.count(section + "." + key) == 0)
                    throw UsageError("unknown spec key [" + section + "] " + key);
    }

private:
    std::map<std::string, std::map<std::string, std::string>> table_;
    std::set<std::string> consumed_;
};

inline std::int64_t to_int(const std::string& v, const std::string& where) {
    try {
        std::size_t pos = 0;
        const auto out = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw UsageError("expected an integer for " + where + ", got '" + v + "'");
    }
}

inline double to_double(const std::string& v, const std::string& where) {
    try {
        std::size_t pos = 0;
        const auto out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw UsageError("expected a number for " + where + ", got '" + v + "'");
    }
}

inline bool to_bool(const std::string& v, const std::string& where) {
    const auto s = lower(v);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw UsageError("expected a boolean for " + where + ", got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : v) {
        if (c == ',') {
            parts.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    parts.push_back(trim(cur));
    return parts;
}

inline SpecTable parse_ini(std::istream& in) {
    SpecTable table;
    std::string line, section;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        // strip comments: '#' or ';' at the start or after whitespace
        for (std::size_t i = 0; i < line.size(); ++i) {
            if ((line[i] == '#' || line[i] == ';') &&
                (i == 0 || line[i - 1] == ' ' || line[i - 1] == '\t')) {
                line.resize(i);
                break;
            }
        }
        const auto text = trim(line);
        if (text.empty()) continue;
        if (text.front() == '[') {
            if (text.back() != ']')
                throw UsageError("malformed section header on line " + std::to_string(line_no) +
                                 ": " + text);
            section = trim(text.substr(1, text.size() - 2));
            continue;
        }
        const auto eq = text.find('=');
        if (eq == std::string::npos)
            throw UsageError("expected 'key = value' on line " + std::to_string(line_no) + ": " +
                             text);
        if (section.empty())
            throw UsageError("key outside any [section] on line " + std::to_string(line_no));
        table.set(section, trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
    }
    return table;
}

inline SpecTable parse_json_spec(const std::string& content, const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(content);
    } catch (const std::exception& e) {
        throw UsageError("cannot parse JSON spec " + path + ": " + e.what());
    }
    SpecTable table;
    for (const auto& [section, body] : j.items()) {
        if (!body.is_object())
            throw UsageError("spec section '" + section + "' must be an object");
        for (const auto& [key, value] : body.items()) {
            std::string text;
            if (value.is_string())
                text = value.get<std::string>();
            else
                text = value.dump();
            table.set(section, key, text);
        }
    }
    return table;
}

inline SplitSpec parse_split(const std::string& v) {
    const auto colon = v.find(':');
    const std::string kind = colon == std::string::npos ? "" : lower(trim(v.substr(0, colon)));
    const std::string args = colon == std::string::npos ? v : v.substr(colon + 1);
    const auto parts = split_list(args);
    if (kind == "fractions") {
        if (parts.size() != 2)
            throw UsageError("split fractions need 'fractions:train,val', got '" + v + "'");
        return SplitSpec::fractions(to_double(parts[0], "split"), to_double(parts[1], "split"));
    }
    if (kind == "counts") {
        if (parts.size() != 3)
            throw UsageError("split counts need 'counts:train,val,test', got '" + v + "'");
        return SplitSpec::counts(to_int(parts[0], "split"), to_int(parts[1], "split"),
                                 to_int(parts[2], "split"));
    }
    throw UsageError("split must be 'fractions:a,b' or 'counts:a,b,c', got '" + v + "'");
}

}  // namespace detail

struct DataSection {
    std::string path;  // empty when synthetic
    bool synthetic = false;
    SyntheticSpec synth;
    SplitSpec split = SplitSpec::fractions(0.7, 0.1);
    std::int64_t stride = 1;
    std::optional<std::int64_t> channels;  // optional cross-check against the file
};

/// A full experiment description: data source and split, model architecture,
/// training procedure, metric references and output location. Parsed from a
/// sectioned key-value file (or the JSON encoding of the same schema),
/// overridable per key through TIMEMIXER_<SECTION>__<KEY> environment
/// variables, and validated as a consistent whole before any work starts.
struct ExperimentSpec {
    DataSection data;
    ModelConfig model;
    TrainConfig train;
    MetricsConfig metrics;
    std::string output_dir = "runs/experiment";

    WindowSpec window_spec() const { return {model.input_len, model.pred_len, data.stride}; }

    static ExperimentSpec load(const std::string& path, bool apply_env = true) {
        if (!std::filesystem::exists(path))
            throw UsageError("spec file not found: " + path);
        std::ifstream in(path);
        std::stringstream buffer;
        buffer << in.rdbuf();
        const std::string content = buffer.str();
        const bool looks_json = !content.empty() && content.find_first_not_of(" \t\r\n") !=
                                                        std::string::npos &&
                                content[content.find_first_not_of(" \t\r\n")] == '{';
        detail::SpecTable table;
        if (looks_json) {
            table = detail::parse_json_spec(content, path);
        } else {
            std::istringstream ini(content);
            table = detail::parse_ini(ini);
        }
        if (apply_env) apply_env_overrides(table);
        return from_table(table);
    }

    /// TIMEMIXER_<SECTION>__<KEY>=value wins over the file for any spec key.
    static void apply_env_overrides(detail::SpecTable& table) {
        for (char** env = environ; *env != nullptr; ++env) {
            const std::string entry = *env;
            if (entry.rfind("TIMEMIXER_", 0) != 0) continue;
            const auto eq = entry.find('=');
            if (eq == std::string::npos) continue;
            const std::string name = entry.substr(10, eq - 10);
            const std::string value = entry.substr(eq + 1);
            const auto sep = name.find("__");
            if (sep == std::string::npos) continue;
            table.set(detail::lower(name.substr(0, sep)), detail::lower(name.substr(sep + 2)),
                      value);
        }
    }

    static ExperimentSpec from_table(detail::SpecTable& t) {
        using namespace detail;
        ExperimentSpec spec;

        // [data]
        if (auto v = t.take("data", "synthetic")) spec.data.synthetic = to_bool(*v, "data.synthetic");
        if (auto v = t.take("data", "path")) spec.data.path = *v;
        if (spec.data.synthetic) {
            if (auto v = t.take("data", "synth_rows"))
                spec.data.synth.rows = to_int(*v, "data.synth_rows");
            if (auto v = t.take("data", "synth_channels"))
                spec.data.synth.channels = to_int(*v, "data.synth_channels");
            if (auto v = t.take("data", "synth_periods")) {
                spec.data.synth.periods.clear();
                for (const auto& p : split_list(*v))
                    if (!p.empty()) spec.data.synth.periods.push_back(to_int(p, "data.synth_periods"));
            }
            if (auto v = t.take("data", "synth_trend_slope"))
                spec.data.synth.trend_slope = to_double(*v, "data.synth_trend_slope");
            if (auto v = t.take("data", "synth_noise_sigma"))
                spec.data.synth.noise_sigma = to_double(*v, "data.synth_noise_sigma");
            if (auto v = t.take("data", "synth_seed"))
                spec.data.synth.seed = static_cast<std::uint64_t>(to_int(*v, "data.synth_seed"));
        } else if (spec.data.path.empty()) {
            throw UsageError("spec is missing required key [data] path (or synthetic = true)");
        }
        if (auto v = t.take("data", "split")) spec.data.split = parse_split(*v);
        if (auto v = t.take("data", "stride")) spec.data.stride = to_int(*v, "data.stride");
        if (auto v = t.take("data", "channels")) spec.data.channels = to_int(*v, "data.channels");

        // [model]
        spec.model.input_len = to_int(t.require("model", "input_len"), "model.input_len");
        spec.model.pred_len = to_int(t.require("model", "pred_len"), "model.pred_len");
        if (auto v = t.take("model", "num_scales"))
            spec.model.num_scales = to_int(*v, "model.num_scales");
        if (auto v = t.take("model", "num_layers"))
            spec.model.num_layers = to_int(*v, "model.num_layers");
        if (auto v = t.take("model", "d_model")) spec.model.d_model = to_int(*v, "model.d_model");
        if (auto v = t.take("model", "decomposition"))
            spec.model.decomposition.method = detail::method_from(lower(*v));
        if (auto v = t.take("model", "kernel"))
            spec.model.decomposition.kernel = to_int(*v, "model.kernel");
        if (auto v = t.take("model", "top_k_frequencies"))
            spec.model.decomposition.top_k_frequencies = to_int(*v, "model.top_k_frequencies");
        if (auto v = t.take("model", "ensemble"))
            spec.model.ensemble = detail::ensemble_from(lower(*v));
        if (auto v = t.take("model", "dropout"))
            spec.model.dropout_rate = to_double(*v, "model.dropout");
        if (auto v = t.take("model", "use_decomposition"))
            spec.model.ablation.use_decomposition = to_bool(*v, "model.use_decomposition");
        if (auto v = t.take("model", "use_fmm"))
            spec.model.ablation.use_fmm = to_bool(*v, "model.use_fmm");
        if (auto v = t.take("model", "seasonal_mixing"))
            spec.model.ablation.seasonal_mixing = detail::direction_from(lower(*v));
        if (auto v = t.take("model", "trend_mixing"))
            spec.model.ablation.trend_mixing = detail::direction_from(lower(*v));
        if (auto v = t.take("model", "undecomposed_mixing"))
            spec.model.ablation.undecomposed_mixing = detail::direction_from(lower(*v));

        // [train]
        if (auto v = t.take("train", "learning_rate"))
            spec.train.learning_rate = to_double(*v, "train.learning_rate");
        if (auto v = t.take("train", "beta1")) spec.train.beta1 = to_double(*v, "train.beta1");
        if (auto v = t.take("train", "beta2")) spec.train.beta2 = to_double(*v, "train.beta2");
        if (auto v = t.take("train", "epsilon"))
            spec.train.epsilon = to_double(*v, "train.epsilon");
        if (auto v = t.take("train", "batch_size"))
            spec.train.batch_size = to_int(*v, "train.batch_size");
        if (auto v = t.take("train", "epochs")) spec.train.epochs = to_int(*v, "train.epochs");
        if (auto v = t.take("train", "loss")) {
            const auto s = lower(*v);
            if (s == "mse")
                spec.train.loss = LossKind::mse;
            else if (s == "smape")
                spec.train.loss = LossKind::smape;
            else
                throw UsageError("train.loss must be mse or smape, got '" + *v + "'");
        }
        if (auto v = t.take("train", "seed"))
            spec.train.seed = static_cast<std::uint64_t>(to_int(*v, "train.seed"));
        if (auto v = t.take("train", "deterministic"))
            spec.train.deterministic = to_bool(*v, "train.deterministic");
        if (auto v = t.take("train", "lr_decay")) {
            const auto s = lower(*v);
            if (s == "none")
                spec.train.lr_decay = LrDecay::none;
            else if (s == "halve_per_epoch")
                spec.train.lr_decay = LrDecay::halve_per_epoch;
            else
                throw UsageError("train.lr_decay must be none or halve_per_epoch, got '" + *v +
                                 "'");
        }
        if (auto v = t.take("train", "grad_clip_norm"))
            spec.train.grad_clip_norm = to_double(*v, "train.grad_clip_norm");
        if (auto v = t.take("train", "keep_best_val"))
            spec.train.keep_best_val = to_bool(*v, "train.keep_best_val");

        // [metrics]
        if (auto v = t.take("metrics", "seasonal_period"))
            spec.metrics.seasonal_period = to_int(*v, "metrics.seasonal_period");
        if (auto v = t.take("metrics", "naive2_smape"))
            spec.metrics.naive2_smape = to_double(*v, "metrics.naive2_smape");
        if (auto v = t.take("metrics", "naive2_mase"))
            spec.metrics.naive2_mase = to_double(*v, "metrics.naive2_mase");

        // [output]
        if (auto v = t.take("output", "dir")) spec.output_dir = *v;

        t.check_fully_consumed();

        try {
            spec.train.validate();
            spec.window_spec().validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(std::string("invalid spec: ") + e.what());
        }
        return spec;
    }

    /// Load (or synthesize) the dataset, split and scale it, and pin the
    /// model's channel count. Every shape inconsistency surfaces here,
    /// before any training work.
    SeriesDataset prepare_dataset(std::ostream& warn = std::cerr) {
        SeriesDataset ds;
        if (data.synthetic) {
            ds = synth_multiscale(data.synth);
        } else {
            if (!std::filesystem::exists(data.path))
                throw UsageError("data file not found: " + data.path);
            ds = load_csv(data.path);
        }
        if (data.channels.has_value() && *data.channels != ds.channels())
            throw UsageError("spec expects " + std::to_string(*data.channels) +
                             " channels, data file has " + std::to_string(ds.channels()));
        ds.split_and_scale(data.split, warn);
        model.channels = ds.channels();
        try {
            model.validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(std::string("invalid spec: ") + e.what());
        }
        return ds;
    }
};

}  // namespace timemixer
