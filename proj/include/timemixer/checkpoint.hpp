#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "timemixer/model.hpp"

namespace timemixer {

/// Per-channel standardization statistics carried alongside a trained model
/// so predictions can be mapped back to original units.
struct ScalerStats {
    std::vector<double> mean;
    std::vector<double> std;

    bool empty() const { return mean.empty(); }
};

namespace detail {

inline std::string method_name(DecompositionMethod m) {
    return m == DecompositionMethod::moving_average ? "moving_average" : "dft_season_trend";
}

inline DecompositionMethod method_from(const std::string& s) {
    if (s == "moving_average") return DecompositionMethod::moving_average;
    if (s == "dft_season_trend" || s == "dft") return DecompositionMethod::dft_season_trend;
    throw std::invalid_argument("unknown decomposition method '" + s + "'");
}

inline MixDirection direction_from(const std::string& s) {
    if (s == "bottom_up") return MixDirection::bottom_up;
    if (s == "top_down") return MixDirection::top_down;
    if (s == "none") return MixDirection::none;
    throw std::invalid_argument("unknown mixing direction '" + s + "'");
}

inline EnsembleRule ensemble_from(const std::string& s) {
    if (s == "sum") return EnsembleRule::sum;
    if (s == "average") return EnsembleRule::average;
    throw std::invalid_argument("unknown ensemble rule '" + s + "'");
}

inline nlohmann::ordered_json config_to_json(const ModelConfig& cfg) {
    nlohmann::ordered_json j;
    j["input_len"] = cfg.input_len;
    j["pred_len"] = cfg.pred_len;
    j["channels"] = cfg.channels;
    j["num_scales"] = cfg.num_scales;
    j["num_layers"] = cfg.num_layers;
    j["d_model"] = cfg.d_model;
    j["decomposition"] = {{"method", method_name(cfg.decomposition.method)},
                          {"kernel", cfg.decomposition.kernel},
                          {"top_k_frequencies", cfg.decomposition.top_k_frequencies}};
    j["ensemble"] = to_string(cfg.ensemble);
    j["ablation"] = {{"use_decomposition", cfg.ablation.use_decomposition},
                     {"use_fmm", cfg.ablation.use_fmm},
                     {"seasonal_mixing", to_string(cfg.ablation.seasonal_mixing)},
                     {"trend_mixing", to_string(cfg.ablation.trend_mixing)},
                     {"undecomposed_mixing", to_string(cfg.ablation.undecomposed_mixing)}};
    j["dropout_rate"] = cfg.dropout_rate;
    return j;
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.input_len = j.at("input_len").get<std::int64_t>();
    cfg.pred_len = j.at("pred_len").get<std::int64_t>();
    cfg.channels = j.at("channels").get<std::int64_t>();
    cfg.num_scales = j.at("num_scales").get<std::int64_t>();
    cfg.num_layers = j.at("num_layers").get<std::int64_t>();
    cfg.d_model = j.at("d_model").get<std::int64_t>();
    const auto& d = j.at("decomposition");
    cfg.decomposition.method = method_from(d.at("method").get<std::string>());
    cfg.decomposition.kernel = d.at("kernel").get<std::int64_t>();
    cfg.decomposition.top_k_frequencies = d.at("top_k_frequencies").get<std::int64_t>();
    cfg.ensemble = ensemble_from(j.at("ensemble").get<std::string>());
    const auto& a = j.at("ablation");
    cfg.ablation.use_decomposition = a.at("use_decomposition").get<bool>();
    cfg.ablation.use_fmm = a.at("use_fmm").get<bool>();
    cfg.ablation.seasonal_mixing = direction_from(a.at("seasonal_mixing").get<std::string>());
    cfg.ablation.trend_mixing = direction_from(a.at("trend_mixing").get<std::string>());
    cfg.ablation.undecomposed_mixing =
        direction_from(a.at("undecomposed_mixing").get<std::string>());
    cfg.dropout_rate = j.at("dropout_rate").get<double>();
    return cfg;
}

}  // namespace detail

/// Single-file model checkpoint: one line of magic, one line of JSON (the
/// full config, the parameter manifest in order, and the scaler statistics),
/// then every parameter's values as raw little-endian 64-bit floats in
/// manifest order. Save -> load -> save is byte-identical.
inline void save_checkpoint(const std::string& path, const TimeMixerModel& model,
                            const ScalerStats& scaler = {}) {
    nlohmann::ordered_json header;
    header["config"] = detail::config_to_json(model.config());
    nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
    for (const auto& [name, t] : model.named_parameters()) {
        nlohmann::ordered_json entry;
        entry["name"] = name;
        entry["shape"] = t.shape();
        manifest.push_back(std::move(entry));
    }
    header["parameters"] = std::move(manifest);
    if (!scaler.empty()) {
        header["scaler"] = {{"mean", scaler.mean}, {"std", scaler.std}};
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open checkpoint file for writing: " + path);
    out << "timemixer-checkpoint-v1\n" << header.dump() << "\n";
    for (const auto& [name, t] : model.named_parameters()) {
        const auto& data = t.data();
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

struct LoadedCheckpoint {
    TimeMixerModel model;
    ScalerStats scaler;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint file: " + path);
    std::string magic, header_line;
    std::getline(in, magic);
    if (magic != "timemixer-checkpoint-v1")
        throw std::runtime_error(path + " is not a timemixer checkpoint");
    std::getline(in, header_line);
    const auto header = nlohmann::json::parse(header_line);
    ModelConfig cfg = detail::config_from_json(header.at("config"));
    TimeMixerModel model = TimeMixerModel::zeros_like(cfg);
    const auto& manifest = header.at("parameters");
    const auto& named = model.named_parameters();
    if (manifest.size() != named.size())
        throw std::runtime_error("checkpoint manifest has " + std::to_string(manifest.size()) +
                                 " parameters, model expects " + std::to_string(named.size()));
    for (std::size_t i = 0; i < named.size(); ++i) {
        const auto& entry = manifest[i];
        if (entry.at("name").get<std::string>() != named[i].first)
            throw std::runtime_error("checkpoint parameter order mismatch at '" +
                                     entry.at("name").get<std::string>() + "', expected '" +
                                     named[i].first + "'");
        const auto shape = entry.at("shape").get<Shape>();
        if (shape != named[i].second.shape())
            throw std::runtime_error("checkpoint shape mismatch for '" + named[i].first + "'");
        Tensor param = named[i].second;  // shared handle onto the model's node
        auto& data = param.mutable_data();
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint truncated while reading '" + named[i].first +
                                          "'");
    }
    ScalerStats scaler;
    if (header.contains("scaler")) {
        scaler.mean = header.at("scaler").at("mean").get<std::vector<double>>();
        scaler.std = header.at("scaler").at("std").get<std::vector<double>>();
    }
    return {std::move(model), std::move(scaler)};
}

}  // namespace timemixer
