#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "timemixer/decomposition.hpp"
#include "timemixer/rng.hpp"
#include "timemixer/tensor.hpp"

namespace timemixer {

enum class MixDirection { bottom_up, top_down, none };
enum class EnsembleRule { sum, average };

inline std::string to_string(MixDirection d) {
    switch (d) {
        case MixDirection::bottom_up: return "bottom_up";
        case MixDirection::top_down: return "top_down";
        default: return "none";
    }
}

inline std::string to_string(EnsembleRule r) {
    return r == EnsembleRule::sum ? "sum" : "average";
}

/// Switches for the ten structural variants of the architecture. The
/// canonical network is case 1: decomposition on, bottom-up seasonal mixing,
/// top-down trend mixing, multipredictor ensembling on.
struct AblationConfig {
    bool use_decomposition = true;
    bool use_fmm = true;
    MixDirection seasonal_mixing = MixDirection::bottom_up;
    MixDirection trend_mixing = MixDirection::top_down;
    // applied to the raw (undecomposed) features when use_decomposition=false
    MixDirection undecomposed_mixing = MixDirection::none;

    static AblationConfig table_case(int id) {
        AblationConfig c;
        switch (id) {
            case 1: break;
            case 2: c.use_fmm = false; break;
            case 3: c.seasonal_mixing = MixDirection::none; break;
            case 4: c.trend_mixing = MixDirection::none; break;
            case 5: c.seasonal_mixing = MixDirection::top_down; break;
            case 6: c.trend_mixing = MixDirection::bottom_up; break;
            case 7:
                c.seasonal_mixing = MixDirection::top_down;
                c.trend_mixing = MixDirection::bottom_up;
                break;
            case 8:
                c.use_decomposition = false;
                c.undecomposed_mixing = MixDirection::bottom_up;
                break;
            case 9:
                c.use_decomposition = false;
                c.undecomposed_mixing = MixDirection::top_down;
                break;
            case 10:
                c.use_decomposition = false;
                c.undecomposed_mixing = MixDirection::none;
                break;
            default:
                throw std::invalid_argument("unknown ablation case " + std::to_string(id) +
                                            ", valid ids are 1..10");
        }
        return c;
    }

    bool operator==(const AblationConfig&) const = default;
};

struct ModelConfig {
    std::int64_t input_len = 96;  // P
    std::int64_t pred_len = 96;   // F
    std::int64_t channels = 7;    // C
    std::int64_t num_scales = 3;  // M
    std::int64_t num_layers = 2;  // L
    std::int64_t d_model = 16;
    DecompositionConfig decomposition;
    EnsembleRule ensemble = EnsembleRule::sum;
    AblationConfig ablation;
    double dropout_rate = 0.0;

    std::int64_t scale_len(std::int64_t m) const {
        std::int64_t len = input_len;
        for (std::int64_t i = 0; i < m; ++i) len /= 2;
        return len;
    }

    std::int64_t d_ff() const { return 4 * d_model; }

    void validate() const {
        if (input_len < 1 || pred_len < 1 || channels < 1 || d_model < 1)
            throw std::invalid_argument("model dimensions must be positive");
        if (num_scales < 0)
            throw std::invalid_argument("num_scales must be >= 0, got " +
                                        std::to_string(num_scales));
        if (num_layers < 1)
            throw std::invalid_argument("num_layers must be >= 1, got " +
                                        std::to_string(num_layers));
        if (scale_len(num_scales) < 1)
            throw std::invalid_argument(
                "input_len " + std::to_string(input_len) + " cannot be downsampled " +
                std::to_string(num_scales) + " times: floor(P/2^M) < 1");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw std::invalid_argument("dropout_rate must lie in [0,1)");
        decomposition.validate();
        if (decomposition.method == DecompositionMethod::dft_season_trend) {
            const std::int64_t coarsest = scale_len(num_scales);
            if (decomposition.top_k_frequencies > coarsest / 2)
                throw std::invalid_argument(
                    "top_k_frequencies " + std::to_string(decomposition.top_k_frequencies) +
                    " exceeds floor(T/2) = " + std::to_string(coarsest / 2) +
                    " at the coarsest scale (length " + std::to_string(coarsest) + ")");
        }
    }

    bool operator==(const ModelConfig&) const = default;
};

struct ForwardContext {
    bool training = false;
    Rng* dropout_rng = nullptr;
};

namespace detail {

/// Two linear layers with intermediate GELU applied along the time axis.
/// Weight sharing across the feature dimension: the same temporal map acts
/// on every one of the d_model channels.
struct TemporalMix {
    Tensor w1, b1, w2, b2;  // w1: [T_in, T_out], w2: [T_out, T_out]

    Tensor apply(const Tensor& x) const {
        Tensor h = transpose(x, -2, -1);  // [B, D, T_in]
        h = gelu(broadcast_add(matmul(h, w1), b1));
        h = broadcast_add(matmul(h, w2), b2);
        return transpose(h, -2, -1);  // [B, T_out, D]
    }
};

/// Per-time-step channel MLP: d_model -> d_ff -> d_model with GELU between.
struct FeedForward {
    Tensor w1, b1, w2, b2;

    Tensor apply(const Tensor& x) const {
        Tensor h = gelu(broadcast_add(matmul(x, w1), b1));
        return broadcast_add(matmul(h, w2), b2);
    }
};

/// Temporal regression to the horizon followed by projection back to the
/// variate space.
struct Predictor {
    Tensor temporal_w, temporal_b;  // [T_m, F], [F]
    Tensor channel_w, channel_b;    // [d_model, C], [C]

    Tensor apply(const Tensor& x) const {
        Tensor h = transpose(x, -2, -1);  // [B, D, T_m]
        h = broadcast_add(matmul(h, temporal_w), temporal_b);
        h = transpose(h, -2, -1);  // [B, F, D]
        return broadcast_add(matmul(h, channel_w), channel_b);
    }
};

struct PdmLayer {
    std::vector<TemporalMix> seasonal;      // one per adjacent scale pair
    std::vector<TemporalMix> trend;         // one per adjacent scale pair
    std::vector<TemporalMix> undecomposed;  // one per adjacent scale pair
    FeedForward ff;
};

}  // namespace detail

/// The multiscale mixing forecaster: shared embedding, stacked
/// past-decomposable-mixing layers, per-scale future predictors.
class TimeMixerModel {
public:
    /// Weights ~ Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero,
    /// drawn in declaration order from a single seeded stream, so the full
    /// parameter set is a pure function of (config, seed).
    static TimeMixerModel init(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        TimeMixerModel model(cfg);
        Rng rng(seed);
        model.build(&rng);
        return model;
    }

    /// Parameter layout with all values zero (used by the checkpoint loader).
    static TimeMixerModel zeros_like(const ModelConfig& cfg) {
        cfg.validate();
        TimeMixerModel model(cfg);
        model.build(nullptr);
        return model;
    }

    const ModelConfig& config() const { return cfg_; }

    const std::vector<std::pair<std::string, Tensor>>& named_parameters() const {
        return named_;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        out.reserve(named_.size());
        for (const auto& [name, t] : named_) out.push_back(t);
        return out;
    }

    Tensor parameter(const std::string& name) const {
        for (const auto& [n, t] : named_)
            if (n == name) return t;
        throw std::out_of_range("no parameter named " + name);
    }

    void zero_grad() {
        for (auto& [name, t] : named_) t.zero_grad();
    }

    /// Scale pyramid: element 0 is the input itself, element m the window-2
    /// average pooling of element m-1.
    std::vector<Tensor> downsample_multiscale(const Tensor& x) const {
        if (x.rank() != 3 || x.dim(1) != cfg_.input_len || x.dim(2) != cfg_.channels)
            throw ShapeError("expected input [B," + std::to_string(cfg_.input_len) + "," +
                             std::to_string(cfg_.channels) + "], got " + shape_str(x.shape()));
        std::vector<Tensor> scales;
        scales.reserve(static_cast<std::size_t>(cfg_.num_scales + 1));
        scales.push_back(x);
        for (std::int64_t m = 1; m <= cfg_.num_scales; ++m)
            scales.push_back(avg_pool1d(scales.back(), 1, 2, 2));
        return scales;
    }

    std::vector<Tensor> embed(const std::vector<Tensor>& scales, const ForwardContext& ctx) const {
        std::vector<Tensor> feats;
        feats.reserve(scales.size());
        for (const auto& s : scales) {
            Tensor h = broadcast_add(matmul(s, embed_w_), embed_b_);
            if (ctx.training && cfg_.dropout_rate > 0.0) {
                if (ctx.dropout_rng == nullptr)
                    throw std::logic_error("training forward with dropout needs an rng");
                h = dropout(h, cfg_.dropout_rate, *ctx.dropout_rng);
            }
            feats.push_back(std::move(h));
        }
        return feats;
    }

    /// One past-decomposable-mixing layer: decompose each scale, mix the
    /// seasonal parts fine-to-coarse and the trend parts coarse-to-fine
    /// (directions controlled by the ablation switches), recombine, apply
    /// the shared channel feed-forward, and add the residual.
    std::vector<Tensor> pdm_block(const std::vector<Tensor>& feats, std::int64_t layer) const {
        const auto& lay = layers_.at(static_cast<std::size_t>(layer));
        const std::int64_t M = cfg_.num_scales;
        std::vector<Tensor> mixed;
        if (cfg_.ablation.use_decomposition) {
            std::vector<Tensor> season, trend;
            season.reserve(feats.size());
            trend.reserve(feats.size());
            for (const auto& f : feats) {
                auto [s, t] = series_decomp(f, cfg_.decomposition);
                season.push_back(std::move(s));
                trend.push_back(std::move(t));
            }
            run_mixing(season, lay.seasonal, cfg_.ablation.seasonal_mixing, M);
            run_mixing(trend, lay.trend, cfg_.ablation.trend_mixing, M);
            mixed.reserve(feats.size());
            for (std::size_t m = 0; m < feats.size(); ++m)
                mixed.push_back(add(season[m], trend[m]));
        } else {
            mixed = feats;
            run_mixing(mixed, lay.undecomposed, cfg_.ablation.undecomposed_mixing, M);
        }
        std::vector<Tensor> out;
        out.reserve(feats.size());
        for (std::size_t m = 0; m < feats.size(); ++m)
            out.push_back(add(feats[m], lay.ff.apply(mixed[m])));
        return out;
    }

    /// Each scale's horizon regression before ensembling.
    std::vector<Tensor> per_scale_predictions(const Tensor& x,
                                              const ForwardContext& ctx = {}) const {
        auto feats = embed(downsample_multiscale(x), ctx);
        for (std::int64_t l = 0; l < cfg_.num_layers; ++l) feats = pdm_block(feats, l);
        std::vector<Tensor> preds;
        preds.reserve(predictors_.size());
        for (std::size_t m = 0; m < predictors_.size(); ++m)
            preds.push_back(predictors_[m].apply(feats[m]));
        return preds;
    }

    Tensor forward(const Tensor& x, const ForwardContext& ctx = {}) const {
        auto preds = per_scale_predictions(x, ctx);
        Tensor out = preds[0];
        for (std::size_t m = 1; m < preds.size(); ++m) out = add(out, preds[m]);
        if (cfg_.ensemble == EnsembleRule::average && preds.size() > 1)
            out = div_scalar(out, static_cast<double>(preds.size()));
        return out;
    }

private:
    explicit TimeMixerModel(ModelConfig cfg) : cfg_(std::move(cfg)) {}

    Tensor make_param(const std::string& name, Shape shape, std::int64_t fan_in, Rng* rng) {
        std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)), 0.0);
        if (rng != nullptr && fan_in > 0) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (auto& v : data) v = rng->uniform(-bound, bound);
        }
        Tensor t = Tensor::from_data(std::move(shape), std::move(data), true);
        named_.emplace_back(name, t);
        return t;
    }

    detail::TemporalMix make_mix(const std::string& prefix, std::int64_t t_in, std::int64_t t_out,
                                 Rng* rng) {
        detail::TemporalMix mx;
        mx.w1 = make_param(prefix + ".w1", {t_in, t_out}, t_in, rng);
        mx.b1 = make_param(prefix + ".b1", {t_out}, 0, rng);
        mx.w2 = make_param(prefix + ".w2", {t_out, t_out}, t_out, rng);
        mx.b2 = make_param(prefix + ".b2", {t_out}, 0, rng);
        return mx;
    }

    void build(Rng* rng) {
        const std::int64_t M = cfg_.num_scales;
        embed_w_ = make_param("embedding.weight", {cfg_.channels, cfg_.d_model}, cfg_.channels, rng);
        embed_b_ = make_param("embedding.bias", {cfg_.d_model}, 0, rng);
        for (std::int64_t l = 0; l < cfg_.num_layers; ++l) {
            detail::PdmLayer lay;
            const std::string lp = "pdm." + std::to_string(l);
            if (cfg_.ablation.use_decomposition) {
                build_mix_stack(lay.seasonal, lp + ".seasonal", cfg_.ablation.seasonal_mixing, M,
                                rng);
                build_mix_stack(lay.trend, lp + ".trend", cfg_.ablation.trend_mixing, M, rng);
            } else {
                build_mix_stack(lay.undecomposed, lp + ".mix", cfg_.ablation.undecomposed_mixing,
                                M, rng);
            }
            lay.ff.w1 = make_param(lp + ".ff.w1", {cfg_.d_model, cfg_.d_ff()}, cfg_.d_model, rng);
            lay.ff.b1 = make_param(lp + ".ff.b1", {cfg_.d_ff()}, 0, rng);
            lay.ff.w2 = make_param(lp + ".ff.w2", {cfg_.d_ff(), cfg_.d_model}, cfg_.d_ff(), rng);
            lay.ff.b2 = make_param(lp + ".ff.b2", {cfg_.d_model}, 0, rng);
            layers_.push_back(std::move(lay));
        }
        const std::int64_t n_predictors = cfg_.ablation.use_fmm ? M + 1 : 1;
        for (std::int64_t m = 0; m < n_predictors; ++m) {
            detail::Predictor p;
            const std::string pp = "predictor." + std::to_string(m);
            const std::int64_t t_m = cfg_.scale_len(m);
            p.temporal_w = make_param(pp + ".temporal.weight", {t_m, cfg_.pred_len}, t_m, rng);
            p.temporal_b = make_param(pp + ".temporal.bias", {cfg_.pred_len}, 0, rng);
            p.channel_w =
                make_param(pp + ".channel.weight", {cfg_.d_model, cfg_.channels}, cfg_.d_model, rng);
            p.channel_b = make_param(pp + ".channel.bias", {cfg_.channels}, 0, rng);
            predictors_.push_back(std::move(p));
        }
    }

    void build_mix_stack(std::vector<detail::TemporalMix>& dst, const std::string& prefix,
                         MixDirection dir, std::int64_t M, Rng* rng) {
        if (dir == MixDirection::none) return;
        for (std::int64_t p = 0; p < M; ++p) {
            // pair p couples scales p and p+1; bottom_up maps p -> p+1,
            // top_down maps p+1 -> p
            const std::int64_t t_fine = cfg_.scale_len(p);
            const std::int64_t t_coarse = cfg_.scale_len(p + 1);
            if (dir == MixDirection::bottom_up)
                dst.push_back(make_mix(prefix + "." + std::to_string(p), t_fine, t_coarse, rng));
            else
                dst.push_back(make_mix(prefix + "." + std::to_string(p), t_coarse, t_fine, rng));
        }
    }

    /// In-place sequential mixing pass. Bottom-up runs m = 1..M, each coarse
    /// scale receiving the already-updated finer neighbour; top-down runs
    /// m = M-1..0 symmetrically.
    static void run_mixing(std::vector<Tensor>& comps,
                           const std::vector<detail::TemporalMix>& weights, MixDirection dir,
                           std::int64_t M) {
        if (dir == MixDirection::none || M == 0) return;
        if (dir == MixDirection::bottom_up) {
            for (std::int64_t m = 1; m <= M; ++m) {
                const auto& mx = weights.at(static_cast<std::size_t>(m - 1));
                comps[static_cast<std::size_t>(m)] =
                    add(comps[static_cast<std::size_t>(m)],
                        mx.apply(comps[static_cast<std::size_t>(m - 1)]));
            }
        } else {
            for (std::int64_t m = M - 1; m >= 0; --m) {
                const auto& mx = weights.at(static_cast<std::size_t>(m));
                comps[static_cast<std::size_t>(m)] =
                    add(comps[static_cast<std::size_t>(m)],
                        mx.apply(comps[static_cast<std::size_t>(m + 1)]));
            }
        }
    }

    ModelConfig cfg_;
    Tensor embed_w_, embed_b_;
    std::vector<detail::PdmLayer> layers_;
    std::vector<detail::Predictor> predictors_;
    std::vector<std::pair<std::string, Tensor>> named_;
};

}  // namespace timemixer
