#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <utility>

#include "timemixer/fft.hpp"
#include "timemixer/tensor.hpp"

namespace timemixer {

enum class DecompositionMethod { moving_average, dft_season_trend };

struct DecompositionConfig {
    DecompositionMethod method = DecompositionMethod::moving_average;
    std::int64_t kernel = 25;            // moving_average only; odd
    std::int64_t top_k_frequencies = 5;  // dft_season_trend only

    bool operator==(const DecompositionConfig&) const = default;

    void validate() const {
        if (method == DecompositionMethod::moving_average) {
            if (kernel < 1 || kernel % 2 == 0)
                throw std::invalid_argument("decomposition kernel must be odd and positive, got " +
                                            std::to_string(kernel));
        } else {
            if (top_k_frequencies < 1)
                throw std::invalid_argument("top_k_frequencies must be positive, got " +
                                            std::to_string(top_k_frequencies));
        }
    }
};

namespace detail {

struct DftTables {
    // cos/sin of 2*pi*k*n/T for k in [0, T/2], n in [0, T)
    std::vector<double> cos_t, sin_t;
    std::int64_t bins = 0;
};

inline const DftTables& dft_tables(std::int64_t T) {
    static thread_local std::map<std::int64_t, DftTables> cache;
    auto it = cache.find(T);
    if (it != cache.end()) return it->second;
    DftTables tab;
    tab.bins = T / 2 + 1;
    tab.cos_t.resize(static_cast<std::size_t>(tab.bins * T));
    tab.sin_t.resize(static_cast<std::size_t>(tab.bins * T));
    for (std::int64_t k = 0; k < tab.bins; ++k)
        for (std::int64_t n = 0; n < T; ++n) {
            const double ang =
                2.0 * std::numbers::pi * static_cast<double>((k * n) % T) / static_cast<double>(T);
            tab.cos_t[static_cast<std::size_t>(k * T + n)] = std::cos(ang);
            tab.sin_t[static_cast<std::size_t>(k * T + n)] = std::sin(ang);
        }
    return cache.emplace(T, std::move(tab)).first->second;
}

/// Orthogonal projection of one real series onto the subspace spanned by a
/// set of frequency bins (and their conjugates). Self-adjoint, which is what
/// the backward pass relies on.
inline void project_onto_bins(const double* x, std::int64_t T, std::int64_t in_stride,
                              const std::vector<std::int64_t>& bins, double* out,
                              std::int64_t out_stride) {
    const auto& tab = dft_tables(T);
    for (std::int64_t n = 0; n < T; ++n) out[n * out_stride] = 0.0;
    for (const std::int64_t k : bins) {
        double re = 0.0, im = 0.0;
        const double* ct = tab.cos_t.data() + k * T;
        const double* st = tab.sin_t.data() + k * T;
        for (std::int64_t n = 0; n < T; ++n) {
            const double v = x[n * in_stride];
            re += v * ct[n];
            im -= v * st[n];
        }
        const bool nyquist = (2 * k == T);
        const double scale = (k == 0 || nyquist) ? 1.0 / static_cast<double>(T)
                                                 : 2.0 / static_cast<double>(T);
        for (std::int64_t n = 0; n < T; ++n)
            out[n * out_stride] += scale * (re * ct[n] - im * st[n]);
    }
}

/// Per-series selection of the strongest non-zero-frequency bins. Ties break
/// toward the lower bin index so the choice is deterministic.
inline std::vector<std::int64_t> top_k_bins(const double* x, std::int64_t T, std::int64_t stride,
                                            std::int64_t top_k) {
    const auto& tab = dft_tables(T);
    const std::int64_t nbins = T / 2;  // bins 1..T/2; bin 0 stays in the trend
    std::vector<std::pair<double, std::int64_t>> mags;
    mags.reserve(static_cast<std::size_t>(nbins));
    for (std::int64_t k = 1; k <= nbins; ++k) {
        double re = 0.0, im = 0.0;
        const double* ct = tab.cos_t.data() + k * T;
        const double* st = tab.sin_t.data() + k * T;
        for (std::int64_t n = 0; n < T; ++n) {
            const double v = x[n * stride];
            re += v * ct[n];
            im -= v * st[n];
        }
        mags.emplace_back(re * re + im * im, k);
    }
    std::stable_sort(mags.begin(), mags.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<std::int64_t> kept;
    kept.reserve(static_cast<std::size_t>(top_k));
    for (std::int64_t i = 0; i < top_k; ++i) kept.push_back(mags[static_cast<std::size_t>(i)].second);
    std::sort(kept.begin(), kept.end());
    return kept;
}

}  // namespace detail

/// Seasonal component from the strongest top_k frequency bins (bin 0
/// excluded, so the mean stays in the trend). Differentiable: the bin
/// selection is treated as constant and the gradient flows through the
/// linear projection, whose adjoint is the projection itself.
inline Tensor dft_seasonal_component(const Tensor& x, std::int64_t axis, std::int64_t top_k) {
    const auto sp = detail::split_axis(x.shape(), axis);
    const std::int64_t T = sp.axis;
    if (top_k < 1 || top_k > T / 2)
        throw std::invalid_argument("top_k_frequencies " + std::to_string(top_k) +
                                    " out of range for series length " + std::to_string(T));
    const bool track = detail::should_track({&x});
    std::vector<double> out(x.data().size());
    auto kept = std::make_shared<std::vector<std::vector<std::int64_t>>>();
    kept->reserve(static_cast<std::size_t>(sp.outer * sp.inner));
    for (std::int64_t o = 0; o < sp.outer; ++o)
        for (std::int64_t i = 0; i < sp.inner; ++i) {
            const double* series = x.data().data() + o * T * sp.inner + i;
            double* dst = out.data() + o * T * sp.inner + i;
            auto bins = detail::top_k_bins(series, T, sp.inner, top_k);
            detail::project_onto_bins(series, T, sp.inner, bins, dst, sp.inner);
            kept->push_back(std::move(bins));
        }
    Tensor y = detail::make_output(x.shape(), std::move(out), track);
    if (track) {
        auto xn = x.node(), yn = y.node();
        Tape::active()->record({yn}, [xn, yn, sp, T, kept] {
            auto& gx = xn->grad_buf();
            const auto& g = yn->grad;
            std::vector<double> proj(static_cast<std::size_t>(T));
            std::size_t idx = 0;
            for (std::int64_t o = 0; o < sp.outer; ++o)
                for (std::int64_t i = 0; i < sp.inner; ++i, ++idx) {
                    const double* gs = g.data() + o * T * sp.inner + i;
                    detail::project_onto_bins(gs, T, sp.inner, (*kept)[idx], proj.data(), 1);
                    double* dst = gx.data() + o * T * sp.inner + i;
                    for (std::int64_t n = 0; n < T; ++n) dst[n * sp.inner] += proj[n];
                }
        });
    }
    return y;
}

/// Season-trend split of a series along the time axis. Both methods return
/// components whose complement is computed as an exact elementwise
/// subtraction from the input: moving_average keeps the windowed mean as the
/// trend and seasonal = x - trend; dft_season_trend keeps the projected
/// seasonal and trend = x - seasonal.
inline std::pair<Tensor, Tensor> series_decomp(const Tensor& x, const DecompositionConfig& cfg,
                                               std::int64_t time_axis = 1) {
    cfg.validate();
    if (cfg.method == DecompositionMethod::moving_average) {
        Tensor trend = moving_average(x, time_axis, cfg.kernel);
        Tensor seasonal = sub(x, trend);
        return {seasonal, trend};
    }
    Tensor seasonal = dft_seasonal_component(x, time_axis, cfg.top_k_frequencies);
    Tensor trend = sub(x, seasonal);
    return {seasonal, trend};
}

/// Magnitudes of the real-input DFT, bins 0..floor(T/2). Shared helper for
/// the DFT decomposition diagnostics and the forecastability score. Under
/// the unnormalized forward convention, Parseval reads
/// sum x^2 = (1/T)(|X_0|^2 + 2*sum_paired |X_k|^2 + [T even] |X_{T/2}|^2).
inline std::vector<double> dft_magnitude_spectrum(const std::vector<double>& x) {
    if (x.size() < 2)
        throw std::invalid_argument("dft_magnitude_spectrum requires at least 2 samples, got " +
                                    std::to_string(x.size()));
    auto half = fft::real_half_spectrum(x);
    std::vector<double> mags(half.size());
    for (std::size_t k = 0; k < half.size(); ++k) mags[k] = std::abs(half[k]);
    return mags;
}

}  // namespace timemixer
