#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "timemixer/decomposition.hpp"

namespace timemixer {

struct MetricsConfig {
    std::int64_t seasonal_period = 1;  // s in the scaled-error denominator
    std::optional<double> naive2_smape;
    std::optional<double> naive2_mase;
};

namespace detail {

inline void check_metric_shapes(std::span<const double> y_true, std::span<const double> y_pred) {
    if (y_true.size() != y_pred.size())
        throw std::invalid_argument("metric inputs differ in length: " +
                                    std::to_string(y_true.size()) + " vs " +
                                    std::to_string(y_pred.size()));
    if (y_true.empty()) throw std::invalid_argument("metric inputs are empty");
}

}  // namespace detail

inline double mse(std::span<const double> y_true, std::span<const double> y_pred) {
    detail::check_metric_shapes(y_true, y_pred);
    double acc = 0.0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const double d = y_true[i] - y_pred[i];
        acc += d * d;
    }
    return acc / static_cast<double>(y_true.size());
}

inline double mae(std::span<const double> y_true, std::span<const double> y_pred) {
    detail::check_metric_shapes(y_true, y_pred);
    double acc = 0.0;
    for (std::size_t i = 0; i < y_true.size(); ++i) acc += std::abs(y_true[i] - y_pred[i]);
    return acc / static_cast<double>(y_true.size());
}

inline double rmse(std::span<const double> y_true, std::span<const double> y_pred) {
    return std::sqrt(mse(y_true, y_pred));
}

/// Mean absolute percentage error (factor 100). Terms with a zero target are
/// skipped; the mean runs over the remaining terms and `skipped`, when
/// provided, reports how many were dropped. All-zero targets are an error.
inline double mape(std::span<const double> y_true, std::span<const double> y_pred,
                   std::size_t* skipped = nullptr) {
    detail::check_metric_shapes(y_true, y_pred);
    double acc = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        if (y_true[i] == 0.0) continue;
        acc += std::abs(y_true[i] - y_pred[i]) / std::abs(y_true[i]);
        ++used;
    }
    if (skipped != nullptr) *skipped = y_true.size() - used;
    if (used == 0) throw std::invalid_argument("MAPE undefined: every target is zero");
    return 100.0 * acc / static_cast<double>(used);
}

/// Symmetric MAPE (factor 200) with a 1e-8 denominator guard so that terms
/// with target == prediction == 0 contribute exactly zero.
inline double smape(std::span<const double> y_true, std::span<const double> y_pred) {
    detail::check_metric_shapes(y_true, y_pred);
    double acc = 0.0;
    for (std::size_t i = 0; i < y_true.size(); ++i)
        acc += std::abs(y_true[i] - y_pred[i]) /
               (std::abs(y_true[i]) + std::abs(y_pred[i]) + 1e-8);
    return 200.0 * acc / static_cast<double>(y_true.size());
}

/// Mean absolute scaled error over the forecast horizon:
/// (1/F) sum |X - Xhat| / ((1/(F-s)) sum_{j=s+1..F} |X_j - X_{j-s}|).
inline double mase(std::span<const double> y_true, std::span<const double> y_pred,
                   std::int64_t seasonal_period) {
    detail::check_metric_shapes(y_true, y_pred);
    const auto F = static_cast<std::int64_t>(y_true.size());
    if (seasonal_period < 1 || seasonal_period >= F)
        throw std::invalid_argument("MASE needs 1 <= s < F, got s = " +
                                    std::to_string(seasonal_period) + " with F = " +
                                    std::to_string(F));
    double denom = 0.0;
    for (std::int64_t j = seasonal_period; j < F; ++j)
        denom += std::abs(y_true[static_cast<std::size_t>(j)] -
                          y_true[static_cast<std::size_t>(j - seasonal_period)]);
    denom /= static_cast<double>(F - seasonal_period);
    if (denom == 0.0)
        throw std::invalid_argument(
            "MASE undefined: the target repeats its seasonal pattern exactly "
            "(zero scaled-error denominator)");
    double num = 0.0;
    for (std::int64_t i = 0; i < F; ++i)
        num += std::abs(y_true[static_cast<std::size_t>(i)] - y_pred[static_cast<std::size_t>(i)]);
    return num / static_cast<double>(F) / denom;
}

inline double owa(double smape_value, double mase_value, const MetricsConfig& cfg) {
    if (!cfg.naive2_smape.has_value() || !cfg.naive2_mase.has_value())
        throw std::invalid_argument(
            "OWA needs Naive2 reference scores; supply naive2_smape and naive2_mase");
    if (*cfg.naive2_smape <= 0.0 || *cfg.naive2_mase <= 0.0)
        throw std::invalid_argument("OWA Naive2 references must be positive");
    return 0.5 * (smape_value / *cfg.naive2_smape + mase_value / *cfg.naive2_mase);
}

/// One minus the normalized entropy of the power spectrum over bins
/// 1..floor(T/2) (bin 0 excluded, so the score ignores constant offsets).
/// Normalizing the entropy by ln(bin count) pins the value into [0,1]:
/// a single-bin spectrum scores 1, a flat spectrum scores 0. A zero-energy
/// series is defined as 0 with a warning.
inline double forecastability(const std::vector<double>& series, std::ostream& warn = std::cerr) {
    if (series.size() < 4)
        throw std::invalid_argument("forecastability needs at least 4 samples, got " +
                                    std::to_string(series.size()));
    const auto mags = dft_magnitude_spectrum(series);
    const std::size_t bins = series.size() / 2;  // indices 1..bins of the half spectrum
    std::vector<double> power(bins);
    double total = 0.0;
    for (std::size_t k = 1; k <= bins; ++k) {
        power[k - 1] = mags[k] * mags[k];
        total += power[k - 1];
    }
    if (total <= 0.0) {
        warn << "warning: zero spectral energy outside bin 0; forecastability defined as 0\n";
        return 0.0;
    }
    double entropy = 0.0;
    for (double p : power) {
        const double q = p / total;
        if (q > 0.0) entropy -= q * std::log(q);
    }
    return 1.0 - entropy / std::log(static_cast<double>(bins));
}

/// Named metric values with optional per-seed dispersion, serialized with
/// stable key names.
struct MetricsReport {
    std::map<std::string, double> values;
    std::map<std::string, double> std_dev;  // filled by aggregation

    static constexpr const char* canonical_order[] = {"mse",  "mae",  "rmse", "mape",
                                                      "smape", "mase", "owa",  "forecastability"};

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        auto emit = [&](const std::string& key) {
            if (auto it = values.find(key); it != values.end()) {
                if (auto sd = std_dev.find(key); sd != std_dev.end()) {
                    j[key] = {{"mean", it->second}, {"std", sd->second}};
                } else {
                    j[key] = it->second;
                }
            }
        };
        for (const char* key : canonical_order) emit(key);
        for (const auto& [key, value] : values)
            if (!j.contains(key)) emit(key);
        return j;
    }

    /// Per-metric mean and sample standard deviation across runs (std is 0
    /// for a single run).
    static MetricsReport aggregate(const std::vector<MetricsReport>& runs) {
        if (runs.empty()) throw std::invalid_argument("nothing to aggregate");
        MetricsReport out;
        for (const auto& [key, first_value] : runs.front().values) {
            double sum = 0.0;
            for (const auto& r : runs) sum += r.values.at(key);
            const double m = sum / static_cast<double>(runs.size());
            double var = 0.0;
            for (const auto& r : runs) {
                const double d = r.values.at(key) - m;
                var += d * d;
            }
            out.values[key] = m;
            out.std_dev[key] =
                runs.size() > 1 ? std::sqrt(var / static_cast<double>(runs.size() - 1)) : 0.0;
        }
        return out;
    }
};

}  // namespace timemixer
