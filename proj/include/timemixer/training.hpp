#pragma once

#include <chrono>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "timemixer/data.hpp"
#include "timemixer/metrics.hpp"
#include "timemixer/model.hpp"

namespace timemixer {

enum class LossKind { mse, smape };
enum class LrDecay { none, halve_per_epoch };

inline std::string to_string(LossKind k) { return k == LossKind::mse ? "mse" : "smape"; }
inline std::string to_string(LrDecay d) {
    return d == LrDecay::none ? "none" : "halve_per_epoch";
}

struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t batch_size = 32;
    std::int64_t epochs = 10;
    LossKind loss = LossKind::mse;
    std::uint64_t seed = 1;
    bool deterministic = true;
    LrDecay lr_decay = LrDecay::none;
    double grad_clip_norm = 0.0;  // 0 disables clipping
    bool keep_best_val = false;   // default: final-epoch model

    void validate() const {
        if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be positive");
        if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
            throw std::invalid_argument("adam betas must lie in (0,1)");
        if (epsilon <= 0.0) throw std::invalid_argument("epsilon must be positive");
        if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
        if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
        if (grad_clip_norm < 0.0) throw std::invalid_argument("grad_clip_norm must be >= 0");
    }
};

/// Mean of squared errors over all elements.
inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    Tensor d = sub(pred, target);
    return mean(mul(d, d));
}

/// (200/N) sum |t - p| / (|t| + |p| + 1e-8); the guard defines 0/0 terms as
/// exactly zero.
inline Tensor smape_loss(const Tensor& pred, const Tensor& target) {
    Tensor diff = abs(sub(pred, target));
    Tensor denom = add_scalar(add(abs(target), abs(pred)), 1e-8);
    return mul_scalar(mean(div(diff, denom)), 200.0);
}

inline Tensor compute_loss(LossKind kind, const Tensor& pred, const Tensor& target) {
    return kind == LossKind::mse ? mse_loss(pred, target) : smape_loss(pred, target);
}

/// Adam with bias correction. Parameters without a gradient buffer are left
/// untouched by step().
class Adam {
public:
    Adam(std::vector<Tensor> params, const TrainConfig& cfg)
        : params_(std::move(params)),
          beta1_(cfg.beta1),
          beta2_(cfg.beta2),
          epsilon_(cfg.epsilon),
          lr_(cfg.learning_rate) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].data().size(), 0.0);
            v_[i].assign(params_[i].data().size(), 0.0);
        }
    }

    void set_learning_rate(double lr) { lr_ = lr; }
    double learning_rate() const { return lr_; }
    std::int64_t steps() const { return t_; }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (!params_[i].has_grad()) continue;
            const auto& g = params_[i].grad();
            auto& value = params_[i].mutable_data();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < value.size(); ++j) {
                m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
                v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
                const double m_hat = m[j] / bc1;
                const double v_hat = v[j] / bc2;
                value[j] -= lr_ * m_hat / (std::sqrt(v_hat) + epsilon_);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, epsilon_, lr_;
    std::int64_t t_ = 0;
};

/// Scale gradients so their global L2 norm does not exceed max_norm.
inline void clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
    double total = 0.0;
    for (const auto& p : params) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) total += g * g;
    }
    total = std::sqrt(total);
    if (total <= max_norm || total == 0.0) return;
    const double scale = max_norm / total;
    for (const auto& p : params) {
        if (!p.has_grad()) continue;
        auto node = p.node();
        for (auto& g : node->grad) g *= scale;
    }
}

struct EpochStats {
    std::int64_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    double wall_seconds = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
};

namespace detail {

inline double eval_split_loss(const TimeMixerModel& model, const SeriesDataset& ds,
                              const WindowSpec& ws, Split split, LossKind kind,
                              std::int64_t batch_size) {
    const std::int64_t n = ds.window_count(ws, split);
    if (n == 0) return std::numeric_limits<double>::quiet_NaN();
    double acc = 0.0;
    for (std::int64_t start = 0; start < n; start += batch_size) {
        const std::int64_t count = std::min(batch_size, n - start);
        std::vector<std::int64_t> idx(static_cast<std::size_t>(count));
        for (std::int64_t i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = start + i;
        auto [x, y] = ds.batch(ws, split, idx);
        Tensor loss = compute_loss(kind, model.forward(x), y);
        acc += loss.item() * static_cast<double>(count);
    }
    return acc / static_cast<double>(n);
}

}  // namespace detail

/// Full training run: `epochs` passes over shuffled training windows with
/// the shuffle order a pure function of (seed, epoch). Records per-epoch
/// train loss, validation loss and wall-clock seconds. A non-finite batch
/// loss aborts with a diagnostic naming the epoch and batch index. With
/// epochs == 0 the parameters stay at initialization.
inline TrainResult train(TimeMixerModel& model, const SeriesDataset& ds, const WindowSpec& ws,
                         const TrainConfig& cfg) {
    cfg.validate();
    ws.validate();
    if (ws.input_len != model.config().input_len || ws.pred_len != model.config().pred_len)
        throw std::invalid_argument("window spec does not match the model configuration");
    const std::int64_t n_train = ds.window_count(ws, Split::train);
    if (n_train == 0)
        throw std::invalid_argument("empty training split: no window of length P+F fits");

    auto params = model.parameters();
    Adam optimizer(params, cfg);
    Rng dropout_stream = Rng(cfg.seed).fork(0xd0);

    TrainResult result;
    std::vector<double> best_params;
    double best_val = std::numeric_limits<double>::infinity();

    std::vector<std::int64_t> order(static_cast<std::size_t>(n_train));
    for (std::int64_t i = 0; i < n_train; ++i) order[static_cast<std::size_t>(i)] = i;

    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double lr = cfg.learning_rate;
        if (cfg.lr_decay == LrDecay::halve_per_epoch)
            lr *= std::pow(0.5, static_cast<double>(epoch));
        optimizer.set_learning_rate(lr);

        Rng shuffle_rng = Rng(cfg.seed).fork(0x5f + static_cast<std::uint64_t>(epoch));
        for (std::int64_t i = 0; i < n_train; ++i) order[static_cast<std::size_t>(i)] = i;
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        std::int64_t batch_index = 0;
        for (std::int64_t start = 0; start < n_train; start += cfg.batch_size, ++batch_index) {
            const std::int64_t count = std::min(cfg.batch_size, n_train - start);
            std::vector<std::int64_t> idx(order.begin() + start, order.begin() + start + count);
            auto [x, y] = ds.batch(ws, Split::train, idx);

            Tape tape;
            double loss_value = 0.0;
            {
                Tape::Scope scope(tape);
                ForwardContext ctx{true, &dropout_stream};
                Tensor loss = compute_loss(cfg.loss, model.forward(x, ctx), y);
                loss_value = loss.item();
                if (!std::isfinite(loss_value))
                    throw NumericError("non-finite training loss at epoch " +
                                       std::to_string(epoch) + ", batch " +
                                       std::to_string(batch_index));
                tape.backward(loss);
            }
            if (cfg.grad_clip_norm > 0.0) clip_grad_norm(params, cfg.grad_clip_norm);
            optimizer.step();
            optimizer.zero_grad();
            epoch_loss += loss_value * static_cast<double>(count);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = epoch_loss / static_cast<double>(n_train);
        stats.val_loss =
            detail::eval_split_loss(model, ds, ws, Split::val, cfg.loss, cfg.batch_size);
        stats.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back(stats);

        if (cfg.keep_best_val && std::isfinite(stats.val_loss) && stats.val_loss < best_val) {
            best_val = stats.val_loss;
            best_params.clear();
            for (const auto& p : params)
                best_params.insert(best_params.end(), p.data().begin(), p.data().end());
        }
    }

    if (cfg.keep_best_val && !best_params.empty()) {
        std::size_t offset = 0;
        for (auto& p : params) {
            auto& value = p.mutable_data();
            std::copy_n(best_params.begin() + static_cast<std::ptrdiff_t>(offset), value.size(),
                        value.begin());
            offset += value.size();
        }
    }
    return result;
}

/// Test-split (or any split) metrics over every window, computed in the
/// dataset's scaled space. MASE is computed per (window, channel) and
/// averaged; windows whose seasonal-naive denominator is zero are skipped
/// and counted. OWA is included when the Naive2 references are supplied.
inline MetricsReport evaluate_model(const TimeMixerModel& model, const SeriesDataset& ds,
                                    const WindowSpec& ws, Split split,
                                    const MetricsConfig& mcfg = {},
                                    std::int64_t batch_size = 256) {
    const std::int64_t n = ds.window_count(ws, split);
    if (n == 0)
        throw std::invalid_argument("no evaluation windows in split '" + to_string(split) + "'");
    const std::int64_t F = ws.pred_len;
    const std::int64_t C = model.config().channels;

    double se_sum = 0.0, ae_sum = 0.0;
    std::int64_t elements = 0;
    double smape_sum = 0.0;
    double mape_sum = 0.0;
    std::int64_t mape_used = 0;
    double mase_sum = 0.0;
    std::int64_t mase_used = 0, mase_skipped = 0;
    const std::int64_t s = mcfg.seasonal_period;

    for (std::int64_t start = 0; start < n; start += batch_size) {
        const std::int64_t count = std::min(batch_size, n - start);
        std::vector<std::int64_t> idx(static_cast<std::size_t>(count));
        for (std::int64_t i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = start + i;
        auto [x, y] = ds.batch(ws, split, idx);
        Tensor pred = model.forward(x);
        const auto& p = pred.data();
        const auto& t = y.data();
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double d = t[i] - p[i];
            se_sum += d * d;
            ae_sum += std::abs(d);
            smape_sum += std::abs(d) / (std::abs(t[i]) + std::abs(p[i]) + 1e-8);
            if (t[i] != 0.0) {
                mape_sum += std::abs(d) / std::abs(t[i]);
                ++mape_used;
            }
        }
        elements += static_cast<std::int64_t>(t.size());
        if (s >= 1 && s < F) {
            for (std::int64_t b = 0; b < count; ++b)
                for (std::int64_t c = 0; c < C; ++c) {
                    double denom = 0.0;
                    for (std::int64_t j = s; j < F; ++j)
                        denom += std::abs(t[(b * F + j) * C + c] - t[(b * F + j - s) * C + c]);
                    denom /= static_cast<double>(F - s);
                    if (denom == 0.0) {
                        ++mase_skipped;
                        continue;
                    }
                    double num = 0.0;
                    for (std::int64_t j = 0; j < F; ++j)
                        num += std::abs(t[(b * F + j) * C + c] - p[(b * F + j) * C + c]);
                    mase_sum += num / static_cast<double>(F) / denom;
                    ++mase_used;
                }
        }
    }

    MetricsReport report;
    const double mse_v = se_sum / static_cast<double>(elements);
    report.values["mse"] = mse_v;
    report.values["mae"] = ae_sum / static_cast<double>(elements);
    report.values["rmse"] = std::sqrt(mse_v);
    report.values["smape"] = 200.0 * smape_sum / static_cast<double>(elements);
    if (mape_used > 0) report.values["mape"] = 100.0 * mape_sum / static_cast<double>(mape_used);
    if (mase_used > 0) {
        report.values["mase"] = mase_sum / static_cast<double>(mase_used);
        if (mase_skipped > 0)
            report.values["mase_skipped_windows"] = static_cast<double>(mase_skipped);
    }
    if (mcfg.naive2_smape.has_value() && mcfg.naive2_mase.has_value() && mase_used > 0)
        report.values["owa"] = owa(report.values["smape"], report.values["mase"], mcfg);
    return report;
}

/// Mean and sample standard deviation of metrics across seeded runs.
template <typename RunFn>
MetricsReport multi_seed_run(const std::vector<std::uint64_t>& seeds, RunFn&& run) {
    if (seeds.empty()) throw std::invalid_argument("multi_seed_run needs at least one seed");
    std::vector<MetricsReport> reports;
    reports.reserve(seeds.size());
    for (const auto seed : seeds) reports.push_back(run(seed));
    return MetricsReport::aggregate(reports);
}

}  // namespace timemixer
