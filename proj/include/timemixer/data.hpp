#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "timemixer/rng.hpp"
#include "timemixer/tensor.hpp"

namespace timemixer {

struct WindowSpec {
    std::int64_t input_len = 96;  // P
    std::int64_t pred_len = 96;   // F
    std::int64_t stride = 1;

    void validate() const {
        if (input_len < 1 || pred_len < 1 || stride < 1)
            throw std::invalid_argument("window spec fields must be positive");
    }
};

enum class Split { train, val, test };

inline std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        default: return "test";
    }
}

/// Either fractional or explicit-row-count chronological split boundaries.
struct SplitSpec {
    bool use_counts = false;
    double train_fraction = 0.7;
    double val_fraction = 0.1;  // test takes the remainder
    std::int64_t train_rows = 0, val_rows = 0, test_rows = 0;

    static SplitSpec fractions(double train, double val) {
        if (train <= 0.0 || val < 0.0 || train + val >= 1.0)
            throw std::invalid_argument("split fractions must satisfy 0 < train, 0 <= val, "
                                        "train + val < 1");
        SplitSpec s;
        s.train_fraction = train;
        s.val_fraction = val;
        return s;
    }

    static SplitSpec counts(std::int64_t train, std::int64_t val, std::int64_t test) {
        if (train < 1 || val < 1 || test < 1)
            throw std::invalid_argument("split counts must be positive");
        SplitSpec s;
        s.use_counts = true;
        s.train_rows = train;
        s.val_rows = val;
        s.test_rows = test;
        return s;
    }
};

/// Aligned multivariate series with chronological split bounds and
/// per-channel standardization statistics fit on the training rows only.
class SeriesDataset {
public:
    SeriesDataset() = default;

    SeriesDataset(std::vector<double> values, std::int64_t rows, std::int64_t channels,
                  std::vector<std::string> timestamps = {},
                  std::vector<std::string> channel_names = {})
        : values_(std::move(values)),
          rows_(rows),
          channels_(channels),
          timestamps_(std::move(timestamps)),
          channel_names_(std::move(channel_names)) {
        if (rows_ < 1 || channels_ < 1)
            throw std::invalid_argument("dataset needs at least one row and one channel");
        if (static_cast<std::int64_t>(values_.size()) != rows_ * channels_)
            throw std::invalid_argument("dataset value buffer does not match rows x channels");
        if (!timestamps_.empty() && static_cast<std::int64_t>(timestamps_.size()) != rows_)
            throw std::invalid_argument("timestamp count does not match row count");
        if (channel_names_.empty())
            for (std::int64_t c = 0; c < channels_; ++c)
                channel_names_.push_back("ch" + std::to_string(c));
    }

    std::int64_t rows() const { return rows_; }
    std::int64_t channels() const { return channels_; }
    const std::vector<double>& values() const { return values_; }
    const std::vector<std::string>& timestamps() const { return timestamps_; }
    const std::vector<std::string>& channel_names() const { return channel_names_; }
    double value(std::int64_t row, std::int64_t channel) const {
        return values_[static_cast<std::size_t>(row * channels_ + channel)];
    }

    bool is_split() const { return val_end_ > 0; }
    std::int64_t train_end() const { return train_end_; }
    std::int64_t val_end() const { return val_end_; }
    const std::vector<double>& scaler_mean() const { return mean_; }
    const std::vector<double>& scaler_std() const { return std_; }
    bool scaler_clamped() const { return clamped_; }

    /// Chronological split followed by per-channel z-scoring. Statistics come
    /// from the training rows alone (population variance) and are applied to
    /// every row; a constant training channel is clamped to std = 1 with a
    /// warning instead of dividing by zero. With explicit counts the dataset
    /// is truncated to train+val+test rows so the bounds mirror published
    /// split tables exactly.
    void split_and_scale(const SplitSpec& spec, std::ostream& warn = std::cerr) {
        if (is_split()) throw std::logic_error("dataset is already split");
        if (spec.use_counts) {
            const std::int64_t want = spec.train_rows + spec.val_rows + spec.test_rows;
            if (want > rows_)
                throw std::invalid_argument("split counts need " + std::to_string(want) +
                                            " rows, dataset has " + std::to_string(rows_));
            if (want < rows_) {
                values_.resize(static_cast<std::size_t>(want * channels_));
                if (!timestamps_.empty()) timestamps_.resize(static_cast<std::size_t>(want));
                rows_ = want;
            }
            train_end_ = spec.train_rows;
            val_end_ = spec.train_rows + spec.val_rows;
        } else {
            train_end_ = static_cast<std::int64_t>(static_cast<double>(rows_) *
                                                   spec.train_fraction);
            val_end_ = train_end_ + static_cast<std::int64_t>(static_cast<double>(rows_) *
                                                              spec.val_fraction);
        }
        if (!(0 < train_end_ && train_end_ < val_end_ && val_end_ <= rows_))
            throw std::invalid_argument("split bounds (" + std::to_string(train_end_) + "," +
                                        std::to_string(val_end_) + ") invalid for " +
                                        std::to_string(rows_) + " rows");
        mean_.assign(static_cast<std::size_t>(channels_), 0.0);
        std_.assign(static_cast<std::size_t>(channels_), 0.0);
        for (std::int64_t r = 0; r < train_end_; ++r)
            for (std::int64_t c = 0; c < channels_; ++c)
                mean_[static_cast<std::size_t>(c)] += value(r, c);
        for (auto& m : mean_) m /= static_cast<double>(train_end_);
        for (std::int64_t r = 0; r < train_end_; ++r)
            for (std::int64_t c = 0; c < channels_; ++c) {
                const double d = value(r, c) - mean_[static_cast<std::size_t>(c)];
                std_[static_cast<std::size_t>(c)] += d * d;
            }
        for (std::int64_t c = 0; c < channels_; ++c) {
            auto& s = std_[static_cast<std::size_t>(c)];
            s = std::sqrt(s / static_cast<double>(train_end_));
            if (s < 1e-12) {
                warn << "warning: channel " << channel_names_[static_cast<std::size_t>(c)]
                     << " is constant over the training split; clamping std to 1\n";
                s = 1.0;
                clamped_ = true;
            }
        }
        for (std::int64_t r = 0; r < rows_; ++r)
            for (std::int64_t c = 0; c < channels_; ++c) {
                auto& v = values_[static_cast<std::size_t>(r * channels_ + c)];
                v = (v - mean_[static_cast<std::size_t>(c)]) / std_[static_cast<std::size_t>(c)];
            }
        scaled_ = true;
    }

    double inverse_scale(double v, std::int64_t channel) const {
        if (!scaled_) return v;
        return v * std_[static_cast<std::size_t>(channel)] +
               mean_[static_cast<std::size_t>(channel)];
    }

    std::pair<std::int64_t, std::int64_t> split_range(Split s) const {
        if (!is_split()) throw std::logic_error("dataset is not split");
        switch (s) {
            case Split::train: return {0, train_end_};
            case Split::val: return {train_end_, val_end_};
            default: return {val_end_, rows_};
        }
    }

    /// Number of (x, y) windows wholly contained in the split.
    std::int64_t window_count(const WindowSpec& ws, Split s) const {
        ws.validate();
        const auto [lo, hi] = split_range(s);
        const std::int64_t len = hi - lo;
        const std::int64_t span = ws.input_len + ws.pred_len;
        if (len < span) return 0;
        return (len - span) / ws.stride + 1;
    }

    /// One window as ([P,C], [F,C]) tensors; the target begins at offset P.
    std::pair<Tensor, Tensor> window(const WindowSpec& ws, Split s, std::int64_t index) const {
        const std::int64_t count = window_count(ws, s);
        if (index < 0 || index >= count)
            throw std::out_of_range("window index " + std::to_string(index) +
                                    " out of range, split has " + std::to_string(count) +
                                    " windows");
        const auto [lo, hi] = split_range(s);
        const std::int64_t start = lo + index * ws.stride;
        std::vector<double> x(static_cast<std::size_t>(ws.input_len * channels_));
        std::vector<double> y(static_cast<std::size_t>(ws.pred_len * channels_));
        std::copy_n(values_.begin() + start * channels_, x.size(), x.begin());
        std::copy_n(values_.begin() + (start + ws.input_len) * channels_, y.size(), y.begin());
        return {Tensor::from_data({ws.input_len, channels_}, std::move(x)),
                Tensor::from_data({ws.pred_len, channels_}, std::move(y))};
    }

    /// Batched windows as ([B,P,C], [B,F,C]); indices refer to window order
    /// within the split.
    std::pair<Tensor, Tensor> batch(const WindowSpec& ws, Split s,
                                    const std::vector<std::int64_t>& indices) const {
        const std::int64_t count = window_count(ws, s);
        const std::int64_t B = static_cast<std::int64_t>(indices.size());
        if (B == 0) throw std::invalid_argument("empty batch");
        const auto [lo, hi] = split_range(s);
        std::vector<double> x(static_cast<std::size_t>(B * ws.input_len * channels_));
        std::vector<double> y(static_cast<std::size_t>(B * ws.pred_len * channels_));
        for (std::int64_t b = 0; b < B; ++b) {
            const std::int64_t index = indices[static_cast<std::size_t>(b)];
            if (index < 0 || index >= count)
                throw std::out_of_range("window index " + std::to_string(index) + " out of range");
            const std::int64_t start = lo + index * ws.stride;
            std::copy_n(values_.begin() + start * channels_,
                        static_cast<std::size_t>(ws.input_len * channels_),
                        x.begin() + b * ws.input_len * channels_);
            std::copy_n(values_.begin() + (start + ws.input_len) * channels_,
                        static_cast<std::size_t>(ws.pred_len * channels_),
                        y.begin() + b * ws.pred_len * channels_);
        }
        return {Tensor::from_data({B, ws.input_len, channels_}, std::move(x)),
                Tensor::from_data({B, ws.pred_len, channels_}, std::move(y))};
    }

private:
    std::vector<double> values_;  // rows x channels, row-major
    std::int64_t rows_ = 0;
    std::int64_t channels_ = 0;
    std::vector<std::string> timestamps_;
    std::vector<std::string> channel_names_;
    std::int64_t train_end_ = 0;
    std::int64_t val_end_ = 0;
    std::vector<double> mean_, std_;
    bool scaled_ = false;
    bool clamped_ = false;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    for (auto& f : fields) {
        const auto b = f.find_first_not_of(" \t");
        const auto e = f.find_last_not_of(" \t");
        f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
    }
    return fields;
}

inline std::optional<double> parse_double(const std::string& s) {
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    const auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc() || res.ptr != end) return std::nullopt;
    return v;
}

}  // namespace detail

/// CSV ingestion: UTF-8, header row required, comma delimiter. If the first
/// column of the first data row does not parse as a number it is treated as
/// a timestamp column. Any unparseable or non-finite numeric cell and any
/// ragged row is a hard error naming the row and column (1-based, header is
/// row 1).
inline SeriesDataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open data file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty file: " + path);
    auto header = detail::split_csv_line(line);
    if (header.empty()) throw std::runtime_error("empty header row in " + path);

    std::vector<double> values;
    std::vector<std::string> timestamps;
    bool has_timestamp = false;
    bool first_data_row = true;
    std::int64_t row_number = 1;  // header
    std::size_t expected_fields = header.size();

    while (std::getline(in, line)) {
        ++row_number;
        if (line.empty() && in.eof()) break;
        auto fields = detail::split_csv_line(line);
        if (first_data_row) {
            has_timestamp = !detail::parse_double(fields[0]).has_value();
            first_data_row = false;
        }
        if (fields.size() != expected_fields)
            throw std::runtime_error(path + ": row " + std::to_string(row_number) + " has " +
                                     std::to_string(fields.size()) + " fields, expected " +
                                     std::to_string(expected_fields));
        const std::size_t first_value = has_timestamp ? 1 : 0;
        if (has_timestamp) timestamps.push_back(fields[0]);
        for (std::size_t c = first_value; c < fields.size(); ++c) {
            const auto v = detail::parse_double(fields[c]);
            if (!v.has_value() || !std::isfinite(*v))
                throw std::runtime_error(path + ": cannot parse numeric value at row " +
                                         std::to_string(row_number) + ", column " +
                                         std::to_string(c + 1) + " ('" + fields[c] + "')");
            values.push_back(*v);
        }
    }
    const std::int64_t channels =
        static_cast<std::int64_t>(expected_fields - (has_timestamp ? 1 : 0));
    if (channels < 1) throw std::runtime_error(path + ": no numeric columns");
    if (values.empty()) throw std::runtime_error(path + ": no data rows");
    const std::int64_t rows = static_cast<std::int64_t>(values.size()) / channels;
    std::vector<std::string> names(header.begin() + (has_timestamp ? 1 : 0), header.end());
    return SeriesDataset(std::move(values), rows, channels, std::move(timestamps),
                         std::move(names));
}

struct SyntheticSpec {
    std::int64_t rows = 2000;
    std::int64_t channels = 2;
    std::vector<std::int64_t> periods{24, 96};
    double trend_slope = 0.0;
    double noise_sigma = 0.0;
    std::uint64_t seed = 1;
};

/// Sum of unit-amplitude sinusoids at the given integer periods plus linear
/// trend plus seeded Gaussian noise; each (channel, period) pair gets a
/// seeded phase offset. Period arguments are phase-reduced so a noiseless
/// single-period series is exactly periodic.
inline SeriesDataset synth_multiscale(const SyntheticSpec& spec) {
    if (spec.rows < 1 || spec.channels < 1)
        throw std::invalid_argument("synthetic spec needs positive rows and channels");
    for (auto p : spec.periods)
        if (p < 2) throw std::invalid_argument("synthetic periods must be >= 2");
    Rng phase_rng = Rng(spec.seed).fork(1);
    Rng noise_rng = Rng(spec.seed).fork(2);
    std::vector<std::vector<double>> phases(static_cast<std::size_t>(spec.channels));
    for (auto& per_channel : phases)
        for (std::size_t j = 0; j < spec.periods.size(); ++j)
            per_channel.push_back(phase_rng.uniform());
    std::vector<double> values(static_cast<std::size_t>(spec.rows * spec.channels));
    for (std::int64_t r = 0; r < spec.rows; ++r)
        for (std::int64_t c = 0; c < spec.channels; ++c) {
            double v = spec.trend_slope * static_cast<double>(r);
            for (std::size_t j = 0; j < spec.periods.size(); ++j) {
                const auto p = static_cast<double>(spec.periods[j]);
                const double frac = std::fmod(static_cast<double>(r), p) / p;
                v += std::sin(2.0 * std::numbers::pi *
                              (frac + phases[static_cast<std::size_t>(c)][j]));
            }
            if (spec.noise_sigma > 0.0) v += spec.noise_sigma * noise_rng.normal();
            values[static_cast<std::size_t>(r * spec.channels + c)] = v;
        }
    return SeriesDataset(std::move(values), spec.rows, spec.channels);
}

}  // namespace timemixer
