#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvpe/tensor.hpp"

namespace cvpe::data {

enum class Frequency { min10, min15, hourly };

/// Aligned channels, values shaped [channels, timesteps].
struct MultivariateSeries {
    Tensor values;
    std::vector<std::string> channel_names;
    Frequency frequency = Frequency::hourly;

    std::size_t channels() const { return values.rank() == 2 ? values.dim(0) : 0; }
    std::size_t length() const { return values.rank() == 2 ? values.dim(1) : 0; }
    std::span<const double> channel(std::size_t i) const { return values.row(i); }
    std::optional<std::size_t> index_of(const std::string& name) const;

    /// Columns [begin, end) of every channel.
    MultivariateSeries slice(std::size_t begin, std::size_t end) const;
    /// Throws if the invariants (equal lengths, length >= 1, finite values) fail.
    void validate() const;
};

enum class SplitProtocol { ett_hourly, ett_minute, ratio_70_10_20 };

/// Either a named protocol or explicit end indices of the train and val
/// segments plus the end of the test segment.
struct SplitSpec {
    std::optional<SplitProtocol> protocol;
    std::vector<std::size_t> boundaries;

    static SplitSpec named(SplitProtocol p) { return SplitSpec{p, {}}; }
    static SplitSpec explicit_bounds(std::size_t train_end, std::size_t val_end, std::size_t test_end) {
        return SplitSpec{std::nullopt, {train_end, val_end, test_end}};
    }
};

/// Segment end points [train_end, val_end, test_end] resolved for a series length.
std::array<std::size_t, 3> resolve_boundaries(const SplitSpec& spec, std::size_t length);

struct Split {
    MultivariateSeries train, val, test;
    std::array<std::size_t, 3> boundaries{};
};

struct SyntheticSpec {
    std::size_t n_channels = 8;
    std::size_t length = 2000;
    double coupling = 0.0;
    std::size_t lag = 4;
    double noise_std = 0.1;
    std::uint64_t seed = 0;
};

MultivariateSeries load_csv(const std::filesystem::path& path, const std::string& date_column = "date");

Split chronological_split(const MultivariateSeries& series, const SplitSpec& spec);

/// Pearson correlation. Throws std::domain_error for a constant input.
double pearson(std::span<const double> x, std::span<const double> y);

struct SelectionEntry {
    std::size_t index;
    std::string name;
    double correlation;  // signed Pearson r against the target
};

struct Selection {
    MultivariateSeries series;
    std::vector<SelectionEntry> selected;
    /// Constant channels skipped during ranking.
    std::vector<std::string> warnings;
};

/// Keeps the k channels with the largest |r| against `target`, measured on
/// `reference` (normally the training segment) and applied to `series`.
Selection select_top_k(const MultivariateSeries& series, const MultivariateSeries& reference, const std::string& target,
                       std::size_t k);
Selection select_top_k(const MultivariateSeries& series, const std::string& target, std::size_t k);

/// Synthetic multivariate series; the last channel ("OT") is the target.
///
/// Drivers i = 0..N-2 follow  d_i[t] = a_i[t] + A * s_i * sin(2 pi t / 24),
/// a_i[t] = 0.9 a_i[t-1] + e_i[t], e_i ~ N(0, 1), with s_i = +1 for even i and
/// -1 for odd i so the seasonal terms cancel in the driver mean. The target is
///   y[t] = c * mean_i d_i[t - lag] + (1 - c) * o[t] + noise_std * z[t],
/// where o[t] is an independent AR(1) with a quadrature seasonal term
/// A * cos(2 pi t / 24). Drivers also carry noise_std observation noise.
MultivariateSeries generate_synthetic(const SyntheticSpec& spec);

inline constexpr double kSyntheticArCoefficient = 0.9;
inline constexpr double kSyntheticPeriod = 24.0;
inline constexpr double kSyntheticSeasonalAmplitude = 10.0;

/// Mean absolute Pearson correlation between the target (last channel) and each driver.
double mean_abs_target_correlation(const MultivariateSeries& series);

/// Per-channel z-scoring fitted on one segment and applied to others.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> std;

    static Standardizer fit(const MultivariateSeries& series);
    MultivariateSeries apply(const MultivariateSeries& series) const;
};

}  // namespace cvpe::data
