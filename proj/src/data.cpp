#include "cvpe/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "cvpe/errors.hpp"

namespace cvpe::data {

std::optional<std::size_t> MultivariateSeries::index_of(const std::string& name) const {
    auto it = std::find(channel_names.begin(), channel_names.end(), name);
    if (it == channel_names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - channel_names.begin());
}

MultivariateSeries MultivariateSeries::slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > length()) {
        throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside series of length " +
                         std::to_string(length()));
    }
    const std::size_t n = channels(), len = end - begin;
    Tensor out({n, len});
    for (std::size_t c = 0; c < n; ++c) {
        auto src = channel(c).subspan(begin, len);
        std::copy(src.begin(), src.end(), out.row(c).begin());
    }
    return MultivariateSeries{std::move(out), channel_names, frequency};
}

void MultivariateSeries::validate() const {
    if (values.rank() != 2) throw ShapeError("series values must be [channels, timesteps]");
    if (length() < 1) throw ShapeError("series must have at least one timestep");
    if (channel_names.size() != channels()) throw ShapeError("channel name count does not match channel count");
    if (!values.all_finite()) throw NumericError("data", "series contains non-finite values");
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

std::string trim(std::string s) {
    auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

// Minutes since an arbitrary epoch for "YYYY-MM-DD HH:MM[:SS]"; nullopt otherwise.
std::optional<long> parse_minutes(const std::string& stamp) {
    int y, mo, d, h, mi;
    if (std::sscanf(stamp.c_str(), "%d-%d-%d %d:%d", &y, &mo, &d, &h, &mi) != 5) return std::nullopt;
    // Days from civil date (proleptic Gregorian).
    y -= mo <= 2;
    const long era = (y >= 0 ? y : y - 399) / 400;
    const long yoe = y - era * 400;
    const long doy = (153 * (mo + (mo > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const long doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    const long days = era * 146097 + doe;
    return days * 1440 + h * 60 + mi;
}

}  // namespace

MultivariateSeries load_csv(const std::filesystem::path& path, const std::string& date_column) {
    std::ifstream in(path);
    if (!in) throw ParseError(ParseError::Kind::missing_file, "cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError(ParseError::Kind::bad_header, "empty file '" + path.string() + "'", 1);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
    auto header = split_fields(line);
    for (auto& h : header) h = trim(h);
    if (header.size() < 2) throw ParseError(ParseError::Kind::bad_header, "need a timestamp column and at least one channel", 1);
    if (!date_column.empty() && header[0] != date_column) {
        throw ParseError(ParseError::Kind::bad_header,
                         "first column is '" + header[0] + "', expected timestamp column '" + date_column + "'", 1, 1);
    }
    const std::size_t n = header.size() - 1;
    std::vector<std::vector<double>> columns(n);
    std::vector<std::string> stamps;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        auto fields = split_fields(line);
        if (fields.size() != header.size()) {
            throw ParseError(ParseError::Kind::ragged_row,
                             "row " + std::to_string(row) + " has " + std::to_string(fields.size()) + " fields, expected " +
                                 std::to_string(header.size()),
                             row);
        }
        stamps.push_back(trim(fields[0]));
        for (std::size_t c = 0; c < n; ++c) {
            const std::string cell = trim(fields[c + 1]);
            double value = 0.0;
            const char* first = cell.data();
            const char* last = cell.data() + cell.size();
            if (!cell.empty() && *first == '+') ++first;
            auto [ptr, ec] = std::from_chars(first, last, value);
            if (cell.empty() || ec != std::errc() || ptr != last) {
                throw ParseError(ParseError::Kind::non_numeric,
                                 "non-numeric value '" + cell + "' at row " + std::to_string(row) + ", column " +
                                     std::to_string(c + 2) + " ('" + header[c + 1] + "')",
                                 row, c + 2);
            }
            if (!std::isfinite(value)) {
                throw ParseError(ParseError::Kind::non_finite,
                                 "non-finite value at row " + std::to_string(row) + ", column " + std::to_string(c + 2) +
                                     " ('" + header[c + 1] + "')",
                                 row, c + 2);
            }
            columns[c].push_back(value);
        }
    }
    const std::size_t t = stamps.size();
    if (t == 0) throw ParseError(ParseError::Kind::bad_header, "no data rows in '" + path.string() + "'", 2);
    Tensor values({n, t});
    for (std::size_t c = 0; c < n; ++c) std::copy(columns[c].begin(), columns[c].end(), values.row(c).begin());
    MultivariateSeries series{std::move(values), std::vector<std::string>(header.begin() + 1, header.end()),
                              Frequency::hourly};
    if (t >= 2) {
        auto a = parse_minutes(stamps[0]);
        auto b = parse_minutes(stamps[1]);
        if (a && b) {
            const long step = *b - *a;
            if (step == 10) series.frequency = Frequency::min10;
            if (step == 15) series.frequency = Frequency::min15;
        }
    }
    return series;
}

std::array<std::size_t, 3> resolve_boundaries(const SplitSpec& spec, std::size_t length) {
    std::array<std::size_t, 3> b{};
    if (spec.protocol) {
        switch (*spec.protocol) {
            case SplitProtocol::ett_hourly: {
                constexpr std::size_t month = 30 * 24;
                b = {12 * month, 16 * month, 20 * month};
                break;
            }
            case SplitProtocol::ett_minute: {
                constexpr std::size_t month = 30 * 24 * 4;
                b = {12 * month, 16 * month, 20 * month};
                break;
            }
            case SplitProtocol::ratio_70_10_20: {
                const auto train = static_cast<std::size_t>(std::floor(0.7 * static_cast<double>(length)));
                const auto test = static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(length)));
                b = {train, length - test, length};
                break;
            }
        }
    } else {
        if (spec.boundaries.size() != 3) throw ConfigError("explicit split needs exactly three boundaries");
        std::copy(spec.boundaries.begin(), spec.boundaries.end(), b.begin());
    }
    if (!(0 < b[0] && b[0] < b[1] && b[1] < b[2])) {
        throw ConfigError("split boundaries must be strictly increasing and positive");
    }
    if (b[2] > length) {
        throw ConfigError("split needs " + std::to_string(b[2]) + " timesteps but the series has " +
                          std::to_string(length));
    }
    return b;
}

Split chronological_split(const MultivariateSeries& series, const SplitSpec& spec) {
    const auto b = resolve_boundaries(spec, series.length());
    return Split{series.slice(0, b[0]), series.slice(b[0], b[1]), series.slice(b[1], b[2]), b};
}

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
    if (x.size() < 2) throw std::invalid_argument("pearson: need at least two samples");
    // Streaming co-moments.
    double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double n = static_cast<double>(i + 1);
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (x[i] - mx);
        syy += dy * (y[i] - my);
        sxy += dx * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) throw std::domain_error("pearson: correlation undefined for a constant input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

Selection select_top_k(const MultivariateSeries& series, const MultivariateSeries& reference, const std::string& target,
                       std::size_t k) {
    const auto target_index = reference.index_of(target);
    if (!target_index) throw ConfigError("target channel '" + target + "' not found");
    if (k == 0 || k > series.channels()) {
        throw ConfigError("k = " + std::to_string(k) + " must be in [1, " + std::to_string(series.channels()) + "]");
    }
    if (reference.channel_names != series.channel_names) throw ShapeError("reference and series channels differ");

    Selection out;
    struct Ranked {
        std::size_t index;
        double r;
    };
    std::vector<Ranked> ranked;
    for (std::size_t c = 0; c < reference.channels(); ++c) {
        if (c == *target_index) continue;
        try {
            ranked.push_back({c, pearson(reference.channel(c), reference.channel(*target_index))});
        } catch (const std::domain_error&) {
            out.warnings.push_back("channel '" + reference.channel_names[c] + "' is constant; excluded from selection");
        }
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const Ranked& a, const Ranked& b) { return std::abs(a.r) > std::abs(b.r); });
    std::vector<Ranked> keep{{*target_index, 1.0}};
    for (std::size_t i = 0; i < ranked.size() && keep.size() < k; ++i) keep.push_back(ranked[i]);
    std::sort(keep.begin(), keep.end(), [](const Ranked& a, const Ranked& b) { return a.index < b.index; });

    Tensor values({keep.size(), series.length()});
    std::vector<std::string> names;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        auto src = series.channel(keep[i].index);
        std::copy(src.begin(), src.end(), values.row(i).begin());
        names.push_back(series.channel_names[keep[i].index]);
        out.selected.push_back({keep[i].index, names.back(), keep[i].r});
    }
    out.series = MultivariateSeries{std::move(values), std::move(names), series.frequency};
    return out;
}

Selection select_top_k(const MultivariateSeries& series, const std::string& target, std::size_t k) {
    return select_top_k(series, series, target, k);
}

MultivariateSeries generate_synthetic(const SyntheticSpec& spec) {
    if (spec.n_channels < 2) throw ConfigError("synthetic.n_channels must be >= 2");
    if (spec.length < 1) throw ConfigError("synthetic.length must be positive");
    if (spec.lag < 1 || spec.lag >= spec.length) throw ConfigError("synthetic.lag must satisfy 1 <= lag < length");
    if (!(spec.coupling >= 0.0 && spec.coupling <= 1.0)) throw ConfigError("synthetic.coupling must lie in [0, 1]");
    if (!(spec.noise_std >= 0.0)) throw ConfigError("synthetic.noise_std must be nonnegative");

    constexpr std::size_t burn_in = 200;
    const std::size_t n = spec.n_channels, drivers = n - 1;
    const std::size_t total = burn_in + spec.lag + spec.length;  // driver timeline, offset so t = 0 is index burn_in + lag
    const double omega = 2.0 * std::numbers::pi / kSyntheticPeriod;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<std::vector<double>> observed(drivers, std::vector<double>(total));
    for (std::size_t i = 0; i < drivers; ++i) {
        const double sign = (i % 2 == 0) ? 1.0 : -1.0;
        double ar = 0.0;
        for (std::size_t s = 0; s < total; ++s) {
            ar = kSyntheticArCoefficient * ar + normal(rng);
            const double t = static_cast<double>(s) - static_cast<double>(burn_in + spec.lag);
            observed[i][s] = ar + kSyntheticSeasonalAmplitude * sign * std::sin(omega * t) + spec.noise_std * normal(rng);
        }
    }
    Tensor values({n, spec.length});
    const std::size_t origin = burn_in + spec.lag;
    for (std::size_t i = 0; i < drivers; ++i) {
        for (std::size_t t = 0; t < spec.length; ++t) values.at(i, t) = observed[i][origin + t];
    }
    double own = 0.0;
    for (std::size_t s = 0; s < origin; ++s) own = kSyntheticArCoefficient * own + normal(rng);
    for (std::size_t t = 0; t < spec.length; ++t) {
        own = kSyntheticArCoefficient * own + normal(rng);
        const double own_value = own + kSyntheticSeasonalAmplitude * std::cos(omega * static_cast<double>(t));
        double driver_mean = 0.0;
        for (std::size_t i = 0; i < drivers; ++i) driver_mean += observed[i][origin + t - spec.lag];
        driver_mean /= static_cast<double>(drivers);
        values.at(n - 1, t) =
            spec.coupling * driver_mean + (1.0 - spec.coupling) * own_value + spec.noise_std * normal(rng);
    }
    std::vector<std::string> names;
    for (std::size_t i = 0; i < drivers; ++i) names.push_back("x" + std::to_string(i));
    names.emplace_back("OT");
    return MultivariateSeries{std::move(values), std::move(names), Frequency::hourly};
}

double mean_abs_target_correlation(const MultivariateSeries& series) {
    const std::size_t n = series.channels();
    if (n < 2) throw ShapeError("need at least one driver channel");
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) total += std::abs(pearson(series.channel(i), series.channel(n - 1)));
    return total / static_cast<double>(n - 1);
}

Standardizer Standardizer::fit(const MultivariateSeries& series) {
    Standardizer s;
    const double len = static_cast<double>(series.length());
    for (std::size_t c = 0; c < series.channels(); ++c) {
        auto ch = series.channel(c);
        double mean = 0.0;
        for (double v : ch) mean += v;
        mean /= len;
        double var = 0.0;
        for (double v : ch) var += (v - mean) * (v - mean);
        var /= len;
        s.mean.push_back(mean);
        s.std.push_back(var > 0.0 ? std::sqrt(var) : 1.0);
    }
    return s;
}

MultivariateSeries Standardizer::apply(const MultivariateSeries& series) const {
    if (series.channels() != mean.size()) throw ShapeError("standardizer channel count mismatch");
    MultivariateSeries out = series;
    for (std::size_t c = 0; c < series.channels(); ++c) {
        for (double& v : out.values.row(c)) v = (v - mean[c]) / std[c];
    }
    return out;
}

}  // namespace cvpe::data
