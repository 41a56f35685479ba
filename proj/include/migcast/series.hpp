#pragma once

// Monthly per-province migration series: CSV ingestion, windowing, scaling,
// and a seeded synthetic generator.
//
// Internally every value is in hundreds of persons per month. Raw person
// counts only exist at the CSV boundary.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "migcast/config.hpp"
#include "migcast/errors.hpp"

namespace migcast {

enum class Province { BC, AB, SK, MB, ON, QC, NL, NB, PE, NS };
inline constexpr std::size_t kProvinceCount = 10;

enum class Stream { Sponsor, Refugee, Economic, Total };
inline constexpr std::size_t kStreamCount = 4;
inline constexpr std::size_t kComponentCount = 3;  // Sponsor, Refugee, Economic

inline constexpr std::array<Province, kProvinceCount> kProvinces = {
    Province::BC, Province::AB, Province::SK, Province::MB, Province::ON,
    Province::QC, Province::NL, Province::NB, Province::PE, Province::NS};
inline constexpr std::array<Stream, kStreamCount> kStreams = {
    Stream::Sponsor, Stream::Refugee, Stream::Economic, Stream::Total};
inline constexpr std::array<Stream, kComponentCount> kComponents = {
    Stream::Sponsor, Stream::Refugee, Stream::Economic};

inline constexpr std::array<std::string_view, kProvinceCount> kProvinceCodes = {
    "BC", "AB", "SK", "MB", "ON", "QC", "NL", "NB", "PE", "NS"};
inline constexpr std::array<std::string_view, kProvinceCount> kProvinceNames = {
    "British Columbia", "Alberta", "Saskatchewan", "Manitoba", "Ontario",
    "Quebec", "Newfoundland", "New Brunswick", "Prince Edward Island", "Nova Scotia"};
inline constexpr std::array<std::string_view, kStreamCount> kStreamNames = {
    "Sponsor", "Refugee", "Economic", "Total"};

inline std::size_t index_of(Province p) { return static_cast<std::size_t>(p); }
inline std::size_t index_of(Stream s) { return static_cast<std::size_t>(s); }
inline std::string_view code(Province p) { return kProvinceCodes[index_of(p)]; }
inline std::string_view full_name(Province p) { return kProvinceNames[index_of(p)]; }
inline std::string_view name(Stream s) { return kStreamNames[index_of(s)]; }

inline std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

/// Accepts two-letter codes or full names, case-insensitively.
inline std::optional<Province> parse_province(std::string_view text) {
    const auto t = lower(trim(text));
    for (std::size_t i = 0; i < kProvinceCount; ++i) {
        if (t == lower(kProvinceCodes[i]) || t == lower(kProvinceNames[i])) return kProvinces[i];
    }
    return std::nullopt;
}

inline std::optional<Stream> parse_stream(std::string_view text) {
    const auto t = lower(trim(text));
    for (std::size_t i = 0; i < kStreamCount; ++i) {
        if (t == lower(kStreamNames[i])) return kStreams[i];
    }
    return std::nullopt;
}

struct YearMonth {
    int year = 2015;
    int month = 1;  // 1..12

    /// Months since year 0; differences between two YearMonths are month counts.
    int ordinal() const { return year * 12 + (month - 1); }
    static YearMonth from_ordinal(int ord) { return {ord / 12, ord % 12 + 1}; }
    YearMonth plus(int months) const { return from_ordinal(ordinal() + months); }

    friend auto operator<=>(const YearMonth& a, const YearMonth& b) { return a.ordinal() <=> b.ordinal(); }
    friend bool operator==(const YearMonth& a, const YearMonth& b) = default;

    std::string str() const {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04d-%02d", year, month);
        return buf;
    }

    static std::optional<YearMonth> parse(std::string_view s) {
        s = trim(s);
        if (s.size() != 7 || s[4] != '-') return std::nullopt;
        int y = 0, m = 0;
        auto r1 = std::from_chars(s.data(), s.data() + 4, y);
        auto r2 = std::from_chars(s.data() + 5, s.data() + 7, m);
        if (r1.ec != std::errc{} || r1.ptr != s.data() + 4) return std::nullopt;
        if (r2.ec != std::errc{} || r2.ptr != s.data() + 7) return std::nullopt;
        if (m < 1 || m > 12) return std::nullopt;
        return YearMonth{y, m};
    }
};

struct MonthlySeries {
    Province province = Province::ON;
    Stream stream = Stream::Total;
    YearMonth start;
    std::vector<double> values;  // hundreds of persons / month, contiguous months

    YearMonth end() const { return start.plus(static_cast<int>(values.size())); }  // one past last
    friend bool operator==(const MonthlySeries&, const MonthlySeries&) = default;
};

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (true) {
        auto comma = line.find(',', pos);
        out.push_back(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return out;
}

inline std::string format_count(double persons) {
    const double rounded = std::round(persons);
    char buf[64];
    if (std::abs(persons - rounded) <= 1e-9 * std::max(1.0, std::abs(persons))) {
        std::snprintf(buf, sizeof buf, "%.0f", rounded);
        return buf;
    }
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, persons);
    return std::string(buf, ptr);
}

}  // namespace detail

/// Shortest decimal text that parses back to the same double.
inline std::string shortest(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

/// Maximum allowed |Total - (Sponsor + Refugee + Economic)| in hundreds of persons.
inline constexpr double kTotalSlack = 0.5;

/// Checks the component-sum identity wherever Total and all three components
/// overlap for a province. Throws ValueError naming the first offending month.
inline void check_total_consistency(const std::vector<MonthlySeries>& series) {
    for (auto p : kProvinces) {
        std::array<const MonthlySeries*, kStreamCount> by_stream{};
        for (const auto& s : series)
            if (s.province == p) by_stream[index_of(s.stream)] = &s;
        if (!by_stream[index_of(Stream::Total)]) continue;
        if (std::any_of(by_stream.begin(), by_stream.begin() + kComponentCount, [](auto* s) { return s == nullptr; }))
            continue;
        const auto* total = by_stream[index_of(Stream::Total)];
        for (std::size_t t = 0; t < total->values.size(); ++t) {
            const YearMonth ym = total->start.plus(static_cast<int>(t));
            double sum = 0.0;
            bool covered = true;
            for (std::size_t c = 0; c < kComponentCount; ++c) {
                const auto* s = by_stream[c];
                const int off = ym.ordinal() - s->start.ordinal();
                if (off < 0 || off >= static_cast<int>(s->values.size())) {
                    covered = false;
                    break;
                }
                sum += s->values[static_cast<std::size_t>(off)];
            }
            if (covered && std::abs(total->values[t] - sum) > kTotalSlack + 1e-9) {
                throw ValueError(std::string(code(p)) + " " + ym.str() + ": Total " +
                                 std::to_string(total->values[t]) + " differs from component sum " +
                                 std::to_string(sum));
            }
        }
    }
}

/// Parses `date,province,stream,count` rows (count in raw persons).
inline std::vector<MonthlySeries> parse_csv(std::istream& in, const std::string& origin = "<csv>") {
    std::string line;
    int lineno = 0;
    auto where = [&] { return origin + ":" + std::to_string(lineno); };

    while (std::getline(in, line)) {
        ++lineno;
        if (!trim(line).empty()) break;
    }
    {
        auto header = detail::split_commas(trim(line));
        const std::array<std::string_view, 4> expected = {"date", "province", "stream", "count"};
        bool ok = header.size() == expected.size();
        for (std::size_t i = 0; ok && i < expected.size(); ++i) ok = lower(trim(header[i])) == expected[i];
        if (!ok) throw ParseError(where() + ": expected header `date,province,stream,count`");
    }

    using Key = std::pair<Province, Stream>;
    std::map<Key, std::map<int, double>> rows;
    while (std::getline(in, line)) {
        ++lineno;
        auto body = trim(line);
        if (body.empty()) continue;
        auto fields = detail::split_commas(body);
        if (fields.size() != 4) throw ParseError(where() + ": expected 4 fields, got " + std::to_string(fields.size()));
        auto ym = YearMonth::parse(fields[0]);
        if (!ym) throw ParseError(where() + ": bad date `" + std::string(fields[0]) + "` (want YYYY-MM)");
        auto prov = parse_province(fields[1]);
        if (!prov) throw ParseError(where() + ": unknown province `" + std::string(trim(fields[1])) + "`");
        auto stream = parse_stream(fields[2]);
        if (!stream) throw ParseError(where() + ": unknown stream `" + std::string(trim(fields[2])) + "`");
        auto count_text = trim(fields[3]);
        double count = 0.0;
        auto [ptr, ec] = std::from_chars(count_text.data(), count_text.data() + count_text.size(), count);
        if (ec != std::errc{} || ptr != count_text.data() + count_text.size() || !std::isfinite(count))
            throw ParseError(where() + ": bad count `" + std::string(count_text) + "`");
        if (count < 0.0) throw ValueError(where() + ": negative count " + std::string(count_text));
        auto& bucket = rows[{*prov, *stream}];
        if (!bucket.emplace(ym->ordinal(), count / 100.0).second)
            throw ParseError(where() + ": duplicate row for " + std::string(code(*prov)) + "/" +
                             std::string(name(*stream)) + " " + ym->str());
    }

    std::vector<MonthlySeries> out;
    for (const auto& [key, months] : rows) {
        MonthlySeries s{key.first, key.second, YearMonth::from_ordinal(months.begin()->first), {}};
        int expected = months.begin()->first;
        for (const auto& [ord, value] : months) {
            if (ord != expected) {
                throw GapError(std::string(code(key.first)) + "/" + std::string(name(key.second)) +
                               " missing month " + YearMonth::from_ordinal(expected).str());
            }
            s.values.push_back(value);
            ++expected;
        }
        out.push_back(std::move(s));
    }
    check_total_consistency(out);
    return out;
}

inline std::vector<MonthlySeries> load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    return parse_csv(in, path);
}

/// Canonical CSV: rows ordered by province, stream, then month.
inline void write_csv(std::ostream& out, std::vector<MonthlySeries> series) {
    std::sort(series.begin(), series.end(), [](const auto& a, const auto& b) {
        return std::tie(a.province, a.stream) < std::tie(b.province, b.stream);
    });
    out << "date,province,stream,count\n";
    for (const auto& s : series) {
        for (std::size_t t = 0; t < s.values.size(); ++t) {
            out << s.start.plus(static_cast<int>(t)).str() << ',' << code(s.province) << ','
                << name(s.stream) << ',' << detail::format_count(s.values[t] * 100.0) << '\n';
        }
    }
}

inline void write_csv(const std::string& path, const std::vector<MonthlySeries>& series) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    write_csv(out, series);
}

inline const MonthlySeries* find_series(const std::vector<MonthlySeries>& data, Province p, Stream s) {
    for (const auto& x : data)
        if (x.province == p && x.stream == s) return &x;
    return nullptr;
}

// ---------------------------------------------------------------------------
// Windowing and scaling

struct WindowSpec {
    int context_years = 5;
    int horizon_months = 12;

    int context_months() const { return context_years * 12; }

    void validate() const {
        if (context_years < 1 || context_years > 9)
            throw ConfigError("context_years must be in 1..9, got " + std::to_string(context_years));
        if (horizon_months < 1) throw ConfigError("horizon_months must be >= 1");
    }
};

struct Window {
    std::vector<double> context;
    std::vector<double> target;
    YearMonth context_start;  // calendar month of context[0]
};

/// Context is the `context_years*12` months ending just before `split`;
/// target is the `horizon_months` months starting at `split`.
inline Window split_window(const MonthlySeries& series, const WindowSpec& spec, YearMonth split) {
    spec.validate();
    const int first = split.ordinal() - spec.context_months() - series.start.ordinal();
    const int last = split.ordinal() + spec.horizon_months - series.start.ordinal();  // exclusive
    const int n = static_cast<int>(series.values.size());
    if (first < 0 || last > n) {
        const auto need_from = YearMonth::from_ordinal(series.start.ordinal() + first);
        const auto need_to = YearMonth::from_ordinal(series.start.ordinal() + last - 1);
        throw RangeError("window needs " + need_from.str() + ".." + need_to.str() + " but " +
                         std::string(code(series.province)) + "/" + std::string(name(series.stream)) +
                         " covers " + series.start.str() + ".." + series.start.plus(n - 1).str());
    }
    Window w;
    w.context_start = series.start.plus(first);
    w.context.assign(series.values.begin() + first, series.values.begin() + (first + spec.context_months()));
    w.target.assign(series.values.begin() + (first + spec.context_months()), series.values.begin() + last);
    return w;
}

struct Standardized {
    std::vector<double> scaled;
    double loc = 0.0;
    double scale = 1.0;

    double inverse(double z) const { return z * scale + loc; }
    double forward(double x) const { return (x - loc) / scale; }
};

inline constexpr double kMinScale = 1e-8;

/// Mean/population-std scaling with the scale floored at 1e-8.
inline Standardized standardize(const std::vector<double>& context) {
    if (context.empty()) throw ValueError("standardize: empty context");
    const double n = static_cast<double>(context.size());
    double mean = 0.0;
    for (double x : context) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : context) var += (x - mean) * (x - mean);
    var /= n;
    Standardized out;
    out.loc = mean;
    out.scale = std::max(std::sqrt(var), kMinScale);
    out.scaled.reserve(context.size());
    for (double x : context) out.scaled.push_back((x - mean) / out.scale);
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Parameters of the additive trend + seasonality + noise generator.
///
/// For province p and component stream s at month t (0-based):
///   x = base[p][s] * (1 + trend_frac*t + amp_frac*sin(2*pi*t/12) + noise_frac*z),  z ~ N(0,1)
/// rounded to whole persons and clipped at zero. Total is the exact sum of
/// the three rounded components.
///
/// Config keys: synth.start, synth.amp_frac, synth.trend_frac, synth.noise_frac,
/// synth.base.<CODE>.<stream> (e.g. synth.base.ON.economic).
struct SynthParams {
    YearMonth start{2015, 1};
    double amp_frac = 0.25;
    double trend_frac = 0.0015;
    double noise_frac = 0.04;
    // Defaults follow the per-province stream means in data/paper-params.snapshot.
    std::array<std::array<double, kComponentCount>, kProvinceCount> base = {{
        {11.20, 3.45, 24.84},  // BC
        {8.50, 8.02, 19.16},   // AB
        {2.60, 2.10, 8.40},    // SK
        {3.40, 3.20, 10.50},   // MB
        {30.00, 21.89, 62.26}, // ON
        {10.40, 4.46, 26.13},  // QC
        {0.30, 0.45, 0.95},    // NL
        {0.85, 1.20, 2.29},    // NB
        {0.20, 0.30, 1.10},    // PE
        {1.20, 1.10, 3.60},    // NS
    }};

    static SynthParams from_config(const Config& cfg) {
        SynthParams p;
        if (cfg.contains("synth.start")) {
            auto ym = YearMonth::parse(cfg.get_string("synth.start", ""));
            if (!ym) throw ConfigError("synth.start must be YYYY-MM");
            p.start = *ym;
        }
        p.amp_frac = cfg.get_double("synth.amp_frac", p.amp_frac);
        p.trend_frac = cfg.get_double("synth.trend_frac", p.trend_frac);
        p.noise_frac = cfg.get_double("synth.noise_frac", p.noise_frac);
        for (auto prov : kProvinces) {
            for (auto s : kComponents) {
                const auto key = "synth.base." + std::string(code(prov)) + "." + lower(name(s));
                auto& b = p.base[index_of(prov)][index_of(s)];
                b = cfg.get_double(key, b);
                if (b < 0.0) throw ConfigError(key + " must be non-negative");
            }
        }
        return p;
    }
};

inline std::vector<MonthlySeries> gen_synthetic(std::uint64_t seed, int months, const SynthParams& params = {}) {
    if (months < 24) throw ConfigError("gen_synthetic needs at least 24 months, got " + std::to_string(months));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<MonthlySeries> out;
    for (auto prov : kProvinces) {
        std::vector<double> total_counts(static_cast<std::size_t>(months), 0.0);
        for (auto s : kComponents) {
            const double base = params.base[index_of(prov)][index_of(s)];
            MonthlySeries series{prov, s, params.start, {}};
            series.values.reserve(static_cast<std::size_t>(months));
            for (int t = 0; t < months; ++t) {
                const double season = std::sin(2.0 * std::numbers::pi * t / 12.0);
                const double x = base * (1.0 + params.trend_frac * t + params.amp_frac * season +
                                         params.noise_frac * normal(rng));
                const double count = std::max(0.0, std::round(x * 100.0));
                total_counts[static_cast<std::size_t>(t)] += count;
                series.values.push_back(count / 100.0);
            }
            out.push_back(std::move(series));
        }
        MonthlySeries total{prov, Stream::Total, params.start, {}};
        for (double c : total_counts) total.values.push_back(c / 100.0);
        out.push_back(std::move(total));
    }
    return out;
}

}  // namespace migcast
