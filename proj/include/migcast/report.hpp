#pragma once

// Text/CSV presentation of inference results.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "migcast/causal_net.hpp"
#include "migcast/config.hpp"

namespace migcast::report {

inline constexpr const char* kEvidenceGrammar =
    "evidence grammar:\n"
    "  province=STATE          STATE is a province code or name (e.g. ON, Ontario)\n"
    "  NODE=N(mean,std)        NODE is sponsor | refugee | economic | total, std > 0\n"
    "  values are in hundreds of persons per month";

inline double parse_number(std::string_view s, const std::string& item) {
    s = trim(s);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size())
        throw ConfigError("malformed evidence `" + item + "`\n" + kEvidenceGrammar);
    return v;
}

/// Adds one `node=STATE` or `node=N(mean,std)` item to `ev`.
inline void parse_evidence_item(std::string_view text, bn::Evidence& ev) {
    const std::string item(text);
    auto bad = [&]() { return ConfigError("malformed evidence `" + item + "`\n" + kEvidenceGrammar); };
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) throw bad();
    const auto node = lower(trim(text.substr(0, eq)));
    const auto value = trim(text.substr(eq + 1));
    if (node == "province") {
        auto p = parse_province(value);
        if (!p) throw bad();
        ev.hard(*p);
        return;
    }
    auto stream = parse_stream(node);
    if (!stream) throw bad();
    if (value.size() < 5 || (value[0] != 'N' && value[0] != 'n') || value[1] != '(' || value.back() != ')')
        throw bad();
    const auto inner = value.substr(2, value.size() - 3);
    const auto comma = inner.find(',');
    if (comma == std::string_view::npos) throw bad();
    const double m = parse_number(inner.substr(0, comma), item);
    const double s = parse_number(inner.substr(comma + 1), item);
    if (!(s > 0.0) || !std::isfinite(m) || !std::isfinite(s)) throw bad();
    ev.add({*stream, m, s});
}

inline bn::Evidence parse_evidence(const std::vector<std::string>& items) {
    bn::Evidence ev;
    for (const auto& it : items) parse_evidence_item(it, ev);
    return ev;
}

inline std::string format_number(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    std::string s = buf;
    if (s.starts_with('-') && s.find_first_not_of("0.", 1) == std::string::npos) s.erase(0, 1);
    return s;
}

inline std::string evidence_string(const bn::Evidence& ev) {
    std::vector<std::string> parts;
    if (ev.province) parts.push_back("province=" + std::string(code(*ev.province)));
    for (const auto& f : ev.soft)
        parts.push_back(lower(name(f.node)) + "=N(" + shortest(f.mean) + "," + shortest(f.sd) + ")");
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? " " : "") + parts[i];
    return out.empty() ? "(none)" : out;
}

/// Largest-remainder rounding of probabilities to integer units of 0.01%,
/// so the displayed values always add up to exactly 100.00%.
inline std::vector<long> percent_units(const std::vector<double>& p) {
    constexpr long kTotal = 10000;
    std::vector<long> units(p.size());
    std::vector<double> rem(p.size());
    long used = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double exact = p[i] * kTotal;
        units[i] = static_cast<long>(std::floor(exact));
        rem[i] = exact - static_cast<double>(units[i]);
        used += units[i];
    }
    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rem[a] > rem[b]; });
    for (std::size_t k = 0; used < kTotal && k < order.size(); ++k, ++used) ++units[order[k]];
    return units;
}

inline std::string units_to_percent(long u) {
    return std::to_string(u / 100) + "." + (u % 100 < 10 ? "0" : "") + std::to_string(u % 100) + "%";
}

struct ProvinceRow {
    std::string label;
    double probability = 0.0;
    long units = 0;  // 0.01% units
};

/// Rows sorted by probability (ties by province order). Provinces under
/// `threshold` are folded into one "other" row, omitted only when its mass is
/// exactly zero.
inline std::vector<ProvinceRow> province_rows(const bn::CGNetwork& net, const std::vector<double>& post,
                                              double threshold) {
    std::vector<std::size_t> order(post.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return post[a] > post[b]; });
    std::vector<ProvinceRow> rows;
    double other = 0.0;
    std::size_t folded = 0;
    for (auto i : order) {
        if (post[i] >= threshold) {
            rows.push_back({std::string(full_name(net.states[i].province)) + " (" +
                                std::string(code(net.states[i].province)) + ")",
                            post[i], 0});
        } else {
            other += post[i];
            ++folded;
        }
    }
    if (folded > 0 && other > 0.0) rows.push_back({"other (" + std::to_string(folded) + " provinces)", other, 0});
    std::vector<double> p;
    for (const auto& r : rows) p.push_back(r.probability);
    const auto units = percent_units(p);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].units = units[i];
    return rows;
}

inline void write_province_table(std::ostream& out, const bn::CGNetwork& net, const std::vector<double>& post,
                                 double threshold) {
    out << "Pr(Province | evidence)\n";
    for (const auto& r : province_rows(net, post, threshold)) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "  %-32s %8s\n", r.label.c_str(), units_to_percent(r.units).c_str());
        out << buf;
    }
}

inline void write_province_csv(std::ostream& out, const bn::CGNetwork& net, const std::vector<double>& post) {
    out << "province,probability\n";
    for (std::size_t i = 0; i < post.size(); ++i) out << code(net.states[i].province) << ',' << shortest(post[i]) << '\n';
}

inline void write_mixture(std::ostream& out, Stream node, const bn::GaussianMixture& mix) {
    out << "Pr(" << name(node) << " | evidence): mean " << format_number(mix.mean(), 2) << ", std "
        << format_number(mix.sd(), 2) << ", " << mix.components.size() << " component"
        << (mix.components.size() == 1 ? "" : "s") << "\n";
    out << "  weight     mean      std    state\n";
    for (const auto& c : mix.components) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "  %.4f %8.2f %8.2f    %s%s\n", c.weight, c.mean, c.sd,
                      std::string(code(c.province)).c_str(), c.crisis ? " +crisis" : "");
        out << buf;
    }
}

inline constexpr double kGridHalfWidth = 8.0;
inline constexpr std::size_t kGridPointsPerComponent = 201;

/// Sample points for a mixture density: the union of an evenly spaced
/// +-8 sigma grid around every component.
inline std::vector<double> density_grid(const bn::GaussianMixture& mix) {
    std::vector<double> xs;
    for (const auto& c : mix.components) {
        const double lo = c.mean - kGridHalfWidth * c.sd;
        const double step = 2.0 * kGridHalfWidth * c.sd / static_cast<double>(kGridPointsPerComponent - 1);
        for (std::size_t i = 0; i < kGridPointsPerComponent; ++i) xs.push_back(lo + step * static_cast<double>(i));
    }
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    return xs;
}

inline void write_density_csv(std::ostream& out, const bn::GaussianMixture& mix) {
    out << "x,density\n";
    for (double x : density_grid(mix)) out << shortest(x) << ',' << shortest(mix.density(x)) << '\n';
}

inline double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
    double acc = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) acc += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
    return acc;
}

// Published reference numbers for the canonical what-if queries, shown next
// to computed values and never compared against them.
struct ReferenceNote {
    std::string label;
    double value = 0.0;
};

inline std::vector<ReferenceNote> refugee_case_reference() {
    return {{"Ontario", 56.73}, {"Alberta", 31.24}, {"Quebec", 10.23}};
}

inline std::vector<ReferenceNote> total_case_reference() {
    return {{"Economic", 88.46}, {"Sponsor", 35.06}, {"Refugee", 26.33}};
}

inline bool is_refugee_case(const bn::Evidence& ev) {
    if (ev.province || ev.soft.size() != 1) return false;
    const auto& f = ev.soft[0];
    return f.node == Stream::Refugee && f.mean == 15.0 && f.sd == 2.0;
}

inline bool is_total_case(const bn::Evidence& ev) {
    if (ev.province || ev.soft.size() != 1) return false;
    const auto& f = ev.soft[0];
    return f.node == Stream::Total && f.mean == 150.0 && f.sd == 2.0;
}

}  // namespace migcast::report
