#pragma once

// Variant x context-length evaluation. Each cell trains one model on every
// province's Total windows that end before the final year, forecasts the
// final 12 months per province and averages the metrics with equal weight.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "migcast/metrics.hpp"
#include "migcast/models.hpp"

namespace migcast::eval {

using metrics::MaseDenominator;
using models::Variant;

struct GridConfig {
    int min_years = 1;
    int max_years = 9;
    models::ModelConfig model;
    models::TrainConfig train;
    std::size_t threads = 1;
    std::uint64_t seed = 1;

    static GridConfig from_config(const Config& cfg, std::uint64_t seed) {
        GridConfig g;
        g.seed = seed;
        g.model = models::ModelConfig::from_config(cfg);
        g.train = models::TrainConfig::from_config(cfg, seed);
        g.min_years = static_cast<int>(cfg.get_int("eval.min_years", g.min_years));
        g.max_years = static_cast<int>(cfg.get_int("eval.max_years", g.max_years));
        const long t = cfg.get_int("eval.threads", static_cast<long>(g.threads));
        if (t < 1) throw ConfigError("eval.threads must be >= 1");
        g.threads = static_cast<std::size_t>(t);
        if (g.min_years < 1 || g.max_years > 9 || g.min_years > g.max_years)
            throw ConfigError("eval.min_years..eval.max_years must lie within 1..9");
        return g;
    }
};

struct ProvinceForecast {
    Province province = Province::ON;
    std::vector<double> actual;
    std::vector<double> predicted;
};

struct Cell {
    Variant variant = Variant::Transformer;
    int years = 1;
    std::vector<ProvinceForecast> forecasts;
    std::vector<double> loss_trace;
};

struct Score {
    double mase = std::numeric_limits<double>::quiet_NaN();  // NaN when degenerate
    double smape = 0.0;
    bool degenerate = false;
};

/// Province-averaged metrics of one set of forecasts.
inline Score score(const std::vector<ProvinceForecast>& fs, MaseDenominator mode) {
    Score s;
    double mase_sum = 0.0, smape_sum = 0.0;
    for (const auto& f : fs) {
        smape_sum += metrics::smape(f.actual, f.predicted);
        try {
            mase_sum += metrics::mase(f.actual, f.predicted, mode);
        } catch (const DegenerateDenominator&) {
            s.degenerate = true;
        }
    }
    const auto n = static_cast<double>(fs.size());
    s.smape = smape_sum / n;
    if (!s.degenerate) s.mase = mase_sum / n;
    return s;
}

/// Total series per province; summed from the components when absent.
inline std::vector<MonthlySeries> total_series(const std::vector<MonthlySeries>& data) {
    std::vector<MonthlySeries> out;
    for (auto p : kProvinces) {
        if (const auto* t = find_series(data, p, Stream::Total)) {
            out.push_back(*t);
            continue;
        }
        const MonthlySeries* parts[3] = {find_series(data, p, Stream::Sponsor), find_series(data, p, Stream::Refugee),
                                         find_series(data, p, Stream::Economic)};
        if (!parts[0] && !parts[1] && !parts[2]) continue;
        for (const auto* s : parts)
            if (!s || s->start != parts[0]->start || s->values.size() != parts[0]->values.size())
                throw ValueError("cannot form Total for " + std::string(code(p)) + ": component series misaligned");
        MonthlySeries t{p, Stream::Total, parts[0]->start, std::vector<double>(parts[0]->values.size(), 0.0)};
        for (const auto* s : parts)
            for (std::size_t i = 0; i < s->values.size(); ++i) t.values[i] += s->values[i];
        out.push_back(std::move(t));
    }
    if (out.empty()) throw ValueError("dataset has no province series");
    return out;
}

/// Every complete window; with `hold_out_final`, only those whose target ends
/// before the final `horizon` months.
inline std::vector<Window> training_windows(const std::vector<MonthlySeries>& totals, const WindowSpec& spec,
                                            bool hold_out_final = true) {
    std::vector<Window> out;
    const int ctx = spec.context_months();
    const int reserved = (hold_out_final ? 2 : 1) * spec.horizon_months;
    for (const auto& s : totals) {
        const int n = static_cast<int>(s.values.size());
        for (int split = ctx; split + reserved <= n; ++split)
            out.push_back(split_window(s, spec, s.start.plus(split)));
    }
    return out;
}

inline Window holdout_window(const MonthlySeries& s, const WindowSpec& spec) {
    return split_window(s, spec, s.start.plus(static_cast<int>(s.values.size()) - spec.horizon_months));
}

inline std::uint64_t cell_seed(std::uint64_t seed, Variant v, int years) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(v), static_cast<std::uint32_t>(years)};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

inline Cell run_cell(const std::vector<MonthlySeries>& totals, Variant v, int years, const GridConfig& g) {
    WindowSpec spec{years, static_cast<int>(g.model.horizon)};
    spec.validate();
    const auto windows = training_windows(totals, spec);
    if (windows.empty())
        throw RangeError("data too short for a " + std::to_string(years) + "-year context plus two " +
                         std::to_string(spec.horizon_months) + "-month spans");
    const std::uint64_t seed = cell_seed(g.seed, v, years);
    auto model = models::create_model(v, g.model, static_cast<std::size_t>(spec.context_months()), seed);
    auto tc = g.train;
    tc.seed = seed;
    Cell cell{v, years, {}, models::train(model, windows, tc)};
    for (const auto& s : totals) {
        const auto w = holdout_window(s, spec);
        cell.forecasts.push_back({s.province, w.target, models::forecast(model, w.context, w.context_start)});
    }
    return cell;
}

/// Repeats the last context month (the naive forecast).
inline std::vector<ProvinceForecast> naive_baseline(const std::vector<MonthlySeries>& totals, int horizon) {
    std::vector<ProvinceForecast> out;
    for (const auto& s : totals) {
        const auto n = s.values.size();
        const auto h = static_cast<std::size_t>(horizon);
        if (n < h + 1) throw RangeError("series too short for a naive baseline");
        std::vector<double> actual(s.values.end() - static_cast<std::ptrdiff_t>(h), s.values.end());
        out.push_back({s.province, actual, std::vector<double>(h, s.values[n - h - 1])});
    }
    return out;
}

/// Cells in (variant in table order, years ascending) order. Worker threads
/// take cells from a shared counter; results do not depend on the schedule.
inline std::vector<Cell> eval_grid(const std::vector<MonthlySeries>& data, const GridConfig& g,
                                   const std::function<void(const Cell&)>& on_done = {}) {
    const auto totals = total_series(data);
    struct Job {
        Variant v;
        int years;
    };
    std::vector<Job> jobs;
    for (auto v : models::kVariants)
        for (int y = g.min_years; y <= g.max_years; ++y) jobs.push_back({v, y});
    std::vector<Cell> cells(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    std::atomic<std::size_t> next{0};
    std::mutex report;
    auto worker = [&]() {
        for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
            try {
                cells[i] = run_cell(totals, jobs[i].v, jobs[i].years, g);
                if (on_done) {
                    std::lock_guard lock(report);
                    on_done(cells[i]);
                }
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(g.threads, jobs.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return cells;
}

// ---------------------------------------------------------------------------
// Output

inline void write_grid_csv(std::ostream& out, const std::vector<Cell>& cells, MaseDenominator mode) {
    out << "variant,context_years,mase,smape\n";
    for (const auto& c : cells) {
        const auto s = score(c.forecasts, mode);
        out << models::variant_name(c.variant) << ',' << c.years << ',' << (s.degenerate ? "deg" : shortest(s.mase))
            << ',' << shortest(s.smape) << '\n';
    }
}

inline void write_forecasts_csv(std::ostream& out, const std::vector<Cell>& cells, YearMonth first_target) {
    out << "variant,context_years,province,date,actual,forecast\n";
    for (const auto& c : cells)
        for (const auto& f : c.forecasts)
            for (std::size_t t = 0; t < f.actual.size(); ++t)
                out << models::variant_name(c.variant) << ',' << c.years << ',' << code(f.province) << ','
                    << first_target.plus(static_cast<int>(t)).str() << ',' << shortest(f.actual[t]) << ','
                    << shortest(f.predicted[t]) << '\n';
}

/// Rows = context years, column pairs (MASE, sMAPE) per variant. The single
/// smallest MASE and the single smallest sMAPE in the grid are wrapped in **.
inline void write_grid_table(std::ostream& out, const std::vector<Cell>& cells, MaseDenominator mode) {
    std::vector<Score> scores;
    for (const auto& c : cells) scores.push_back(score(c.forecasts, mode));
    std::size_t best_mase = cells.size(), best_smape = cells.size();
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (!scores[i].degenerate && (best_mase == cells.size() || scores[i].mase < scores[best_mase].mase))
            best_mase = i;
        if (best_smape == cells.size() || scores[i].smape < scores[best_smape].smape) best_smape = i;
    }
    auto fmt = [](double v, bool bold) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", v);
        return bold ? "**" + std::string(buf) + "**" : std::string(buf);
    };
    auto pad = [](const std::string& s, std::size_t w) { return s.size() >= w ? s : std::string(w - s.size(), ' ') + s; };
    constexpr std::size_t w = 12;
    out << "MASE (" << metrics::to_string(mode) << " denominator) and sMAPE by context length\n\n";
    out << pad("Years", 6);
    for (auto v : models::kVariants) out << " | " << pad(std::string(models::variant_name(v)), 2 * w + 1);
    out << "\n" << pad("", 6);
    for (std::size_t k = 0; k < models::kVariants.size(); ++k) out << " | " << pad("MASE", w) << ' ' << pad("sMAPE", w);
    out << "\n" << std::string(6 + models::kVariants.size() * (3 + 2 * w + 1), '-') << "\n";
    std::vector<int> years;
    for (const auto& c : cells)
        if (std::find(years.begin(), years.end(), c.years) == years.end()) years.push_back(c.years);
    std::sort(years.begin(), years.end());
    for (int y : years) {
        out << pad(std::to_string(y), 6);
        for (auto v : models::kVariants) {
            std::string m = "-", s = "-";
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (cells[i].variant != v || cells[i].years != y) continue;
                m = scores[i].degenerate ? "deg" : fmt(scores[i].mase, i == best_mase);
                s = fmt(scores[i].smape, i == best_smape);
            }
            out << " | " << pad(m, w) << ' ' << pad(s, w);
        }
        out << "\n";
    }
}

}  // namespace migcast::eval
