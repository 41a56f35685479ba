#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "migcast/errors.hpp"

namespace migcast::metrics {

/// Scaling term of MASE.
///   AsPrinted:    mean_{t>=2} |y_t - y'_{t-1}|  (actuals against lagged predictions)
///   NaiveActuals: mean_{t>=2} |y_t - y_{t-1}|   (one-step naive forecast of the actuals)
enum class MaseDenominator { AsPrinted, NaiveActuals };

inline std::string_view to_string(MaseDenominator d) {
    return d == MaseDenominator::AsPrinted ? "as-printed" : "naive-actuals";
}

inline MaseDenominator parse_mase_denominator(std::string_view s) {
    if (s == "as-printed") return MaseDenominator::AsPrinted;
    if (s == "naive-actuals") return MaseDenominator::NaiveActuals;
    throw ConfigError("mase_denominator must be `as-printed` or `naive-actuals`, got `" + std::string(s) + "`");
}

inline double mase(const std::vector<double>& y, const std::vector<double>& y_pred,
                   MaseDenominator mode = MaseDenominator::AsPrinted) {
    if (y.size() != y_pred.size())
        throw ValueError("mase: length mismatch " + std::to_string(y.size()) + " vs " + std::to_string(y_pred.size()));
    if (y.size() < 2) throw ValueError("mase: need at least 2 points");
    const std::size_t n = y.size();
    double num = 0.0;
    for (std::size_t t = 0; t < n; ++t) num += std::abs(y[t] - y_pred[t]);
    num /= static_cast<double>(n);
    double den = 0.0;
    for (std::size_t t = 1; t < n; ++t)
        den += std::abs(y[t] - (mode == MaseDenominator::AsPrinted ? y_pred[t - 1] : y[t - 1]));
    den /= static_cast<double>(n - 1);
    if (den == 0.0) throw DegenerateDenominator("mase: naive scaling term is zero");
    return num / den;
}

/// Mean of 2|y - y'| / (|y| + |y'|) as a fraction in [0, 2]; 0/0 terms count as 0.
inline double smape(const std::vector<double>& y, const std::vector<double>& y_pred) {
    if (y.size() != y_pred.size())
        throw ValueError("smape: length mismatch " + std::to_string(y.size()) + " vs " + std::to_string(y_pred.size()));
    if (y.empty()) throw ValueError("smape: empty input");
    double acc = 0.0;
    for (std::size_t t = 0; t < y.size(); ++t) {
        const double den = std::abs(y[t]) + std::abs(y_pred[t]);
        if (den > 0.0) acc += 2.0 * std::abs(y[t] - y_pred[t]) / den;
    }
    return acc / static_cast<double>(y.size());
}

}  // namespace migcast::metrics
