#pragma once

// Central finite-difference check of reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "migcast/optim.hpp"
#include "migcast/tensor.hpp"

namespace gradcheck {

using migcast::ad::ParameterSet;
using migcast::ad::Shape;
using migcast::ad::Tensor;

inline constexpr double kEps = 1e-4;
inline constexpr double kTolerance = 1e-3;
// Gradients smaller than this are compared absolutely.
inline constexpr double kFloor = 1e-6;

struct Result {
    double max_rel = 0.0;
    std::string worst;
    std::size_t checked = 0;
};

inline double rel_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kFloor});
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(migcast::ad::numel(shape));
    for (auto& x : v) x = u(rng);
    return Tensor::from(std::move(shape), std::move(v), true);
}

/// Reduces any tensor to a scalar with fixed random weights, so every output
/// element contributes to the checked gradient.
inline Tensor weighted_sum(const Tensor& t, std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    auto w = random_tensor(t.shape(), rng);
    return migcast::ad::sum(migcast::ad::mul(t, w.detach()));
}

/// `named` pairs a label with each tensor to perturb; `loss` rebuilds the graph.
inline Result check(const std::vector<std::pair<std::string, Tensor>>& named, const std::function<Tensor()>& loss) {
    for (auto [n, t] : named) t.zero_grad();
    migcast::ad::backward(loss());
    Result r;
    for (auto [label, t] : named) {
        const std::vector<double> analytic(t.grad().begin(), t.grad().end());
        auto data = t.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            data[i] = orig + kEps;
            const double up = loss().item();
            data[i] = orig - kEps;
            const double down = loss().item();
            data[i] = orig;
            const double numeric = (up - down) / (2.0 * kEps);
            const double e = rel_error(analytic[i], numeric);
            ++r.checked;
            if (e > r.max_rel) {
                r.max_rel = e;
                r.worst = label + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[i]) +
                          " numeric " + std::to_string(numeric);
            }
        }
    }
    return r;
}

inline Result check(const std::vector<Tensor>& inputs, const std::function<Tensor()>& loss) {
    std::vector<std::pair<std::string, Tensor>> named;
    for (std::size_t i = 0; i < inputs.size(); ++i) named.emplace_back("input" + std::to_string(i), inputs[i]);
    return check(named, loss);
}

inline Result check(ParameterSet& params, const std::function<Tensor()>& loss) {
    std::vector<std::pair<std::string, Tensor>> named(params.begin(), params.end());
    return check(named, loss);
}

}  // namespace gradcheck
