#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "migcast/tensor.hpp"

namespace migcast::ad {

using ParameterSet = std::map<std::string, Tensor>;

struct AdamState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step = 0;
    std::map<std::string, std::vector<double>> first_moment;
    std::map<std::string, std::vector<double>> second_moment;
};

/// One bias-corrected Adam update using the gradients currently stored on `params`.
inline void adam_step(ParameterSet& params, AdamState& state) {
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (auto& [name, p] : params) {
        if (!p.requires_grad()) continue;
        auto& m = state.first_moment[name];
        auto& v = state.second_moment[name];
        if (m.size() != p.size()) {
            m.assign(p.size(), 0.0);
            v.assign(p.size(), 0.0);
        }
        auto g = p.grad();
        auto w = p.mutable_data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            w[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

inline void zero_grad(ParameterSet& params) {
    for (auto& [name, p] : params) p.zero_grad();
}

}  // namespace migcast::ad
