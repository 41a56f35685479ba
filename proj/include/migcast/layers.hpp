#pragma once

// Building blocks shared by the three forecasters: encodings, attention
// variants, distilling, series decomposition and the auto-correlation
// mechanism. Rows of every matrix are time steps.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "migcast/fft.hpp"
#include "migcast/optim.hpp"
#include "migcast/tensor.hpp"

namespace migcast::nn {

using ad::ParameterSet;
using ad::Tensor;

// ---------------------------------------------------------------------------
// Parameters

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
inline Tensor init_uniform(ad::Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> values(ad::numel(shape));
    for (auto& v : values) v = dist(rng);
    return Tensor::from(std::move(shape), std::move(values), true);
}

inline void add_linear(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t out,
                       std::mt19937_64& rng, bool bias = true) {
    ps.emplace(prefix + ".weight", init_uniform({in, out}, in, rng));
    if (bias) ps.emplace(prefix + ".bias", init_uniform({1, out}, in, rng));
}

inline void add_layer_norm(ParameterSet& ps, const std::string& prefix, std::size_t dim) {
    ps.emplace(prefix + ".gain", Tensor::from({1, dim}, std::vector<double>(dim, 1.0), true));
    ps.emplace(prefix + ".shift", Tensor::zeros({1, dim}, true));
}

inline const Tensor& param(const ParameterSet& ps, const std::string& name) {
    auto it = ps.find(name);
    if (it == ps.end()) throw ConfigError("missing parameter " + name);
    return it->second;
}

inline Tensor linear(const Tensor& x, const ParameterSet& ps, const std::string& prefix) {
    auto y = ad::matmul(x, param(ps, prefix + ".weight"));
    if (auto it = ps.find(prefix + ".bias"); it != ps.end()) y = ad::add(y, it->second);
    return y;
}

inline Tensor affine_layer_norm(const Tensor& x, const ParameterSet& ps, const std::string& prefix) {
    return ad::add(ad::mul(ad::layer_norm(x), param(ps, prefix + ".gain")), param(ps, prefix + ".shift"));
}

// ---------------------------------------------------------------------------
// Encodings

/// Sinusoidal encoding: PE(pos, 2i) = sin(pos / 10000^(2i/dim)), PE(pos, 2i+1) = cos(same).
/// Rows start at absolute position `offset`.
inline Tensor positional_encoding(std::size_t length, std::size_t dim, std::size_t offset = 0) {
    if (length == 0 || dim == 0) throw ShapeError("positional_encoding: length and dim must be >= 1");
    if (dim % 2 != 0) throw ShapeError("positional_encoding: dim must be even, got " + std::to_string(dim));
    std::vector<double> pe(length * dim);
    for (std::size_t r = 0; r < length; ++r) {
        const double pos = static_cast<double>(r + offset);
        for (std::size_t i = 0; i < dim; i += 2) {
            const double freq = std::pow(10000.0, static_cast<double>(i) / static_cast<double>(dim));
            pe[r * dim + i] = std::sin(pos / freq);
            pe[r * dim + i + 1] = std::cos(pos / freq);
        }
    }
    return Tensor::matrix(length, dim, std::move(pe));
}

inline constexpr std::size_t kPhaseHarmonics = 2;
inline constexpr std::size_t kPhaseFeatures = 2 * kPhaseHarmonics;

/// Period-12 harmonics of the month of year; row r is month (offset + r) mod 12, 0 = January.
inline Tensor seasonal_phase_features(std::size_t length, std::size_t offset = 0) {
    std::vector<double> f(length * kPhaseFeatures);
    for (std::size_t r = 0; r < length; ++r) {
        const double phase = 2.0 * std::numbers::pi * static_cast<double>((r + offset) % 12) / 12.0;
        for (std::size_t h = 0; h < kPhaseHarmonics; ++h) {
            f[r * kPhaseFeatures + 2 * h] = std::sin(static_cast<double>(h + 1) * phase);
            f[r * kPhaseFeatures + 2 * h + 1] = std::cos(static_cast<double>(h + 1) * phase);
        }
    }
    return Tensor::matrix(length, kPhaseFeatures, std::move(f));
}

/// -inf where key j lies in the future of query i (keys and queries end aligned).
inline Tensor causal_mask(std::size_t lq, std::size_t lk) {
    std::vector<double> m(lq * lk, 0.0);
    const long shift = static_cast<long>(lk) - static_cast<long>(lq);
    for (std::size_t i = 0; i < lq; ++i)
        for (std::size_t j = 0; j < lk; ++j)
            if (static_cast<long>(j) > static_cast<long>(i) + shift)
                m[i * lk + j] = -std::numeric_limits<double>::infinity();
    return Tensor::matrix(lq, lk, std::move(m));
}

// ---------------------------------------------------------------------------
// Attention

struct Attention {
    Tensor output;
    Tensor weights;  // [Lq x Lk], row-stochastic
};

inline Attention scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                      const std::optional<Tensor>& mask = std::nullopt) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw ShapeError("attention: Q, K, V must be matrices");
    if (q.cols() != k.cols())
        throw ShapeError("attention: Q " + ad::shape_str(q.shape()) + " and K " + ad::shape_str(k.shape()) +
                         " differ in width");
    if (v.rows() != k.rows())
        throw ShapeError("attention: V " + ad::shape_str(v.shape()) + " rows differ from K " +
                         ad::shape_str(k.shape()));
    auto scores = ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.cols())));
    if (mask) scores = ad::add(scores, *mask);
    auto w = ad::softmax(scores, 1);
    return {ad::matmul(w, v), w};
}

/// softmax(Q K^T / sqrt(d) + mask) V
inline Tensor self_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                             const std::optional<Tensor>& mask = std::nullopt) {
    return scaled_dot_attention(q, k, v, mask).output;
}

/// Number of active queries: min(Lq, ceil(c * ln Lq)), at least one.
inline std::size_t probsparse_budget(std::size_t lq, double c) {
    const auto u = static_cast<std::size_t>(std::ceil(c * std::log(static_cast<double>(lq))));
    return std::clamp<std::size_t>(u, 1, lq);
}

/// Indices (ascending) of the queries with the largest max-minus-mean score
/// over the full scaled Q K^T. Equal scores prefer lower indices.
inline std::vector<std::size_t> probsparse_select(const Tensor& q, const Tensor& k, double c) {
    if (q.cols() != k.cols()) throw ShapeError("probsparse: Q and K differ in width");
    const std::size_t lq = q.rows(), lk = k.rows(), d = q.cols();
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> sparsity(lq);
    const auto qd = q.data();
    const auto kd = k.data();
    for (std::size_t i = 0; i < lq; ++i) {
        double mx = -std::numeric_limits<double>::infinity(), sum = 0.0;
        for (std::size_t j = 0; j < lk; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < d; ++t) s += qd[i * d + t] * kd[j * d + t];
            s *= inv;
            mx = std::max(mx, s);
            sum += s;
        }
        sparsity[i] = mx - sum / static_cast<double>(lk);
    }
    std::vector<std::size_t> order(lq);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return sparsity[a] > sparsity[b]; });
    order.resize(probsparse_budget(lq, c));
    std::sort(order.begin(), order.end());
    return order;
}

/// Full attention for the selected queries; every other query receives the mean of V.
inline Tensor probsparse_attention(const Tensor& q, const Tensor& k, const Tensor& v, double c) {
    if (c < 1.0) throw ConfigError("probsparse factor must be >= 1");
    if (v.rows() != k.rows()) throw ShapeError("probsparse: V rows differ from K rows");
    const auto chosen = probsparse_select(q, k, c);
    auto active = self_attention(ad::gather_rows(q, chosen), k, v);
    return ad::assemble_rows(ad::mean_rows(v), active, chosen, q.rows());
}

enum class AttentionKind { Full, ProbSparse };

struct MhaWeights {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;

    static MhaWeights from(const ParameterSet& ps, const std::string& prefix) {
        return {param(ps, prefix + ".q.weight"), param(ps, prefix + ".q.bias"), param(ps, prefix + ".k.weight"),
                param(ps, prefix + ".k.bias"),   param(ps, prefix + ".v.weight"), param(ps, prefix + ".v.bias"),
                param(ps, prefix + ".o.weight"), param(ps, prefix + ".o.bias")};
    }
};

inline void add_attention_params(ParameterSet& ps, const std::string& prefix, std::size_t dim,
                                 std::mt19937_64& rng) {
    for (const char* part : {".q", ".k", ".v", ".o"}) add_linear(ps, prefix + part, dim, dim, rng);
}

/// Projects, splits the width into `heads` equal slices, attends per slice,
/// concatenates and projects back. Output shape equals the query shape.
inline Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const MhaWeights& w, std::size_t heads,
                                   const std::optional<Tensor>& mask = std::nullopt,
                                   AttentionKind kind = AttentionKind::Full, double sparse_factor = 5.0) {
    const std::size_t dim = x_q.cols();
    if (heads == 0 || dim % heads != 0)
        throw ShapeError("multi_head_attention: width " + std::to_string(dim) + " not divisible by " +
                         std::to_string(heads) + " heads");
    auto q = ad::add(ad::matmul(x_q, w.wq), w.bq);
    auto k = ad::add(ad::matmul(x_kv, w.wk), w.bk);
    auto v = ad::add(ad::matmul(x_kv, w.wv), w.bv);
    const std::size_t dh = dim / heads;
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        auto qh = heads == 1 ? q : ad::slice(q, 1, h * dh, (h + 1) * dh);
        auto kh = heads == 1 ? k : ad::slice(k, 1, h * dh, (h + 1) * dh);
        auto vh = heads == 1 ? v : ad::slice(v, 1, h * dh, (h + 1) * dh);
        outs.push_back(kind == AttentionKind::ProbSparse ? probsparse_attention(qh, kh, vh, sparse_factor)
                                                         : self_attention(qh, kh, vh, mask));
    }
    auto merged = heads == 1 ? outs.front() : ad::concat(outs, 1);
    return ad::add(ad::matmul(merged, w.wo), w.bo);
}

// ---------------------------------------------------------------------------
// Distilling

/// ELU(x W + b) followed by width-3 stride-2 max pooling; halves the length (rounding up).
inline Tensor distill_layer(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() != 2 || x.rows() < 2) throw ShapeError("distill_layer: need at least 2 time steps");
    return ad::max_pool_rows(ad::elu(ad::add(ad::matmul(x, weight), bias)));
}

// ---------------------------------------------------------------------------
// Series decomposition

struct Decomposition {
    std::vector<double> seasonal;
    std::vector<double> trend;
};

/// trend = centred moving average with replicated edges; seasonal = x - trend.
inline Decomposition series_decomposition(const std::vector<double>& x, std::size_t kernel) {
    if (kernel % 2 == 0) throw ConfigError("decomposition kernel must be odd, got " + std::to_string(kernel));
    if (x.empty()) throw ShapeError("series_decomposition: empty input");
    auto t = ad::moving_average_rows(Tensor::matrix(x.size(), 1, x), kernel);
    Decomposition d;
    d.trend.assign(t.data().begin(), t.data().end());
    d.seasonal.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) d.seasonal[i] = x[i] - d.trend[i];
    return d;
}

struct TensorDecomposition {
    Tensor seasonal;
    Tensor trend;
};

inline TensorDecomposition decompose(const Tensor& x, std::size_t kernel) {
    auto trend = ad::moving_average_rows(x, kernel);
    return {ad::sub(x, trend), trend};
}

// ---------------------------------------------------------------------------
// Auto-correlation

/// Differentiable lag scores R[tau] = mean over channels and time of
/// Q[(t + tau) mod L, c] * K[t, c]; forward pass by FFT.
inline Tensor cross_correlation(const Tensor& q, const Tensor& k) {
    if (q.rank() != 2 || q.shape() != k.shape())
        throw ShapeError("cross_correlation: Q " + ad::shape_str(q.shape()) + " vs K " + ad::shape_str(k.shape()));
    const std::size_t n = q.rows(), c = q.cols();
    const double norm = 1.0 / static_cast<double>(n * c);
    auto r = fft::circular_cross_correlation(q.data(), k.data(), n, c);
    for (auto& v : r) v *= norm;
    return ad::make_op("cross_correlation", {n}, std::move(r), {q, k}, [n, c, norm](ad::Node& self) {
        auto& pq = *self.parents[0];
        auto& pk = *self.parents[1];
        for (std::size_t tau = 0; tau < n; ++tau) {
            const double g = self.grad[tau] * norm;
            if (g == 0.0) continue;
            for (std::size_t t = 0; t < n; ++t) {
                const std::size_t s = (t + tau) % n;
                for (std::size_t j = 0; j < c; ++j) {
                    if (pq.requires_grad) pq.grad[s * c + j] += g * pk.value[t * c + j];
                    if (pk.requires_grad) pk.grad[t * c + j] += g * pq.value[s * c + j];
                }
            }
        }
    });
}

/// Lags with the k largest scores; ties go to the smaller lag.
inline std::vector<std::size_t> top_lags(std::span<const double> scores, std::size_t k) {
    if (k == 0 || k > scores.size())
        throw ConfigError("top_lags: k=" + std::to_string(k) + " with " + std::to_string(scores.size()) + " lags");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
    order.resize(k);
    return order;
}

/// sum over the top-k lags tau of softmax(selected scores)_tau * roll(V, tau).
inline Tensor time_delay_aggregation(const Tensor& v, const Tensor& scores, std::size_t k) {
    if (scores.size() != v.rows())
        throw ShapeError("time_delay_aggregation: " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(v.rows()) + " steps");
    const auto lags = top_lags(scores.data(), k);
    auto weights = ad::softmax(ad::gather(scores, lags), 0);
    Tensor out;
    for (std::size_t i = 0; i < lags.size(); ++i) {
        auto term = ad::scale_by(ad::roll_rows(v, lags[i]), ad::slice(weights, 0, i, i + 1));
        out = out.defined() ? ad::add(out, term) : term;
    }
    return out;
}

/// Logarithmic lag budget max(1, floor(factor * ln L)).
inline std::size_t autocorr_top_k(std::size_t length, double factor) {
    const auto k = static_cast<long>(std::floor(factor * std::log(static_cast<double>(length))));
    return static_cast<std::size_t>(std::clamp<long>(k, 1, static_cast<long>(length)));
}

/// Auto-correlation block. Keys/values longer than the queries keep their
/// most recent rows; shorter ones are zero-padded at the end.
inline Tensor autocorrelation_attention(const Tensor& x_q, const Tensor& x_kv, const MhaWeights& w,
                                        double factor) {
    auto q = ad::add(ad::matmul(x_q, w.wq), w.bq);
    auto k = ad::add(ad::matmul(x_kv, w.wk), w.bk);
    auto v = ad::add(ad::matmul(x_kv, w.wv), w.bv);
    const std::size_t lq = q.rows(), lk = k.rows();
    if (lk > lq) {
        k = ad::slice(k, 0, lk - lq, lk);
        v = ad::slice(v, 0, lk - lq, lk);
    } else if (lk < lq) {
        auto pad = Tensor::zeros({lq - lk, k.cols()});
        k = ad::concat({k, pad}, 0);
        v = ad::concat({v, pad}, 0);
    }
    auto scores = cross_correlation(q, k);
    auto agg = time_delay_aggregation(v, scores, autocorr_top_k(lq, factor));
    return ad::add(ad::matmul(agg, w.wo), w.bo);
}

}  // namespace migcast::nn
