#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "gradcheck.hpp"
#include "migcast/fft.hpp"
#include "migcast/layers.hpp"

using namespace migcast;
using ad::Tensor;
using gradcheck::random_tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

double max_abs_diff(const Tensor& a, const Tensor& b) {
    EXPECT_EQ(a.shape(), b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
    return m;
}

std::vector<double> brute_autocorr(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<double> r(n, 0.0);
    for (std::size_t tau = 0; tau < n; ++tau)
        for (std::size_t t = 0; t < n; ++t) r[tau] += x[(t + tau) % n] * x[t];
    const double r0 = r[0];
    for (auto& v : r) v = r0 > 0 ? v / r0 : 0.0;
    return r;
}

nn::MhaWeights identity_mha(std::size_t d) {
    std::vector<double> id(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) id[i * d + i] = 1.0;
    auto I = Tensor::matrix(d, d, id);
    auto z = Tensor::zeros({1, d});
    return {I, z, I, z, I, z, I, z};
}

}  // namespace

TEST(PositionalEncoding, Examples) {
    auto pe = nn::positional_encoding(50, 8);
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(pe.at(0, c), c % 2 == 0 ? 0.0 : 1.0);
    for (double v : pe.data()) {
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_NEAR(pe.at(1, 0), 0.84147, 1e-5);
    EXPECT_DOUBLE_EQ(pe.at(1, 0), std::sin(1.0));
    EXPECT_THROW(nn::positional_encoding(4, 7), ShapeError);
}

TEST(PositionalEncoding, OffsetContinuesTimeline) {
    auto full = nn::positional_encoding(30, 6);
    auto tail = nn::positional_encoding(10, 6, 20);
    for (std::size_t r = 0; r < 10; ++r)
        for (std::size_t c = 0; c < 6; ++c) EXPECT_DOUBLE_EQ(tail.at(r, c), full.at(r + 20, c));
}

TEST(SeasonalPhase, PeriodTwelve) {
    auto f = nn::seasonal_phase_features(36, 5);
    for (std::size_t r = 0; r + 12 < 36; ++r)
        for (std::size_t c = 0; c < nn::kPhaseFeatures; ++c) EXPECT_NEAR(f.at(r, c), f.at(r + 12, c), 1e-12);
}

TEST(Attention, IdenticalKeysAverageValues) {
    auto q = Tensor::matrix(1, 2, {0.3, -0.7});
    auto k = Tensor::matrix(3, 2, {1, 2, 1, 2, 1, 2});
    auto v = Tensor::matrix(3, 2, {1, 10, 2, 20, 6, 60});
    auto out = nn::self_attention(q, k, v);
    EXPECT_NEAR(out.at(0, 0), 3.0, 1e-12);
    EXPECT_NEAR(out.at(0, 1), 30.0, 1e-12);
}

TEST(Attention, CausalFirstRowCopiesFirstValue) {
    std::mt19937_64 rng(1);
    auto q = random_tensor({4, 3}, rng), k = random_tensor({4, 3}, rng), v = random_tensor({4, 2}, rng);
    auto out = nn::self_attention(q, k, v, nn::causal_mask(4, 4));
    EXPECT_EQ(out.at(0, 0), v.at(0, 0));
    EXPECT_EQ(out.at(0, 1), v.at(0, 1));
}

TEST(Attention, TwoByTwoHandCase) {
    auto I = Tensor::matrix(2, 2, {1, 0, 0, 1});
    auto a = nn::scaled_dot_attention(I, I, I);
    const double e = std::exp(1.0 / std::sqrt(2.0));
    const double w0 = e / (e + 1.0), w1 = 1.0 / (e + 1.0);
    EXPECT_NEAR(a.weights.at(0, 0), w0, 1e-15);
    EXPECT_NEAR(a.weights.at(0, 1), w1, 1e-15);
    EXPECT_NEAR(a.weights.at(1, 0), w1, 1e-15);
    EXPECT_NEAR(a.weights.at(1, 1), w0, 1e-15);
    EXPECT_NEAR(a.output.at(0, 0), w0, 1e-15);
    EXPECT_THROW(nn::self_attention(I, Tensor::matrix(2, 3, std::vector<double>(6)), I), ShapeError);
}

TEST(Attention, WeightsRowStochastic) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        auto q = random_tensor({5, 4}, rng, -3, 3), k = random_tensor({7, 4}, rng, -3, 3);
        auto v = random_tensor({7, 2}, rng);
        for (bool masked : {false, true}) {
            auto a = masked ? nn::scaled_dot_attention(q, k, v, nn::causal_mask(5, 7)) : nn::scaled_dot_attention(q, k, v);
            for (std::size_t r = 0; r < 5; ++r) {
                double s = 0;
                for (std::size_t c = 0; c < 7; ++c) s += a.weights.at(r, c);
                EXPECT_NEAR(s, 1.0, 1e-9);
            }
        }
    }
}

TEST(MultiHead, IdentityProjectionsReduceToAttention) {
    std::mt19937_64 rng(3);
    auto x = random_tensor({6, 4}, rng);
    auto out = nn::multi_head_attention(x, x, identity_mha(4), 1);
    EXPECT_LE(max_abs_diff(out, nn::self_attention(x, x, x)), 1e-12);
}

TEST(MultiHead, OutputShapeAndDivisibility) {
    std::mt19937_64 rng(4);
    ad::ParameterSet ps;
    nn::add_attention_params(ps, "a", 8, rng);
    auto w = nn::MhaWeights::from(ps, "a");
    for (std::size_t heads : {1u, 2u, 4u, 8u}) {
        auto x = random_tensor({5, 8}, rng), m = random_tensor({9, 8}, rng);
        EXPECT_EQ(nn::multi_head_attention(x, m, w, heads).shape(), x.shape());
    }
    auto x = random_tensor({5, 8}, rng);
    EXPECT_THROW(nn::multi_head_attention(x, x, w, 3), ShapeError);
}

TEST(MultiHead, HeadPermutationInvariance) {
    std::mt19937_64 rng(5);
    const std::size_t d = 6, heads = 3, dh = 2;
    ad::ParameterSet ps;
    nn::add_attention_params(ps, "a", d, rng);
    auto w = nn::MhaWeights::from(ps, "a");
    const std::vector<std::size_t> perm = {2, 0, 1};  // new head h takes old head perm[h]
    auto permute_cols = [&](const Tensor& t) {
        std::vector<double> v(t.size());
        for (std::size_t r = 0; r < t.rows(); ++r)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t j = 0; j < dh; ++j) v[r * d + h * dh + j] = t.at(r, perm[h] * dh + j);
        return Tensor::matrix(t.rows(), d, v);
    };
    auto permute_rows = [&](const Tensor& t) {
        std::vector<double> v(t.size());
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t j = 0; j < dh; ++j)
                for (std::size_t c = 0; c < d; ++c) v[(h * dh + j) * d + c] = t.at(perm[h] * dh + j, c);
        return Tensor::matrix(d, d, v);
    };
    nn::MhaWeights p{permute_cols(w.wq), permute_cols(w.bq), permute_cols(w.wk), permute_cols(w.bk),
                     permute_cols(w.wv), permute_cols(w.bv), permute_rows(w.wo), w.bo};
    auto x = random_tensor({5, d}, rng), m = random_tensor({8, d}, rng);
    EXPECT_LE(max_abs_diff(nn::multi_head_attention(x, m, w, heads), nn::multi_head_attention(x, m, p, heads)), 1e-12);
}

TEST(ProbSparse, FullBudgetEqualsFullAttention) {
    std::mt19937_64 rng(6);
    for (std::size_t L : {2u, 3u, 5u, 8u}) {
        auto q = random_tensor({L, 4}, rng), k = random_tensor({L + 3, 4}, rng), v = random_tensor({L + 3, 3}, rng);
        const double c = 50.0;  // ceil(50 ln L) >= L for these lengths
        ASSERT_EQ(nn::probsparse_budget(L, c), L);
        EXPECT_LE(max_abs_diff(nn::probsparse_attention(q, k, v, c), nn::self_attention(q, k, v)), 1e-12);
    }
}

TEST(ProbSparse, BudgetArithmetic) {
    EXPECT_EQ(nn::probsparse_budget(64, 5.0), 21u);
    EXPECT_EQ(nn::probsparse_budget(1, 5.0), 1u);
    EXPECT_EQ(nn::probsparse_budget(10, 1.0), 3u);
}

TEST(ProbSparse, UniformQueriesPickLowestIndices) {
    std::mt19937_64 rng(7);
    auto q = Tensor::matrix(10, 2, std::vector<double>(20, 0.5));
    auto k = random_tensor({10, 2}, rng);
    auto chosen = nn::probsparse_select(q, k, 1.0);
    EXPECT_EQ(chosen, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(ProbSparse, LazyQueriesGetMeanOfValues) {
    std::mt19937_64 rng(8);
    auto q = random_tensor({12, 3}, rng), k = random_tensor({12, 3}, rng), v = random_tensor({12, 2}, rng);
    auto chosen = nn::probsparse_select(q, k, 1.0);
    auto out = nn::probsparse_attention(q, k, v, 1.0);
    auto mean = ad::mean_rows(v);
    auto full = nn::self_attention(q, k, v);
    for (std::size_t r = 0; r < 12; ++r) {
        const bool active = std::find(chosen.begin(), chosen.end(), r) != chosen.end();
        for (std::size_t c = 0; c < 2; ++c)
            EXPECT_NEAR(out.at(r, c), active ? full.at(r, c) : mean.at(0, c), 1e-12);
    }
    EXPECT_THROW(nn::probsparse_attention(q, k, v, 0.5), ConfigError);
}

TEST(Distill, PoolingHandCase) {
    auto x = Tensor::matrix(8, 1, {1, 5, 2, 0, 3, 9, 4, 4});
    EXPECT_EQ(values(ad::max_pool_rows(x)), (std::vector<double>{5, 5, 9, 9}));
}

TEST(Distill, LengthsAndConstants) {
    std::mt19937_64 rng(9);
    auto w = random_tensor({3, 3}, rng), b = random_tensor({1, 3}, rng);
    EXPECT_EQ(nn::distill_layer(random_tensor({8, 3}, rng), w, b).rows(), 4u);
    EXPECT_EQ(nn::distill_layer(random_tensor({7, 3}, rng), w, b).rows(), 4u);
    auto c = nn::distill_layer(Tensor::matrix(6, 3, {1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3}), w, b);
    for (std::size_t r = 1; r < c.rows(); ++r)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(c.at(r, j), c.at(0, j));
    EXPECT_THROW(nn::distill_layer(random_tensor({1, 3}, rng), w, b), ShapeError);
}

TEST(Decomposition, ConstantSeries) {
    auto d = nn::series_decomposition(std::vector<double>(30, 4.25), 25);
    for (std::size_t i = 0; i < 30; ++i) {
        EXPECT_NEAR(d.trend[i], 4.25, 1e-12);
        EXPECT_NEAR(d.seasonal[i], 0.0, 1e-12);
    }
    EXPECT_THROW(nn::series_decomposition(std::vector<double>(30, 1.0), 24), ConfigError);
}

TEST(Decomposition, ReconstructionAndLinearity) {
    std::mt19937_64 rng(10);
    std::normal_distribution<double> n(0.0, 5.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x(13 + trial), y(13 + trial), z(13 + trial);
        for (auto& v : x) v = n(rng);
        for (auto& v : y) v = n(rng);
        const double a = 1.7, b = -0.4;
        for (std::size_t i = 0; i < x.size(); ++i) z[i] = a * x[i] + b * y[i];
        const std::size_t kernel = 2 * static_cast<std::size_t>(trial % 6) + 1;
        auto dx = nn::series_decomposition(x, kernel), dy = nn::series_decomposition(y, kernel);
        auto dz = nn::series_decomposition(z, kernel);
        for (std::size_t i = 0; i < x.size(); ++i) {
            EXPECT_LE(std::abs(dx.seasonal[i] + dx.trend[i] - x[i]), 1e-12);
            EXPECT_NEAR(dz.trend[i], a * dx.trend[i] + b * dy.trend[i], 1e-12);
            EXPECT_NEAR(dz.seasonal[i], a * dx.seasonal[i] + b * dy.seasonal[i], 1e-12);
        }
    }
}

TEST(Decomposition, SineHasFlatTrend) {
    std::vector<double> x(60);
    for (std::size_t t = 0; t < x.size(); ++t) x[t] = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 12.0);
    // A 13-wide window spans one full period plus x[t+6] = -x[t].
    auto d13 = nn::series_decomposition(x, 13);
    double peak = 0.0;
    for (std::size_t t = 6; t + 6 < x.size(); ++t) {
        EXPECT_NEAR(d13.trend[t], -x[t] / 13.0, 1e-12) << t;
        peak = std::max(peak, std::abs(d13.trend[t]));
    }
    EXPECT_NEAR(peak, 1.0 / 13.0, 1e-12);
    auto d25 = nn::series_decomposition(x, 25);
    for (std::size_t t = 12; t + 12 < x.size(); ++t) EXPECT_LE(std::abs(d25.trend[t]), 0.05) << t;
}

TEST(Autocorrelation, FftMatchesBruteForce) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 1.0);
    for (std::size_t len = 2; len <= 256; ++len) {
        std::vector<double> x(len);
        for (auto& v : x) v = n(rng);
        auto fast = fft::autocorrelation(x);
        auto slow = brute_autocorr(x);
        double worst = 0.0;
        for (std::size_t i = 0; i < len; ++i) worst = std::max(worst, std::abs(fast[i] - slow[i]));
        EXPECT_LE(worst, 1e-6) << "length " << len;
        EXPECT_NEAR(fast[0], 1.0, 1e-12);
        for (std::size_t i = 1; i < len; ++i) EXPECT_LT(fast[i], fast[0]) << len;
    }
    EXPECT_THROW(fft::autocorrelation(std::vector<double>{1.0}), ShapeError);
}

TEST(Autocorrelation, SinusoidPeaksAtPeriod) {
    std::vector<double> x(48);
    for (std::size_t t = 0; t < 48; ++t) x[t] = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 12.0);
    auto r = fft::autocorrelation(x);
    std::size_t best = 1;
    for (std::size_t lag = 1; lag <= 24; ++lag)
        if (r[lag] > r[best] + 1e-12) best = lag;
    EXPECT_EQ(best, 12u);
}

TEST(Autocorrelation, CrossCorrelationTensorMatchesLoops) {
    std::mt19937_64 rng(12);
    auto q = random_tensor({9, 3}, rng), k = random_tensor({9, 3}, rng);
    auto r = nn::cross_correlation(q, k);
    for (std::size_t tau = 0; tau < 9; ++tau) {
        double s = 0.0;
        for (std::size_t t = 0; t < 9; ++t)
            for (std::size_t c = 0; c < 3; ++c) s += q.at((t + tau) % 9, c) * k.at(t, c);
        EXPECT_NEAR(r.at(tau), s / 27.0, 1e-12);
    }
}

TEST(TimeDelay, TopOneIsPureShift) {
    auto v = Tensor::matrix(5, 1, {1, 2, 3, 4, 5});
    auto s = Tensor::from({5}, {0.1, 0.2, 0.9, 0.3, 0.0});
    EXPECT_EQ(values(nn::time_delay_aggregation(v, s, 1)), (std::vector<double>{3, 4, 5, 1, 2}));
}

TEST(TimeDelay, EqualScoresAverageTwoShifts) {
    auto v = Tensor::matrix(4, 1, {1, 2, 3, 4});
    auto s = Tensor::from({4}, {0.5, 0.5, 0.5, 0.5});  // ties keep lags 0 and 1
    auto out = nn::time_delay_aggregation(v, s, 2);
    EXPECT_EQ(values(out), (std::vector<double>{1.5, 2.5, 3.5, 2.5}));
}

TEST(TimeDelay, HandCaseWeights) {
    auto v = Tensor::matrix(4, 1, {1, 2, 3, 4});
    auto s = Tensor::from({4}, {-5.0, std::log(2.0), std::log(1.0), -5.0});
    auto out = nn::time_delay_aggregation(v, s, 2);
    // 2/3 * [2,3,4,1] + 1/3 * [3,4,1,2]
    const std::vector<double> expect = {7.0 / 3.0, 10.0 / 3.0, 3.0, 4.0 / 3.0};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out.at(i), expect[i], 1e-14);
}

TEST(TimeDelay, TopKBudget) {
    EXPECT_EQ(nn::autocorr_top_k(60, 1.0), 4u);
    EXPECT_EQ(nn::autocorr_top_k(2, 1.0), 1u);
    EXPECT_EQ(nn::autocorr_top_k(12, 1.0), 2u);
}
