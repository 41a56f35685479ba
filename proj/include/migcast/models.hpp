#pragma once

// Encoder-decoder forecasters mapping a monthly context window to a
// 12-month forecast: a vanilla Transformer, an Informer variant (ProbSparse
// encoder attention + distilling) and an Autoformer variant (progressive
// series decomposition + auto-correlation).
//
// All three decode in one shot. The decoder input is a start token made of
// the last `label_len` context months followed by `horizon` placeholders;
// the forecast is read from the placeholder rows.

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "migcast/config.hpp"
#include "migcast/layers.hpp"
#include "migcast/series.hpp"

namespace migcast::models {

using ad::ParameterSet;
using ad::Tensor;

enum class Variant { Transformer, Informer, Autoformer };
inline constexpr std::array<Variant, 3> kVariants = {Variant::Autoformer, Variant::Transformer, Variant::Informer};

inline std::string_view variant_name(Variant v) {
    switch (v) {
        case Variant::Transformer: return "Transformer";
        case Variant::Informer: return "Informer";
        case Variant::Autoformer: return "Autoformer";
    }
    return "?";
}

inline std::optional<Variant> parse_variant(std::string_view s) {
    const auto t = lower(s);
    for (auto v : kVariants)
        if (t == lower(variant_name(v))) return v;
    return std::nullopt;
}

struct ModelConfig {
    std::size_t encoder_layers = 4;
    std::size_t decoder_layers = 4;
    std::size_t model_dim = 32;
    std::size_t heads = 4;
    std::size_t ffn_dim = 64;
    double probsparse_factor = 5.0;
    std::size_t decomposition_kernel = 25;
    double autocorr_factor = 1.0;
    std::size_t label_len = 12;
    std::size_t horizon = 12;

    void validate() const {
        if (encoder_layers == 0 || decoder_layers == 0) throw ConfigError("need at least one encoder and decoder layer");
        if (model_dim == 0 || model_dim % 2 != 0) throw ConfigError("model_dim must be positive and even");
        if (heads == 0 || model_dim % heads != 0)
            throw ConfigError("model_dim " + std::to_string(model_dim) + " not divisible by heads " +
                              std::to_string(heads));
        if (decomposition_kernel % 2 == 0) throw ConfigError("decomposition_kernel must be odd");
        if (probsparse_factor < 1.0) throw ConfigError("probsparse_factor must be >= 1");
        if (autocorr_factor <= 0.0) throw ConfigError("autocorr_factor must be > 0");
        if (horizon == 0 || label_len == 0) throw ConfigError("horizon and label_len must be >= 1");
    }

    static ModelConfig from_config(const Config& cfg) {
        ModelConfig m;
        auto size = [&](const char* key, std::size_t fallback) {
            const long v = cfg.get_int(key, static_cast<long>(fallback));
            if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
            return static_cast<std::size_t>(v);
        };
        m.encoder_layers = size("model.encoder_layers", m.encoder_layers);
        m.decoder_layers = size("model.decoder_layers", m.decoder_layers);
        m.model_dim = size("model.model_dim", m.model_dim);
        m.heads = size("model.heads", m.heads);
        m.ffn_dim = size("model.ffn_dim", m.ffn_dim);
        m.probsparse_factor = cfg.get_double("model.probsparse_factor", m.probsparse_factor);
        m.decomposition_kernel = size("model.decomposition_kernel", m.decomposition_kernel);
        m.autocorr_factor = cfg.get_double("model.autocorr_factor", m.autocorr_factor);
        m.validate();
        return m;
    }
};

struct ForecastModel {
    Variant variant = Variant::Transformer;
    ModelConfig config;
    std::size_t context_months = 60;
    ParameterSet params;
};

namespace detail {

inline std::string idx(const char* stem, std::size_t i) { return std::string(stem) + "." + std::to_string(i); }

}  // namespace detail

/// Seeded initialisation; every weight is Uniform(+-1/sqrt(fan_in)).
inline ForecastModel create_model(Variant variant, const ModelConfig& config, std::size_t context_months,
                                  std::uint64_t seed) {
    config.validate();
    if (context_months < 2) throw ConfigError("context must span at least 2 months");
    ForecastModel m{variant, config, context_months, {}};
    std::mt19937_64 rng(seed);
    auto& ps = m.params;
    const std::size_t d = config.model_dim;
    nn::add_linear(ps, "embed.value", 1, d, rng);
    nn::add_linear(ps, "embed.phase", nn::kPhaseFeatures, d, rng, false);
    for (std::size_t i = 0; i < config.encoder_layers; ++i) {
        const auto p = detail::idx("enc", i);
        nn::add_attention_params(ps, p + ".attn", d, rng);
        nn::add_linear(ps, p + ".ffn1", d, config.ffn_dim, rng);
        nn::add_linear(ps, p + ".ffn2", config.ffn_dim, d, rng);
        if (variant != Variant::Autoformer) {
            nn::add_layer_norm(ps, p + ".norm1", d);
            nn::add_layer_norm(ps, p + ".norm2", d);
        }
        if (variant == Variant::Informer && i + 1 < config.encoder_layers)
            nn::add_linear(ps, detail::idx("distill", i), d, d, rng);
    }
    for (std::size_t i = 0; i < config.decoder_layers; ++i) {
        const auto p = detail::idx("dec", i);
        nn::add_attention_params(ps, p + ".self", d, rng);
        nn::add_attention_params(ps, p + ".cross", d, rng);
        nn::add_linear(ps, p + ".ffn1", d, config.ffn_dim, rng);
        nn::add_linear(ps, p + ".ffn2", config.ffn_dim, d, rng);
        if (variant == Variant::Autoformer) {
            nn::add_linear(ps, p + ".trend", d, 1, rng, false);
        } else {
            nn::add_layer_norm(ps, p + ".norm1", d);
            nn::add_layer_norm(ps, p + ".norm2", d);
            nn::add_layer_norm(ps, p + ".norm3", d);
        }
    }
    if (variant == Variant::Autoformer) {
        nn::add_layer_norm(ps, "enc.norm", d);
        nn::add_layer_norm(ps, "dec.norm", d);
    }
    nn::add_linear(ps, "head", d, 1, rng);
    return m;
}

namespace detail {

// `offset` is the row's position within the context timeline; `month0` the
// calendar month (0 = January) of context row 0.
inline Tensor embed(const ForecastModel& m, const Tensor& values, std::size_t offset, std::size_t month0,
                    bool with_position) {
    const auto& ps = m.params;
    auto x = nn::linear(values, ps, "embed.value");
    x = ad::add(x, ad::matmul(nn::seasonal_phase_features(values.rows(), month0 + offset),
                              nn::param(ps, "embed.phase.weight")));
    if (with_position) x = ad::add(x, nn::positional_encoding(values.rows(), m.config.model_dim, offset));
    return x;
}

inline Tensor feed_forward(const Tensor& x, const ParameterSet& ps, const std::string& prefix) {
    return nn::linear(ad::relu(nn::linear(x, ps, prefix + ".ffn1")), ps, prefix + ".ffn2");
}

/// Layer norm followed by removal of the per-channel time mean.
inline Tensor seasonal_norm(const Tensor& x, const ParameterSet& ps, const std::string& prefix) {
    auto h = nn::affine_layer_norm(x, ps, prefix);
    return ad::sub(h, ad::mean_rows(h));
}

inline Tensor column(const std::vector<double>& v) { return Tensor::matrix(v.size(), 1, v); }

// Transformer and Informer share the decoder; they differ in the encoder.
inline Tensor attention_forward(const ForecastModel& m, const std::vector<double>& ctx, std::size_t month0) {
    const auto& cfg = m.config;
    const auto& ps = m.params;
    const std::size_t lc = ctx.size();
    const bool informer = m.variant == Variant::Informer;

    auto enc = embed(m, column(ctx), 0, month0, true);
    for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
        const auto p = idx("enc", i);
        auto attn = nn::multi_head_attention(enc, enc, nn::MhaWeights::from(ps, p + ".attn"), cfg.heads, std::nullopt,
                                             informer ? nn::AttentionKind::ProbSparse : nn::AttentionKind::Full,
                                             cfg.probsparse_factor);
        enc = nn::affine_layer_norm(ad::add(enc, attn), ps, p + ".norm1");
        enc = nn::affine_layer_norm(ad::add(enc, feed_forward(enc, ps, p)), ps, p + ".norm2");
        if (informer && i + 1 < cfg.encoder_layers && enc.rows() >= 2) {
            const auto dp = idx("distill", i);
            enc = nn::distill_layer(enc, nn::param(ps, dp + ".weight"), nn::param(ps, dp + ".bias"));
        }
    }

    const std::size_t label = std::min(cfg.label_len, lc);
    std::vector<double> dec_values(ctx.end() - static_cast<std::ptrdiff_t>(label), ctx.end());
    dec_values.resize(label + cfg.horizon, 0.0);
    const std::size_t offset = lc - label;
    auto dec = embed(m, column(dec_values), offset, month0, true);
    const auto mask = nn::causal_mask(dec.rows(), dec.rows());
    for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
        const auto p = idx("dec", i);
        auto self_attn = nn::multi_head_attention(dec, dec, nn::MhaWeights::from(ps, p + ".self"), cfg.heads, mask);
        dec = nn::affine_layer_norm(ad::add(dec, self_attn), ps, p + ".norm1");
        auto cross = nn::multi_head_attention(dec, enc, nn::MhaWeights::from(ps, p + ".cross"), cfg.heads);
        dec = nn::affine_layer_norm(ad::add(dec, cross), ps, p + ".norm2");
        dec = nn::affine_layer_norm(ad::add(dec, feed_forward(dec, ps, p)), ps, p + ".norm3");
    }
    auto out = nn::linear(dec, ps, "head");
    return ad::slice(out, 0, label, label + cfg.horizon);
}

inline Tensor autoformer_forward(const ForecastModel& m, const std::vector<double>& ctx, std::size_t month0) {
    const auto& cfg = m.config;
    const auto& ps = m.params;
    const std::size_t lc = ctx.size();
    const std::size_t kernel = cfg.decomposition_kernel;

    auto enc = embed(m, column(ctx), 0, month0, false);
    for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
        const auto p = idx("enc", i);
        enc = ad::add(enc, nn::autocorrelation_attention(enc, enc, nn::MhaWeights::from(ps, p + ".attn"),
                                                         cfg.autocorr_factor));
        enc = nn::decompose(enc, kernel).seasonal;
        enc = ad::add(enc, feed_forward(enc, ps, p));
        enc = nn::decompose(enc, kernel).seasonal;
    }
    enc = seasonal_norm(enc, ps, "enc.norm");

    const std::size_t label = std::min(cfg.label_len, lc);
    const auto init = nn::series_decomposition(ctx, kernel);
    double mean = 0.0;
    for (double v : ctx) mean += v;
    mean /= static_cast<double>(lc);
    std::vector<double> seasonal_in(init.seasonal.end() - static_cast<std::ptrdiff_t>(label), init.seasonal.end());
    std::vector<double> trend_in(init.trend.end() - static_cast<std::ptrdiff_t>(label), init.trend.end());
    seasonal_in.resize(label + cfg.horizon, 0.0);
    trend_in.resize(label + cfg.horizon, mean);

    auto dec = embed(m, column(seasonal_in), lc - label, month0, false);
    Tensor trend = column(trend_in);
    for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
        const auto p = idx("dec", i);
        dec = ad::add(dec, nn::autocorrelation_attention(dec, dec, nn::MhaWeights::from(ps, p + ".self"),
                                                         cfg.autocorr_factor));
        auto d1 = nn::decompose(dec, kernel);
        dec = ad::add(d1.seasonal, nn::autocorrelation_attention(d1.seasonal, enc,
                                                                 nn::MhaWeights::from(ps, p + ".cross"),
                                                                 cfg.autocorr_factor));
        auto d2 = nn::decompose(dec, kernel);
        dec = ad::add(d2.seasonal, feed_forward(d2.seasonal, ps, p));
        auto d3 = nn::decompose(dec, kernel);
        dec = d3.seasonal;
        auto residual_trend = ad::add(ad::add(d1.trend, d2.trend), d3.trend);
        trend = ad::add(trend, ad::matmul(residual_trend, nn::param(ps, p + ".trend.weight")));
    }
    auto seasonal_out = nn::linear(seasonal_norm(dec, ps, "dec.norm"), ps, "head");
    auto out = ad::add(trend, seasonal_out);
    return ad::slice(out, 0, label, label + cfg.horizon);
}

}  // namespace detail

/// Forward pass on an already standardised context whose first value falls
/// in `context_start`; returns [horizon x 1] predictions in standardised
/// units, attached to the graph.
inline Tensor forward(const ForecastModel& m, const std::vector<double>& scaled_context, YearMonth context_start) {
    if (scaled_context.size() != m.context_months)
        throw ShapeError("model expects a context of " + std::to_string(m.context_months) + " months, got " +
                         std::to_string(scaled_context.size()));
    const auto month0 = static_cast<std::size_t>(context_start.month - 1);
    return m.variant == Variant::Autoformer ? detail::autoformer_forward(m, scaled_context, month0)
                                            : detail::attention_forward(m, scaled_context, month0);
}

/// Standardises the raw context, runs the model and maps the output back to
/// hundreds of persons per month. Values may be negative.
inline std::vector<double> forecast(const ForecastModel& m, const std::vector<double>& context,
                                    YearMonth context_start) {
    if (context.size() != m.context_months)
        throw ShapeError("model expects a context of " + std::to_string(m.context_months) + " months, got " +
                         std::to_string(context.size()));
    const auto z = standardize(context);
    const auto out = forward(m, z.scaled, context_start);
    std::vector<double> result;
    result.reserve(out.size());
    for (double v : out.data()) result.push_back(z.inverse(v));
    return result;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    std::size_t epochs = 12;
    double learning_rate = 2e-3;
    std::size_t batch_size = 8;
    std::size_t windows_per_epoch = 64;  // 0 = every window each epoch
    std::uint64_t seed = 1;

    static TrainConfig from_config(const Config& cfg, std::uint64_t seed) {
        TrainConfig t;
        t.epochs = static_cast<std::size_t>(cfg.get_int("train.epochs", static_cast<long>(t.epochs)));
        t.learning_rate = cfg.get_double("train.learning_rate", t.learning_rate);
        t.batch_size = static_cast<std::size_t>(cfg.get_int("train.batch_size", static_cast<long>(t.batch_size)));
        t.windows_per_epoch =
            static_cast<std::size_t>(cfg.get_int("train.windows_per_epoch", static_cast<long>(t.windows_per_epoch)));
        t.seed = seed;
        if (t.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
        if (t.learning_rate <= 0.0) throw ConfigError("train.learning_rate must be > 0");
        return t;
    }
};

/// Standardised MSE on a single window (target scaled with the context's loc/scale).
inline Tensor window_loss(const ForecastModel& m, const Window& w) {
    const auto z = standardize(w.context);
    std::vector<double> target;
    target.reserve(w.target.size());
    for (double v : w.target) target.push_back(z.forward(v));
    const std::size_t n = target.size();
    auto pred = forward(m, z.scaled, w.context_start);
    return ad::mse_loss(pred, Tensor::matrix(n, 1, std::move(target)));
}

/// Mini-batch Adam on standardised MSE. Returns the mean training loss of
/// each epoch. Deterministic for a fixed seed.
inline std::vector<double> train(ForecastModel& m, const std::vector<Window>& windows, const TrainConfig& cfg) {
    if (windows.empty()) throw ConfigError("train: empty dataset");
    for (const auto& w : windows) {
        if (w.context.size() != m.context_months || w.target.size() != m.config.horizon)
            throw ConfigError("train: window shape " + std::to_string(w.context.size()) + "+" +
                              std::to_string(w.target.size()) + " does not match model " +
                              std::to_string(m.context_months) + "+" + std::to_string(m.config.horizon));
    }
    ad::AdamState adam;
    adam.learning_rate = cfg.learning_rate;
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(windows.size());
    std::vector<double> trace;
    trace.reserve(cfg.epochs);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        const std::size_t n = cfg.windows_per_epoch == 0 ? order.size() : std::min(cfg.windows_per_epoch, order.size());
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t end = std::min(n, start + cfg.batch_size);
            ad::zero_grad(m.params);
            const double inv = 1.0 / static_cast<double>(end - start);
            for (std::size_t i = start; i < end; ++i) {
                auto loss = window_loss(m, windows[order[i]]);
                epoch_loss += loss.item();
                ad::backward(ad::scale(loss, inv));
            }
            ad::adam_step(m.params, adam);
        }
        trace.push_back(epoch_loss / static_cast<double>(n));
    }
    ad::zero_grad(m.params);
    return trace;
}

}  // namespace migcast::models
