#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "migcast/eval_grid.hpp"
#include "migcast/models.hpp"

using namespace migcast;
using models::Variant;

namespace {

models::ModelConfig tiny(std::size_t layers = 1) {
    models::ModelConfig c;
    c.encoder_layers = layers;
    c.decoder_layers = 1;
    c.model_dim = 8;
    c.heads = 2;
    c.ffn_dim = 8;
    c.decomposition_kernel = 5;
    return c;
}

std::vector<Window> synthetic_windows(int years) {
    const auto totals = eval::total_series(gen_synthetic(3, 72));
    return eval::training_windows(totals, {years, 12});
}

std::string label(const ::testing::TestParamInfo<Variant>& info) {
    return std::string(models::variant_name(info.param));
}

}  // namespace

class ModelVariant : public ::testing::TestWithParam<Variant> {};

TEST_P(ModelVariant, ForecastHasTwelveMonths) {
    for (std::size_t ctx : {12u, 24u, 60u}) {
        auto m = models::create_model(GetParam(), tiny(2), ctx, 1);
        std::vector<double> context(ctx);
        for (std::size_t i = 0; i < ctx; ++i) context[i] = 50.0 + static_cast<double>(i % 12);
        EXPECT_EQ(models::forecast(m, context, {2016, 3}).size(), 12u);
    }
}

TEST_P(ModelVariant, ZeroHeadForecastsContextMean) {
    auto m = models::create_model(GetParam(), tiny(), 24, 2);
    for (auto& v : m.params["head.weight"].mutable_data()) v = 0.0;
    for (auto& v : m.params["head.bias"].mutable_data()) v = 0.0;
    // Autoformer's output also sums projected trend residuals.
    for (auto& [name, t] : m.params)
        if (name.ends_with(".trend.weight"))
            for (auto& v : t.mutable_data()) v = 0.0;
    std::vector<double> context(24);
    double mean = 0.0;
    for (std::size_t i = 0; i < 24; ++i) mean += context[i] = 30.0 + 7.0 * std::sin(static_cast<double>(i));
    mean /= 24.0;
    for (double v : models::forecast(m, context, {2015, 1})) EXPECT_NEAR(v, mean, 1e-9);
}

TEST_P(ModelVariant, WrongContextLengthIsShapeError) {
    auto m = models::create_model(GetParam(), tiny(), 24, 3);
    EXPECT_THROW(models::forecast(m, std::vector<double>(23, 1.0), {2015, 1}), ShapeError);
}

TEST_P(ModelVariant, ZeroEpochsLeaveParameters) {
    auto m = models::create_model(GetParam(), tiny(), 12, 4);
    ad::ParameterSet before;
    for (const auto& [name, t] : m.params) before.emplace(name, t.detach());
    models::TrainConfig tc;
    tc.epochs = 0;
    EXPECT_TRUE(models::train(m, synthetic_windows(1), tc).empty());
    for (const auto& [name, t] : before) {
        const auto& after = m.params.at(name);
        for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(after.at(i), t.at(i)) << name;
    }
}

TEST_P(ModelVariant, TrainingLossDecreasesAndIsDeterministic) {
    const auto windows = synthetic_windows(1);
    models::TrainConfig tc;
    tc.epochs = 6;
    tc.windows_per_epoch = 32;
    tc.seed = 9;
    auto a = models::create_model(GetParam(), tiny(2), 12, 5);
    auto b = models::create_model(GetParam(), tiny(2), 12, 5);
    const auto ta = models::train(a, windows, tc);
    const auto tb = models::train(b, windows, tc);
    ASSERT_EQ(ta.size(), 6u);
    EXPECT_LT(ta.back(), ta.front());
    for (std::size_t i = 0; i < ta.size(); ++i)
        EXPECT_EQ(std::bit_cast<std::uint64_t>(ta[i]), std::bit_cast<std::uint64_t>(tb[i]));
}

TEST_P(ModelVariant, TrainRejectsMismatchedWindows) {
    auto m = models::create_model(GetParam(), tiny(), 24, 6);
    EXPECT_THROW(models::train(m, synthetic_windows(1), {}), ConfigError);
    EXPECT_THROW(models::train(m, {}, {}), ConfigError);
}

TEST_P(ModelVariant, EndToEndGradientMatchesFiniteDifferences) {
    const std::size_t layers = GetParam() == Variant::Informer ? 2 : 1;  // two layers exercise distilling
    auto m = models::create_model(GetParam(), tiny(layers), 24, 7);
    const auto w = synthetic_windows(2).front();
    auto r = gradcheck::check(m.params, [&] { return models::window_loss(m, w); });
    EXPECT_GT(r.checked, 500u);
    EXPECT_LE(r.max_rel, gradcheck::kTolerance) << r.worst;
}

INSTANTIATE_TEST_SUITE_P(AllVariants, ModelVariant,
                         ::testing::Values(Variant::Transformer, Variant::Informer, Variant::Autoformer), label);

TEST(ModelConfig, Validation) {
    auto c = tiny();
    c.heads = 3;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny();
    c.decomposition_kernel = 24;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(models::create_model(Variant::Transformer, tiny(), 1, 1), ConfigError);
}

TEST(ModelConfig, VariantNames) {
    EXPECT_EQ(models::parse_variant("autoformer"), Variant::Autoformer);
    EXPECT_EQ(models::parse_variant("INFORMER"), Variant::Informer);
    EXPECT_FALSE(models::parse_variant("lstm"));
}

TEST(ModelInit, SeededAndBounded) {
    auto a = models::create_model(Variant::Transformer, tiny(), 12, 11);
    auto b = models::create_model(Variant::Transformer, tiny(), 12, 11);
    auto c = models::create_model(Variant::Transformer, tiny(), 12, 12);
    const auto& wa = a.params.at("enc.0.ffn1.weight");
    const double bound = 1.0 / std::sqrt(8.0);
    bool differs = false;
    for (std::size_t i = 0; i < wa.size(); ++i) {
        EXPECT_EQ(wa.at(i), b.params.at("enc.0.ffn1.weight").at(i));
        differs |= wa.at(i) != c.params.at("enc.0.ffn1.weight").at(i);
        EXPECT_LE(std::abs(wa.at(i)), bound);
    }
    EXPECT_TRUE(differs);
}
