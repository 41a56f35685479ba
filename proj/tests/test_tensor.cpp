#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "gradcheck.hpp"
#include "migcast/checkpoint.hpp"
#include "op_cases.hpp"

using namespace migcast;
using ad::Tensor;

TEST(Ops, SoftmaxOfZerosIsUniform) {
    auto s = ad::softmax(Tensor::matrix(1, 3, {0, 0, 0}), 1);
    for (double v : s.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Ops, SoftmaxRowsStochasticAndShiftInvariant) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        auto a = gradcheck::random_tensor({4, 6}, rng, -30.0, 30.0);
        auto s = ad::softmax(a, 1);
        std::vector<double> shifted(a.data().begin(), a.data().end());
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < 6; ++c) shifted[r * 6 + c] += 100.0 * static_cast<double>(r) - 7.0;
        auto s2 = ad::softmax(Tensor::matrix(4, 6, shifted), 1);
        for (std::size_t r = 0; r < 4; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < 6; ++c) {
                sum += s.at(r, c);
                EXPECT_NEAR(s.at(r, c), s2.at(r, c), 1e-12);
            }
            EXPECT_NEAR(sum, 1.0, 1e-9);
        }
    }
    EXPECT_THROW(ad::softmax(Tensor::matrix(2, 2, {0, 0, 0, 0}), 2), ShapeError);
}

TEST(Ops, MatmulIdentity) {
    std::mt19937_64 rng(5);
    auto a = gradcheck::random_tensor({3, 3}, rng);
    auto id = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto p = ad::matmul(id, a);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(p.at(i), a.at(i));
    EXPECT_THROW(ad::matmul(a, Tensor::matrix(2, 2, {1, 2, 3, 4})), ShapeError);
}

TEST(Ops, ShapeErrorNamesOpAndShapes) {
    try {
        ad::add(Tensor::matrix(2, 3, std::vector<double>(6)), Tensor::matrix(3, 2, std::vector<double>(6)));
        FAIL();
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("add"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    }
}

TEST(Ops, LayerNormMoments) {
    std::mt19937_64 rng(6);
    auto a = gradcheck::random_tensor({5, 16}, rng, -10, 10);
    auto y = ad::layer_norm(a);
    for (std::size_t r = 0; r < 5; ++r) {
        double m = 0, v = 0;
        for (std::size_t c = 0; c < 16; ++c) m += y.at(r, c);
        m /= 16;
        for (std::size_t c = 0; c < 16; ++c) v += (y.at(r, c) - m) * (y.at(r, c) - m);
        v /= 16;
        EXPECT_LE(std::abs(m), 1e-7);
        EXPECT_NEAR(v, 1.0, 1e-5);
    }
}

TEST(Ops, ConcatSliceRoundTrip) {
    auto a = Tensor::matrix(2, 2, {1, 2, 3, 4});
    auto b = Tensor::matrix(2, 1, {5, 6});
    auto c = ad::concat({a, b}, 1);
    EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{1, 2, 5, 3, 4, 6}));
    auto s = ad::slice(c, 1, 2, 3);
    EXPECT_EQ(std::vector<double>(s.data().begin(), s.data().end()), (std::vector<double>{5, 6}));
    EXPECT_THROW(ad::slice(c, 1, 2, 4), ShapeError);
}

TEST(Backward, MseHandExample) {
    auto w = Tensor::scalar(1.0, true);
    auto x = Tensor::scalar(2.0);
    auto loss = ad::mse_loss(ad::mul(w, x), Tensor::scalar(0.0));
    ad::backward(loss);
    EXPECT_DOUBLE_EQ(w.grad()[0], 8.0);
}

TEST(Backward, IndependentAndSum) {
    auto p = Tensor::from({3}, {1, 2, 3}, true);
    auto q = Tensor::from({3}, {4, 5, 6}, true);
    ad::backward(ad::sum(q));
    for (double g : p.grad()) EXPECT_EQ(g, 0.0);
    for (double g : q.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, AccumulatesAcrossCalls) {
    auto p = Tensor::from({2}, {1, 2}, true);
    ad::backward(ad::sum(p));
    ad::backward(ad::sum(p));
    for (double g : p.grad()) EXPECT_EQ(g, 2.0);
    p.zero_grad();
    for (double g : p.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, NonScalarLossRejected) {
    auto p = Tensor::from({2}, {1, 2}, true);
    EXPECT_THROW(ad::backward(ad::scale(p, 2.0)), ShapeError);
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
    auto p = Tensor::scalar(3.0, true);
    auto sq = ad::mul(p, p);
    ad::backward(ad::add(sq, sq));  // d/dp 2p^2 = 4p
    EXPECT_DOUBLE_EQ(p.grad()[0], 12.0);
}

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
    auto cases = opcases::all();
    ASSERT_LT(GetParam(), cases.size());
    auto& c = cases[GetParam()];
    auto r = gradcheck::check(c.inputs, c.loss);
    EXPECT_GT(r.checked, 0u);
    EXPECT_LE(r.max_rel, gradcheck::kTolerance) << c.name << ": " << r.worst;
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range<std::size_t>(0, opcases::all().size()),
                         [](const auto& info) { return opcases::all()[info.param].name; });

TEST(Adam, ZeroGradientLeavesParameters) {
    ad::ParameterSet ps{{"w", Tensor::from({2}, {1.5, -2.0}, true)}};
    ad::AdamState st;
    for (int i = 0; i < 10; ++i) ad::adam_step(ps, st);
    EXPECT_EQ(ps["w"].at(0), 1.5);
    EXPECT_EQ(ps["w"].at(1), -2.0);
    EXPECT_EQ(st.step, 10);
}

TEST(Adam, ConstantGradientDescends) {
    ad::ParameterSet ps{{"w", Tensor::from({2}, {0.0, 0.0}, true)}};
    ad::AdamState st;
    for (int i = 0; i < 20; ++i) {
        ad::zero_grad(ps);
        auto g = ps["w"].mutable_grad();
        g[0] = 3.0;
        g[1] = -0.5;
        ad::adam_step(ps, st);
    }
    EXPECT_LT(ps["w"].at(0), 0.0);
    EXPECT_GT(ps["w"].at(1), 0.0);
}

TEST(Adam, QuadraticBowl) {
    ad::ParameterSet ps{{"p", Tensor::scalar(0.0, true)}};
    ad::AdamState st;
    st.learning_rate = 0.01;
    int steps = 0;
    while (steps < 2000 && std::abs(ps["p"].item() - 3.0) >= 0.01) {
        ad::zero_grad(ps);
        auto d = ad::sub(ps["p"], Tensor::scalar(3.0));
        ad::backward(ad::mul(d, d));
        ad::adam_step(ps, st);
        ++steps;
    }
    EXPECT_LT(std::abs(ps["p"].item() - 3.0), 0.01) << "after " << steps << " steps";
}

TEST(Checkpoint, BitExactRoundTrip) {
    std::mt19937_64 rng(8);
    ad::ParameterSet ps;
    ps.emplace("a.weight", gradcheck::random_tensor({3, 4}, rng, -1e3, 1e3));
    ps.emplace("b", Tensor::from({2}, {1.0 / 3.0, -0.0}));
    ps.emplace("c", Tensor::from({1}, {5e-324}));
    std::stringstream io;
    ad::save_parameters(io, ps);
    auto back = ad::load_parameters(io);
    ASSERT_EQ(back.size(), ps.size());
    for (const auto& [name, t] : ps) {
        ASSERT_TRUE(back.count(name));
        EXPECT_EQ(back[name].shape(), t.shape());
        for (std::size_t i = 0; i < t.size(); ++i)
            EXPECT_EQ(std::bit_cast<std::uint64_t>(back[name].at(i)), std::bit_cast<std::uint64_t>(t.at(i)));
    }
}

TEST(Checkpoint, RejectsGarbage) {
    std::stringstream bad("not-a-checkpoint 1\n");
    EXPECT_THROW(ad::load_parameters(bad), ParseError);
    std::stringstream truncated("migcast-checkpoint 1\n1\nw 1 3\n1 2\n");
    EXPECT_THROW(ad::load_parameters(truncated), ParseError);
}
