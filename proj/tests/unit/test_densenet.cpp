#include "oracles.hpp"

#include "fpad/densenet.hpp"
#include "fpad/error.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace fpad;

using oracle::plan_oracle;
using oracle::random_config;

TEST(DenseNetPlan, DefaultAndTinyPlans) {
    const ChannelPlan d = channel_plan(DenseNetConfig{});
    EXPECT_EQ(d.stem, 24u);
    EXPECT_EQ(d.block_exit, (std::vector<std::size_t>{96, 192, 384, 384}));
    EXPECT_EQ(d.transition_out, (std::vector<std::size_t>{48, 96, 192}));
    EXPECT_EQ(d.classifier_in, 384u);

    const ChannelPlan t = channel_plan(tiny_config());
    EXPECT_EQ(t.block_exit, (std::vector<std::size_t>{48, 48}));
    EXPECT_EQ(t.transition_out, (std::vector<std::size_t>{24}));
}

TEST(DenseNetPlan, RecurrenceHoldsOnRandomConfigs) {
    Rng rng(100);
    for (int i = 0; i < 100; ++i) {
        const DenseNetConfig c = random_config(rng);
        const ChannelPlan got = channel_plan(c);
        const ChannelPlan want = plan_oracle(c);
        EXPECT_EQ(got.block_exit, want.block_exit) << config_to_string(c);
        EXPECT_EQ(got.transition_out, want.transition_out) << config_to_string(c);
        EXPECT_EQ(got.classifier_in, want.classifier_in);
    }
}

TEST(DenseNetParams, ClosedFormAgreesWithBuiltModel) {
    Rng rng(101);
    for (int i = 0; i < 25; ++i) {
        DenseNetConfig c = random_config(rng);
        if (count_trainable_params(c) > 400000) continue;
        DenseNet<float> model(c, 1);
        std::size_t recount = 0;
        for (const auto& p : model.params()) recount += p.tensor->size();
        EXPECT_EQ(recount, count_trainable_params(c)) << config_to_string(c);
        EXPECT_EQ(model.param_count(), recount);
    }
}

TEST(DenseNetParams, SingleLayerCounts) {
    Linear<float> fc("fc", 384, 1);
    Conv2d<float> conv("c", 3, 24, 3);
    std::vector<ParamRef<float>> p;
    fc.collect_params(p);
    std::size_t n = 0;
    for (auto& r : p) n += r.tensor->size();
    EXPECT_EQ(n, 385u);
    p.clear();
    conv.collect_params(p);
    EXPECT_EQ(p.at(0).tensor->size(), 648u);
}

TEST(DenseNetParams, GrayscaleDeltaIsStemOnly) {
    Rng rng(102);
    for (int i = 0; i < 100; ++i) {
        DenseNetConfig rgb = random_config(rng);
        rgb.input_channels = 3;
        DenseNetConfig gray = rgb;
        gray.input_channels = 1;
        EXPECT_EQ(count_trainable_params(rgb) - count_trainable_params(gray),
                  rgb.stem_kernel * rgb.stem_kernel * 2 * rgb.stem_filters);
    }
    DenseNetConfig gray;
    gray.input_channels = 1;
    EXPECT_EQ(count_trainable_params(DenseNetConfig{}) - count_trainable_params(gray), 432u);
}

TEST(DenseNetParams, DefaultConfigTotals) {
    // Realized total for the default plan; the closed form is checked against
    // a built model above, so this pins the value for regressions.
    EXPECT_EQ(count_trainable_params(DenseNetConfig{}), 997153u);
    EXPECT_EQ(count_conv_layers(DenseNetConfig{}), 121u);
    DenseNet<float> model(DenseNetConfig{}, 0);
    EXPECT_EQ(model.layer_count(LayerKind::Conv2d) + model.layer_count(LayerKind::Linear), 121u);
    EXPECT_EQ(model.param_count(), 997153u);
}

TEST(DenseNetConfigCheck, RejectsBadConfigs) {
    DenseNetConfig c = tiny_config();
    c.input_size = 3;
    EXPECT_THROW(validate_config(c), ConfigError);
    c = tiny_config();
    c.block_layers.clear();
    EXPECT_THROW(validate_config(c), ConfigError);
    c = tiny_config();
    c.compression = 0.0;
    EXPECT_THROW(validate_config(c), ConfigError);
    c = tiny_config();
    c.stem_kernel = 4;
    EXPECT_THROW(validate_config(c), ConfigError);
    EXPECT_NO_THROW(validate_config(tiny_config()));
}

TEST(DenseNetForward, OutputsAreProbabilitiesAndSampleIndependentInEval) {
    DenseNet<float> model(tiny_config(), 3);
    Rng rng(4);
    Tensor x({2, 3, 32, 32});
    for (std::size_t i = 0; i < 3 * 32 * 32; ++i) x[i] = x[i + 3 * 32 * 32] = static_cast<float>(rng.normal());
    const Tensor p = model.forward(x);
    ASSERT_EQ(p.shape(), (Shape{2}));
    for (float v : p.data()) {
        EXPECT_GT(v, 0.0f);
        EXPECT_LT(v, 1.0f);
    }
    model.set_mode(Mode::Eval);
    const Tensor q = model.forward(x);
    EXPECT_EQ(q[0], q[1]);
    EXPECT_EQ(model.forward(x), q);
}

TEST(DenseNetForward, WrongInputShapeIsShapeError) {
    DenseNet<float> model(tiny_config(), 3);
    EXPECT_THROW(model.forward(Tensor({1, 1, 32, 32})), ShapeError);
}

TEST(DenseNetForward, SeedFixesInitialization) {
    DenseNet<float> a(tiny_config(), 9), b(tiny_config(), 9), c(tiny_config(), 10);
    auto pa = a.params(), pb = b.params(), pc = c.params();
    bool differs = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(*pa[i].tensor, *pb[i].tensor);
        differs = differs || !(*pa[i].tensor == *pc[i].tensor);
    }
    EXPECT_TRUE(differs);
}

TEST(DenseNetBackward, WholeNetworkMatchesFiniteDifferences) {
    DenseNetConfig c;
    c.growth_rate = 3;
    c.block_layers = {2, 1};
    c.stem_filters = 4;
    c.input_channels = 1;
    c.input_size = 6;
    for (bool bottleneck : {true, false}) {
        c.bottleneck = bottleneck;
        for (Mode mode : {Mode::Train, Mode::Eval}) {
            DenseNet<double> model(c, 21);
            Rng rng(22);
            // Non-trivial running stats and affine terms.
            for (auto& b : model.buffers())
                for (auto& v : b.tensor->data())
                    v = b.name.ends_with("running_var") ? rng.uniform(0.5, 2.0) : rng.normal(0.0, 0.2);
            for (auto& p : model.params())
                if (p.name.find(".bn") != std::string::npos || p.name.find("head.bn") != std::string::npos)
                    for (auto& v : p.tensor->data()) v += rng.normal(0.0, 0.1);
            model.set_mode(mode);
            Tensor64 x = oracle::random_tensor(rng, {3, 1, 6, 6});
            const std::vector<double> y{1.0, 0.0, 1.0};
            auto loss = [&] { return bce_with_logits<double>(model.forward_logits(x), y).loss; };

            model.zero_grad();
            const auto lr = bce_with_logits<double>(model.forward_logits(x), y);
            const Tensor64 dx = model.backward_logits(lr.grad);
            std::vector<std::vector<double>> analytic;
            for (auto& p : model.params()) analytic.emplace_back(p.tensor->grad().begin(), p.tensor->grad().end());

            const auto num_x = oracle::numeric_gradient(x.data(), loss);
            EXPECT_LT(oracle::relative_error({dx.data().begin(), dx.data().end()}, num_x), 1e-4);
            auto params = model.params();
            for (std::size_t i = 0; i < params.size(); ++i) {
                const auto num = oracle::numeric_gradient(params[i].tensor->data(), loss);
                EXPECT_LT(oracle::relative_error(analytic[i], num), 1e-4)
                    << params[i].name << (bottleneck ? " bottleneck" : "") << (mode == Mode::Eval ? " eval" : " train");
            }
        }
    }
}

TEST(DenseNetCopy, CopiesAreIndependent) {
    DenseNet<float> a(tiny_config(), 1);
    DenseNet<float> b = a;
    b.params()[0].tensor->data()[0] += 1.0f;
    EXPECT_NE(a.params()[0].tensor->data()[0], b.params()[0].tensor->data()[0]);
}
