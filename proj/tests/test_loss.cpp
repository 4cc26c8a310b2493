#include <doctest.h>

#include <cmath>
#include <random>

#include "cyborg/loss.hpp"
#include "cyborg/objective.hpp"
#include "fixtures.hpp"

using namespace cyborg;
using namespace cyborg::loss;

namespace {

model::CamOutput cam_from(std::vector<double> values, int rows, int cols) {
    model::CamOutput c;
    c.grid = Grid<double>(rows, cols, std::move(values));
    return c;
}

}  // namespace

TEST_CASE("worked single-sample example") {
    // s_human=[[1,0],[0,0]], s_model=[[0.5,0],[0,0]], p(y)=0.8, alpha=0.5.
    // Logits (ln 0.8, ln 0.2) give p(y=0) = 0.8 exactly up to rounding.
    std::vector<double> logits = {std::log(0.8), std::log(0.2)};
    auto c = cam_from({0.5, 0, 0, 0}, 2, 2);
    FloatGrid human(2, 2, std::vector<float>{1, 0, 0, 0});
    std::vector<SampleInput> batch = {{logits, &c, &human, 0}};
    auto out = cyborg_loss(batch, LossConfig{});
    CHECK(out.human_term == doctest::Approx(0.0625).epsilon(1e-12));
    CHECK(out.ce_term == doctest::Approx(0.22314355131420976).epsilon(1e-12));
    CHECK(out.total == doctest::Approx(0.14282177565710488).epsilon(1e-12));
    CHECK(out.K == 1);

    LossConfig sum_cfg;
    sum_cfg.reduction = Reduction::sum_over_elements;
    CHECK(cyborg_loss(batch, sum_cfg).human_term == doctest::Approx(0.25));
}

TEST_CASE("alpha endpoints and perfect case") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-3, 3);
    std::vector<std::vector<double>> logits(4);
    std::vector<model::CamOutput> cams;
    std::vector<FloatGrid> humans;
    for (int i = 0; i < 4; ++i) {
        logits[i] = {u(rng), u(rng)};
        std::vector<double> g(9);
        for (auto& v : g) v = std::abs(u(rng)) / 3;
        cams.push_back(cam_from(g, 3, 3));
        FloatGrid h(3, 3);
        for (auto& v : h.storage()) v = static_cast<float>(std::abs(u(rng)) / 3);
        humans.push_back(h);
    }
    std::vector<SampleInput> batch;
    double ce = 0;
    for (int i = 0; i < 4; ++i) {
        batch.push_back({logits[i], &cams[i], &humans[i], i % 2});
        ce += neg_log_prob(logits[i], i % 2);
    }
    LossConfig cfg;
    cfg.alpha = 1.0;
    auto one = cyborg_loss(batch, cfg);
    CHECK(one.total == ce / 4);
    cfg.alpha = 0.0;
    auto zero = cyborg_loss(batch, cfg);
    CHECK(zero.total == zero.human_term);

    // affine in alpha
    cfg.alpha = 0.3;
    CHECK(cyborg_loss(batch, cfg).total == doctest::Approx(0.7 * zero.total + 0.3 * one.total).epsilon(1e-12));

    // perfect agreement and confident correct logits
    std::vector<double> sure = {0.0, -1000.0};
    FloatGrid same(3, 3, 0.5f);
    auto exact = cam_from(std::vector<double>(9, 0.5), 3, 3);
    std::vector<SampleInput> perfect = {{sure, &exact, &same, 0}};
    CHECK(cyborg_loss(perfect, LossConfig{}).total == 0.0);
}

TEST_CASE("loss properties") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 1 + static_cast<int>(rng() % 5);
        std::vector<std::vector<double>> logits;
        std::vector<model::CamOutput> cams, swapped_cams;
        std::vector<FloatGrid> humans, swapped_humans;
        for (int i = 0; i < k; ++i) {
            logits.push_back({4 * u(rng) - 2, 4 * u(rng) - 2});
            std::vector<float> a(6), b(6);
            for (auto& v : a) v = static_cast<float>(u(rng));
            for (auto& v : b) v = static_cast<float>(u(rng));
            cams.push_back(cam_from(std::vector<double>(a.begin(), a.end()), 2, 3));
            humans.emplace_back(2, 3, b);
            swapped_cams.push_back(cam_from(std::vector<double>(b.begin(), b.end()), 2, 3));
            swapped_humans.emplace_back(2, 3, a);
        }
        std::vector<SampleInput> batch, swapped, doubled;
        for (int i = 0; i < k; ++i) {
            batch.push_back({logits[i], &cams[i], &humans[i], i % 2});
            swapped.push_back({logits[i], &swapped_cams[i], &swapped_humans[i], i % 2});
        }
        doubled = batch;
        doubled.insert(doubled.end(), batch.begin(), batch.end());
        auto base = cyborg_loss(batch, LossConfig{});
        CHECK(base.human_term >= 0.0);
        CHECK(base.ce_term >= 0.0);
        CHECK(cyborg_loss(swapped, LossConfig{}).human_term == doctest::Approx(base.human_term).epsilon(1e-12));
        CHECK(cyborg_loss(doubled, LossConfig{}).total == doctest::Approx(base.total).epsilon(1e-12));
        CHECK(base.total == doctest::Approx(0.5 * base.human_term + 0.5 * base.ce_term).epsilon(1e-12));
    }
}

TEST_CASE("missing saliency handling") {
    std::vector<double> l = {0.2, -0.1};
    auto c = cam_from({0, 1, 1, 0}, 2, 2);
    FloatGrid h(2, 2, std::vector<float>{0, 1, 0, 0});
    std::vector<SampleInput> batch = {{l, &c, &h, 0}, {l, nullptr, nullptr, 1}};
    auto out = cyborg_loss(batch, LossConfig{});
    CHECK(out.K == 2);
    CHECK(out.K_saliency == 1);
    CHECK(out.human_term == doctest::Approx(0.25));  // one squared error of 1 over 4 cells, one sample

    LossConfig strict;
    strict.missing = MissingSaliency::error;
    CHECK_THROWS_AS(cyborg_loss(batch, strict), ValidationError);
    CHECK_THROWS_AS(cyborg_loss(std::vector<SampleInput>{}, LossConfig{}), ValidationError);

    FloatGrid wrong(3, 3, 0.0f);
    std::vector<SampleInput> bad = {{l, &c, &wrong, 0}};
    CHECK_THROWS_AS(cyborg_loss(bad, LossConfig{}), ValidationError);

    LossConfig bad_alpha;
    bad_alpha.alpha = 1.5;
    CHECK_THROWS_AS(cyborg_loss(batch, bad_alpha), ValidationError);
}

TEST_CASE("gradcheck on the fixture suite") {
    std::mt19937_64 rng(2024);
    const auto configs = testing::gradcheck_configs();
    for (double alpha : {0.0, 0.5, 1.0}) {
        for (std::size_t i = 0; i < configs.size(); ++i) {
            auto fx = testing::smooth_fixture(rng, configs[i], 1 + static_cast<int>(i % 2));
            auto batch = fx.batch.examples();
            LossConfig lc;
            lc.alpha = alpha;
            auto res = loss_gradcheck(fx.net, std::span<const Example>(batch), lc, model::CamClass::true_label, 1e-4);
            INFO("alpha=" << alpha << " config=" << i << " worst=" << res.worst_param << "[" << res.worst_index
                          << "] a=" << res.worst_analytic << " n=" << res.worst_numeric);
            CHECK(res.max_rel_error <= 1e-6);
            if (alpha == 0.0) CHECK(res.max_abs_grad_conv > 0.0);
        }
    }
}

TEST_CASE("gradcheck in single precision") {
    std::mt19937_64 rng(5);
    auto cfg = testing::tiny_config(3, 4, false);
    auto fx = testing::smooth_fixture(rng, cfg, 2, 5e-2);
    model::Network<float> net(cfg);
    std::copy(fx.net.values().begin(), fx.net.values().end(), net.values().begin());
    auto batch = fx.batch.examples();
    auto res = loss_gradcheck(net, std::span<const Example>(batch), LossConfig{}, model::CamClass::true_label, 1e-2,
                              1e-2);
    CHECK(res.max_rel_error <= 1e-3);
}

TEST_CASE("argmax-prediction CAM class also checks out") {
    std::mt19937_64 rng(8);
    auto fx = testing::smooth_fixture(rng, testing::tiny_config(2, 3, false), 2);
    auto batch = fx.batch.examples();
    auto res = loss_gradcheck(fx.net, std::span<const Example>(batch), LossConfig{},
                              model::CamClass::argmax_prediction, 1e-4);
    CHECK(res.max_rel_error <= 1e-6);
}

TEST_CASE("constant features give exactly zero saliency gradient") {
    auto cfg = testing::tiny_config(3, 4, false);
    model::Network<double> net(cfg);
    std::mt19937_64 rng(1);
    testing::randomize(net, rng);
    // zero conv weights, positive bias: every feature map is a constant
    const auto& w = net.param("conv0.weight");
    std::fill_n(net.values().begin() + w.offset, w.count, 0.0);
    const auto& b = net.param("conv0.bias");
    for (std::size_t i = 0; i < b.count; ++i) net.values()[b.offset + i] = 0.3 + 0.1 * i;
    auto fb = testing::random_batch(rng, cfg, 2);
    auto batch = fb.examples();
    LossConfig lc;
    lc.alpha = 0.0;
    auto res = evaluate_batch(net, std::span<const Example>(batch), lc, model::CamClass::true_label, true);
    CHECK(res.loss.human_term > 0.0);
    for (double g : res.grad) CHECK(g == 0.0);
}

TEST_CASE("evaluate_batch is independent of the thread count") {
    std::mt19937_64 rng(4);
    model::BackboneConfig cfg;
    cfg.input_h = cfg.input_w = 16;
    cfg.blocks = {{4, 3, true}, {6, 3, true}};
    model::Network<float> net(cfg);
    net.initialize(3);
    auto fb = testing::random_batch(rng, cfg, 7);
    fb.with_map[2] = false;
    auto batch = fb.examples();
    auto one = evaluate_batch(net, std::span<const Example>(batch), LossConfig{}, model::CamClass::true_label, true, 1);
    auto four = evaluate_batch(net, std::span<const Example>(batch), LossConfig{}, model::CamClass::true_label, true, 4);
    CHECK(one.grad == four.grad);
    CHECK(one.loss.total == four.loss.total);
    CHECK(one.loss.K_saliency == 6);
}
