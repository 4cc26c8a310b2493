#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "cyborg/model.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cyborg;
using namespace cyborg::model;

using testing::cam_oracle;

TEST_CASE("backbone config geometry") {
    BackboneConfig cfg;
    CHECK(cfg.feature_h() == 14);
    CHECK(cfg.feature_w() == 14);
    CHECK(cfg.feature_maps() == 64);
    CHECK_NOTHROW(cfg.validate());

    BackboneConfig odd = cfg;
    odd.input_h = 30;  // 30 -> 15 -> cannot pool again
    CHECK_THROWS_AS(odd.validate(), ValidationError);

    auto round = BackboneConfig::from_json(cfg.to_json());
    CHECK(round.to_json() == cfg.to_json());
}

TEST_CASE("zero-weight network outputs the head bias") {
    Network<float> net(testing::tiny_config());
    auto& p = net.param("head.bias");
    net.values()[p.offset] = 0.25f;
    net.values()[p.offset + 1] = -1.5f;
    std::vector<float> img(4 * 4 * 2, 0.7f);
    auto out = net.forward(img);
    CHECK(out.logits[0] == 0.25f);
    CHECK(out.logits[1] == -1.5f);
}

TEST_CASE("forward is deterministic and pooled/logits are consistent") {
    std::mt19937_64 rng(3);
    BackboneConfig cfg;
    cfg.input_h = cfg.input_w = 32;
    cfg.blocks = {{4, 3, true}, {8, 3, true}};
    Network<float> net(cfg);
    net.initialize(11);
    auto batch = testing::random_batch(rng, cfg, 1);
    auto a = net.forward(batch.images[0]);
    auto b = net.forward(batch.images[0]);
    CHECK(a.logits == b.logits);
    CHECK(a.features == b.features);
    const std::size_t hw = static_cast<std::size_t>(a.h) * a.w;
    for (int n = 0; n < a.n; ++n) {
        double mean = 0;
        for (std::size_t p = 0; p < hw; ++p) mean += a.features[n * hw + p];
        mean /= hw;
        CHECK(a.pooled[n] == doctest::Approx(mean).epsilon(1e-5));
    }
    auto head = net.head();
    for (int c = 0; c < 2; ++c) {
        double z = head.bias[c];
        for (int n = 0; n < a.n; ++n) z += head.row(c)[n] * a.pooled[n];
        CHECK(a.logits[c] == doctest::Approx(z).epsilon(1e-5));
    }
}

TEST_CASE("pooled value is the mean of a single 2x2 feature map") {
    BackboneConfig cfg;
    cfg.input_h = cfg.input_w = 2;
    cfg.input_c = 1;
    cfg.blocks = {{1, 1, false}};
    Network<double> net(cfg);
    net.values()[net.param("conv0.weight").offset] = 1.0;
    net.values()[net.param("head.weight").offset] = 1.0;  // logit 0 = pooled
    std::vector<float> img = {1.0f, 2.0f, 3.0f, 6.0f};
    auto out = net.forward(img);
    CHECK(out.pooled[0] == doctest::Approx(2.5));  // default input shift of 0.5
    CHECK(out.logits[0] == doctest::Approx(2.5));
    CHECK(out.logits[1] == 0.0);

    cfg.input_shift = 0.0;
    Network<double> plain(cfg);
    std::copy(net.values().begin(), net.values().end(), plain.values().begin());
    CHECK(plain.forward(img).pooled[0] == doctest::Approx(3.0));
}

TEST_CASE("input shape mismatch is rejected") {
    Network<float> net(testing::tiny_config());
    std::vector<float> img(10, 0.0f);
    CHECK_THROWS_AS(net.forward(img), ValidationError);
}

TEST_CASE("cam examples") {
    SUBCASE("weighted sum then scale") {
        std::vector<double> f = {1, 2, 3, 4, 0, 1, 0, 1};
        std::vector<double> w = {1, -1, 0, 0};
        std::vector<double> b = {0, 0};
        HeadView<double> head{w, b, 2, 2};
        auto out = cam<double>(f, 2, 2, 2, head, 0);
        CHECK(out.raw.storage() == std::vector<double>{1, 1, 3, 3});
        CHECK(out.grid.storage() == std::vector<double>{0, 0, 1, 1});
        CHECK(out.raw_min == 1.0);
        CHECK(out.raw_max == 3.0);
    }
    SUBCASE("single map with unit weight is the normalized map") {
        std::vector<double> f = {2, 4, 6, 10};
        std::vector<double> w = {1, 0};
        std::vector<double> b = {0, 0};
        HeadView<double> head{w, b, 2, 1};
        auto out = cam<double>(f, 1, 2, 2, head, 0);
        CHECK(out.grid.storage() == std::vector<double>{0.0, 0.25, 0.5, 1.0});
    }
    SUBCASE("constant maps give an all-zero grid") {
        std::vector<double> f(2 * 9, 0.5);
        std::vector<double> w = {0.3, -2.0, 1.0, 1.0};
        std::vector<double> b = {0, 0};
        HeadView<double> head{w, b, 2, 2};
        auto out = cam<double>(f, 2, 3, 3, head, 0);
        CHECK(out.raw_min == out.raw_max);
        for (double v : out.grid.storage()) CHECK(v == 0.0);
    }
    SUBCASE("bad arguments") {
        std::vector<double> f(8, 0.0), w(4, 0.0), b(2, 0.0);
        HeadView<double> head{w, b, 2, 2};
        CHECK_THROWS_AS(cam<double>(f, 2, 2, 2, head, 2), ValidationError);
        CHECK_THROWS_AS(cam<double>(f, 1, 2, 2, head, 0), ValidationError);
    }
}

TEST_CASE("cam matches the oracle and is invariant to positive affine transforms") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 4);
        const int h = 2 + static_cast<int>(rng() % 4);
        const int w = 2 + static_cast<int>(rng() % 4);
        std::vector<double> f(static_cast<std::size_t>(n) * h * w), row(2 * n), bias(2, 0.0);
        for (auto& v : f) v = u(rng);
        for (auto& v : row) v = u(rng);
        HeadView<double> head{row, bias, 2, n};
        const int c = static_cast<int>(rng() % 2);
        auto out = cam<double>(f, n, h, w, head, c);
        std::vector<double> wrow(row.begin() + c * n, row.begin() + (c + 1) * n);
        CHECK(out.grid == cam_oracle(f, n, h, w, wrow));

        // scaling the features scales the raw map
        const double alpha = 0.1 + std::abs(u(rng));
        std::vector<double> scaled = f;
        for (auto& v : scaled) v *= alpha;
        auto out2 = cam<double>(scaled, n, h, w, head, c);
        for (std::size_t p = 0; p < out.raw.size(); ++p)
            CHECK(out2.raw.storage()[p] == doctest::Approx(alpha * out.raw.storage()[p]).epsilon(1e-12));
        for (std::size_t p = 0; p < out.grid.size(); ++p)
            CHECK(out2.grid.storage()[p] == doctest::Approx(out.grid.storage()[p]).epsilon(1e-9));
    }
}

TEST_CASE("checkpoint round trip is byte-stable") {
    Network<float> net(testing::tiny_config());
    net.initialize(5);
    CheckpointMeta meta{7, 0.75, "abc", {{"seed", 5}}};
    auto dir = std::filesystem::temp_directory_path() / "cyborg_test_ckpt";
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "a.bin", net, meta);
    CheckpointMeta back;
    auto loaded = load_checkpoint(dir / "a.bin", &back);
    CHECK(std::equal(loaded.values().begin(), loaded.values().end(), net.values().begin()));
    CHECK(back.epoch == 7);
    CHECK(back.validation_accuracy == 0.75);
    save_checkpoint(dir / "b.bin", loaded, back);
    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
    std::filesystem::remove_all(dir);
}
