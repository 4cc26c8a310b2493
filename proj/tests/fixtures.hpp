#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "cyborg/grid.hpp"
#include "cyborg/model.hpp"
#include "cyborg/objective.hpp"

namespace cyborg::testing {

/// Tiny network: 4x4x2 input, one 3x3 conv to N feature maps, no pooling.
inline model::BackboneConfig tiny_config(int n = 3, int hw = 4, bool two_blocks = false) {
    model::BackboneConfig cfg;
    cfg.input_h = hw;
    cfg.input_w = hw;
    cfg.input_c = 2;
    if (two_blocks)
        cfg.blocks = {{3, 3, false}, {n, 3, false}};
    else
        cfg.blocks = {{n, 3, false}};
    cfg.classes = 2;
    return cfg;
}

/// Owns the storage that loss::Example spans point into.
struct FixtureBatch {
    std::vector<std::vector<float>> images;
    std::vector<FloatGrid> maps;
    std::vector<int> labels;
    std::vector<bool> with_map;

    std::vector<loss::Example> examples() const {
        std::vector<loss::Example> out;
        for (std::size_t i = 0; i < images.size(); ++i)
            out.push_back({images[i], labels[i], with_map[i] ? &maps[i] : nullptr});
        return out;
    }
};

inline FixtureBatch random_batch(std::mt19937_64& rng, const model::BackboneConfig& cfg, int k,
                                 bool saliency = true) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    FixtureBatch b;
    for (int i = 0; i < k; ++i) {
        std::vector<float> img(static_cast<std::size_t>(cfg.input_h) * cfg.input_w * cfg.input_c);
        for (auto& v : img) v = u(rng);
        b.images.push_back(std::move(img));
        FloatGrid m(cfg.feature_h(), cfg.feature_w());
        for (auto& v : m.storage()) v = u(rng);
        b.maps.push_back(std::move(m));
        b.labels.push_back(static_cast<int>(rng() % 2));
        b.with_map.push_back(saliency);
    }
    return b;
}

/// Distance from the nearest non-differentiable point of the loss: the
/// smallest |ReLU pre-activation| and the smallest gap between a CAM extreme
/// and its runner-up. Finite differences are only meaningful when this is
/// comfortably larger than the stencil's reach.
inline double kink_margin(const model::Network<double>& net, const std::vector<loss::Example>& batch) {
    double margin = 1e300;
    const auto& cfg = net.config();
    for (const auto& ex : batch) {
        auto trace = net.forward_trace(ex.image);
        int cin = cfg.input_c;
        int h = cfg.input_h, w = cfg.input_w;
        for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
            const auto& spec = cfg.blocks[b];
            const auto& wp = net.param("conv" + std::to_string(b) + ".weight");
            const auto& bp = net.param("conv" + std::to_string(b) + ".bias");
            const std::size_t rows = static_cast<std::size_t>(cin) * spec.kernel * spec.kernel;
            const std::size_t hw = static_cast<std::size_t>(h) * w;
            for (int co = 0; co < spec.channels; ++co)
                for (std::size_t p = 0; p < hw; ++p) {
                    double z = net.values()[bp.offset + co];
                    for (std::size_t r = 0; r < rows; ++r)
                        z += net.values()[wp.offset + co * rows + r] * trace.blocks[b].cols[r * hw + p];
                    margin = std::min(margin, std::abs(z));
                }
            cin = spec.channels;
            if (spec.pool) {
                h /= 2;
                w /= 2;
            }
        }
        if (ex.saliency == nullptr) continue;
        auto c = model::cam(std::span<const double>(trace.out.features), trace.out.n, trace.out.h, trace.out.w,
                            net.head(), ex.label);
        std::vector<double> raw = c.raw.storage();
        std::sort(raw.begin(), raw.end());
        if (raw.size() >= 2) margin = std::min({margin, raw[1] - raw[0], raw.back() - raw[raw.size() - 2]});
    }
    return margin;
}

template <typename S>
void randomize(model::Network<S>& net, std::mt19937_64& rng, double scale = 0.5) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& v : net.values()) v = static_cast<S>(u(rng));
}

/// A gradient-check fixture: tiny double-precision network plus batch, redrawn
/// until every kink is at least `min_margin` away.
struct GradFixture {
    model::Network<double> net;
    FixtureBatch batch;
};

inline GradFixture smooth_fixture(std::mt19937_64& rng, const model::BackboneConfig& cfg, int k,
                                  double min_margin = 5e-3) {
    for (;;) {
        GradFixture f{model::Network<double>(cfg), random_batch(rng, cfg, k)};
        randomize(f.net, rng);
        if (kink_margin(f.net, f.batch.examples()) >= min_margin) return f;
    }
}

/// The gradient-check fixture suite: N in 1..4, h = w in 2..4, K in 1..2,
/// one- and two-block backbones.
inline std::vector<model::BackboneConfig> gradcheck_configs() {
    std::vector<model::BackboneConfig> out;
    for (int n = 1; n <= 4; ++n)
        for (int hw = 2; hw <= 4; ++hw)
            for (bool two : {false, true}) out.push_back(tiny_config(n, hw, two));
    return out;
}

}  // namespace cyborg::testing
