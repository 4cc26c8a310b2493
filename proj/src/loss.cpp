#include "cyborg/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cyborg::loss {

void LossConfig::validate() const {
    require(std::isfinite(alpha) && alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0,1]");
}

nlohmann::json LossConfig::to_json() const {
    return {{"alpha", alpha},
            {"saliency_reduction", to_string(reduction)},
            {"missing_saliency_policy", missing == MissingSaliency::skip_term ? "skip_term" : "error"}};
}

LossConfig LossConfig::from_json(const nlohmann::json& j) {
    LossConfig cfg;
    cfg.alpha = j.value("alpha", cfg.alpha);
    if (j.contains("saliency_reduction")) cfg.reduction = reduction_from_string(j.at("saliency_reduction"));
    if (j.contains("missing_saliency_policy")) {
        const auto p = j.at("missing_saliency_policy").get<std::string>();
        require(p == "skip_term" || p == "error", "unknown missing_saliency_policy '" + p + "'");
        cfg.missing = p == "skip_term" ? MissingSaliency::skip_term : MissingSaliency::error;
    }
    cfg.validate();
    return cfg;
}

Reduction reduction_from_string(const std::string& s) {
    if (s == "mean_over_elements") return Reduction::mean_over_elements;
    if (s == "sum_over_elements") return Reduction::sum_over_elements;
    throw ValidationError("unknown saliency_reduction '" + s + "'");
}

std::string to_string(Reduction r) {
    return r == Reduction::mean_over_elements ? "mean_over_elements" : "sum_over_elements";
}

double neg_log_prob(std::span<const double> logits, int label) {
    require(!logits.empty(), "empty logits");
    require(label >= 0 && label < static_cast<int>(logits.size()), "label out of range");
    const double peak = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - peak);
    return peak + std::log(sum) - logits[label];
}

double saliency_distance(const Grid<double>& model_map, const FloatGrid& human, Reduction reduction) {
    require(model_map.same_shape(human), "human saliency " + std::to_string(human.rows()) + "x" +
                                             std::to_string(human.cols()) + " does not match CAM " +
                                             std::to_string(model_map.rows()) + "x" +
                                             std::to_string(model_map.cols()));
    auto m = model_map.values();
    auto h = human.values();
    double acc = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double d = m[i] - static_cast<double>(h[i]);
        acc += d * d;
    }
    if (reduction == Reduction::mean_over_elements && !m.empty()) acc /= static_cast<double>(m.size());
    return acc;
}

namespace {

void check_sample(const SampleInput& s, const LossConfig& cfg) {
    if (s.human == nullptr) {
        require(cfg.missing == MissingSaliency::skip_term, "sample lacks a human saliency map (policy: error)");
        return;
    }
    require(s.cam != nullptr, "sample with a human map needs a CAM");
}

}  // namespace

BatchLossBreakdown cyborg_loss(std::span<const SampleInput> batch, const LossConfig& cfg) {
    cfg.validate();
    require(!batch.empty(), "empty batch");
    BatchLossBreakdown out;
    out.K = static_cast<int>(batch.size());
    out.per_sample.reserve(batch.size());
    double human_sum = 0.0;
    double ce_sum = 0.0;
    for (const auto& s : batch) {
        check_sample(s, cfg);
        PerSample ps;
        ps.neg_log_prob = neg_log_prob(s.logits, s.label);
        if (s.human != nullptr) {
            ps.has_saliency = true;
            ps.saliency_sq_err = saliency_distance(s.cam->grid, *s.human, cfg.reduction);
            human_sum += ps.saliency_sq_err;
            ++out.K_saliency;
        }
        ce_sum += ps.neg_log_prob;
        out.per_sample.push_back(ps);
    }
    out.ce_term = ce_sum / out.K;
    out.human_term = out.K_saliency > 0 ? human_sum / out.K_saliency : 0.0;
    out.total = (1.0 - cfg.alpha) * out.human_term + cfg.alpha * out.ce_term;
    return out;
}

SampleGradient sample_gradient(const SampleInput& s, const LossConfig& cfg, int K, int K_saliency) {
    check_sample(s, cfg);
    require(K >= 1, "batch size must be positive");
    SampleGradient g;
    // d(-log softmax_y)/dz = softmax - onehot(y)
    const double peak = *std::max_element(s.logits.begin(), s.logits.end());
    double sum = 0.0;
    g.dlogits.resize(s.logits.size());
    for (std::size_t i = 0; i < s.logits.size(); ++i) {
        g.dlogits[i] = std::exp(s.logits[i] - peak);
        sum += g.dlogits[i];
    }
    const double scale = cfg.alpha / K;
    for (std::size_t i = 0; i < s.logits.size(); ++i) {
        g.dlogits[i] = scale * (g.dlogits[i] / sum - (static_cast<int>(i) == s.label ? 1.0 : 0.0));
    }
    if (s.human != nullptr) {
        require(K_saliency >= 1, "saliency denominator must be positive");
        const auto& grid = s.cam->grid;
        require(grid.same_shape(*s.human), "human saliency shape does not match CAM");
        double hscale = 2.0 * (1.0 - cfg.alpha) / K_saliency;
        if (cfg.reduction == Reduction::mean_over_elements) hscale /= static_cast<double>(grid.size());
        g.dgrid = Grid<double>(grid.rows(), grid.cols(), 0.0);
        auto m = grid.values();
        auto h = s.human->values();
        auto d = g.dgrid.values();
        for (std::size_t i = 0; i < m.size(); ++i) d[i] = hscale * (m[i] - static_cast<double>(h[i]));
    }
    return g;
}

}  // namespace cyborg::loss
